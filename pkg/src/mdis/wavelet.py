"""Orthonormal 2-D Haar pyramid and quad-tree navigation.

Levels are counted from the finest (j = 1, one coefficient per 2x2 pixel
block) to the coarsest (j = depth). For a 2x2 block ``[[a, b], [c, d]]``::

    LL = (a + b + c + d) / 2
    LH = (a + b - c - d) / 2    # top minus bottom (horizontal edges)
    HL = (a - b + c - d) / 2    # left minus right (vertical edges)
    HH = (a - b - c + d) / 2
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

BANDS = ("LH", "HL", "HH")
_WAV_MAGIC = b"MDISWAV1"


@dataclass(frozen=True)
class WaveletPyramid:
    """Detail bands per level plus the residual LL at the coarsest level.

    ``details[j - 1][b]`` is the level-j matrix for band ``b``.
    """

    details: tuple[dict[str, np.ndarray], ...]
    ll: np.ndarray

    @property
    def depth(self) -> int:
        return len(self.details)

    @property
    def side(self) -> int:
        return self.ll.shape[0] << self.depth

    def band(self, j: int, b: str) -> np.ndarray:
        return self.details[j - 1][b]

    def level_shape(self, j: int) -> tuple[int, int]:
        return self.details[j - 1]["LH"].shape

    def vector(self, j: int) -> np.ndarray:
        """Level-j coefficients stacked as ``(rows, cols, 3)`` in LH, HL, HH order."""
        return np.stack([self.details[j - 1][b] for b in BANDS], axis=-1)


def _analysis(x: np.ndarray):
    a = x[0::2, 0::2]
    b = x[0::2, 1::2]
    c = x[1::2, 0::2]
    d = x[1::2, 1::2]
    ll = (a + b + c + d) * 0.5
    lh = (a + b - c - d) * 0.5
    hl = (a - b + c - d) * 0.5
    hh = (a - b - c + d) * 0.5
    return ll, {"LH": lh, "HL": hl, "HH": hh}


def dwt2_haar(img: np.ndarray, depth: int = 5) -> WaveletPyramid:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise ValueError(f"expected a square image, got shape {img.shape}")
    side = img.shape[0]
    if side & (side - 1):
        raise ValueError(f"image side {side} is not a power of two")
    if depth < 1 or (1 << depth) > side:
        raise ValueError(f"depth {depth} too large for side {side}")
    details = []
    cur = img
    for _ in range(depth):
        cur, det = _analysis(cur)
        details.append(det)
    return WaveletPyramid(tuple(details), cur)


def idwt2_haar(pyr: WaveletPyramid) -> np.ndarray:
    cur = np.asarray(pyr.ll, dtype=np.float64)
    for j in range(pyr.depth, 0, -1):
        det = pyr.details[j - 1]
        lh, hl, hh = det["LH"], det["HL"], det["HH"]
        if not (cur.shape == lh.shape == hl.shape == hh.shape):
            raise ValueError(f"inconsistent band shapes at level {j}")
        out = np.empty((2 * cur.shape[0], 2 * cur.shape[1]))
        out[0::2, 0::2] = (cur + lh + hl + hh) * 0.5
        out[0::2, 1::2] = (cur + lh - hl - hh) * 0.5
        out[1::2, 0::2] = (cur - lh + hl - hh) * 0.5
        out[1::2, 1::2] = (cur - lh - hl + hh) * 0.5
        cur = out
    return cur


class NodeIndex(NamedTuple):
    level: int
    pos: tuple[int, int]
    band: str = "LH"


def parent(n: NodeIndex, depth: int = 5) -> NodeIndex:
    if n.level >= depth:
        raise ValueError(f"node {n} is at the root level {depth}")
    r, c = n.pos
    return NodeIndex(n.level + 1, (r // 2, c // 2), n.band)


def children(n: NodeIndex) -> list[NodeIndex]:
    if n.level <= 1:
        raise ValueError(f"node {n} is a leaf")
    r, c = n.pos
    return [NodeIndex(n.level - 1, (2 * r + dr, 2 * c + dc), n.band) for dr in (0, 1) for dc in (0, 1)]


def block_of(n: NodeIndex) -> tuple[slice, slice]:
    """Pixel rectangle ``(rows, cols)`` covered by a node; bands share blocks."""
    size = 1 << n.level
    r, c = n.pos
    return slice(size * r, size * (r + 1)), slice(size * c, size * (c + 1))


def dump_pyramid(pyr: WaveletPyramid, path) -> None:
    """Debug dump: 16-byte header then float32 LH, HL, HH per level, then LL."""
    with open(path, "wb") as fh:
        fh.write(_WAV_MAGIC + struct.pack("<II", pyr.depth, pyr.side))
        for det in pyr.details:
            for b in BANDS:
                fh.write(np.ascontiguousarray(det[b], dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(pyr.ll, dtype="<f4").tobytes())


def load_pyramid(path) -> WaveletPyramid:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != _WAV_MAGIC:
        raise ValueError(f"{path}: bad magic")
    depth, side = struct.unpack("<II", raw[8:16])
    data = np.frombuffer(raw[16:], dtype="<f4").astype(np.float64)
    off = 0
    details = []
    for j in range(1, depth + 1):
        n = side >> j
        det = {}
        for b in BANDS:
            det[b] = data[off : off + n * n].reshape(n, n)
            off += n * n
        details.append(det)
    n = side >> depth
    ll = data[off : off + n * n].reshape(n, n)
    return WaveletPyramid(tuple(details), ll)
