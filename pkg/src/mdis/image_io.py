"""Image loading, luminance conversion and dyadic padding."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

__all__ = [
    "ImageLoadError",
    "ImageNotFoundError",
    "UnsupportedImageFormatError",
    "CorruptImageError",
    "CropWindow",
    "load_image",
    "to_luminance",
    "pad_to_dyadic",
    "crop_map",
    "save_map_png",
    "save_map_float",
    "load_map_float",
]

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_PNM_MAGICS = (b"P6", b"P5", b"P3", b"P2")
_MAP_MAGIC = b"MDISMAP1"

BT601 = np.array([0.299, 0.587, 0.114])


class ImageLoadError(Exception):
    """Base class for image loading failures."""


class ImageNotFoundError(ImageLoadError, FileNotFoundError):
    pass


class UnsupportedImageFormatError(ImageLoadError):
    pass


class CorruptImageError(ImageLoadError):
    pass


@dataclass(frozen=True)
class CropWindow:
    """Extent of the original image inside a padded square."""

    x0: int
    y0: int
    w: int
    h: int


def load_image(path) -> np.ndarray:
    """Decode a PNG or PPM file into an ``(H, W, 3)`` uint8 RGB array.

    Grayscale inputs are replicated to three channels and alpha is dropped.
    """
    path = Path(path)
    if not path.is_file():
        raise ImageNotFoundError(f"no such image: {path}")
    with open(path, "rb") as fh:
        head = fh.read(8)
    known = head.startswith(_PNG_MAGIC) or head[:2] in _PNM_MAGICS
    if not known:
        raise UnsupportedImageFormatError(f"{path}: not a PNG or PPM file")
    try:
        with Image.open(path) as img:
            img.load()
            if img.format not in ("PNG", "PPM"):
                raise UnsupportedImageFormatError(f"{path}: format {img.format}")
            rgb = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise CorruptImageError(f"{path}: {exc}") from exc
    return rgb


def to_luminance(img: np.ndarray) -> np.ndarray:
    """BT.601 luma of an 8-bit RGB raster, scaled to [0, 1]."""
    img = np.asarray(img)
    if img.ndim == 2:
        return np.clip(img.astype(np.float64) / 255.0, 0.0, 1.0)
    lum = img[..., :3].astype(np.float64) @ BT601 / 255.0
    return np.clip(lum, 0.0, 1.0)


def _next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def pad_to_dyadic(lum: np.ndarray, min_side: int = 64) -> tuple[np.ndarray, CropWindow]:
    """Pad a luminance matrix to a ``2^J`` square by edge reflection.

    The original content stays at offset (0, 0). Reflection repeats the edge
    row/column (``numpy`` "symmetric" mode), and is applied repeatedly when the
    padding is wider than the image itself.
    """
    lum = np.asarray(lum, dtype=np.float64)
    if lum.ndim != 2 or lum.size == 0:
        raise ValueError("pad_to_dyadic needs a non-empty 2-D array")
    if min_side < 1 or min_side & (min_side - 1):
        raise ValueError(f"min_side must be a power of two, got {min_side}")
    h, w = lum.shape
    side = _next_pow2(max(h, w, min_side))
    out = lum
    # symmetric padding can only extend by the current size per call
    while out.shape != (side, side):
        ph = min(side - out.shape[0], out.shape[0])
        pw = min(side - out.shape[1], out.shape[1])
        out = np.pad(out, ((0, ph), (0, pw)), mode="symmetric")
    return out, CropWindow(0, 0, w, h)


def crop_map(smap: np.ndarray, win: CropWindow) -> np.ndarray:
    smap = np.asarray(smap)
    if win.x0 < 0 or win.y0 < 0 or win.y0 + win.h > smap.shape[0] or win.x0 + win.w > smap.shape[1]:
        raise ValueError(f"crop window {win} exceeds map of shape {smap.shape}")
    return smap[win.y0 : win.y0 + win.h, win.x0 : win.x0 + win.w].copy()


def save_map_png(smap: np.ndarray, path) -> None:
    """Write a [0, 1] map as a 16-bit grayscale PNG (value = round(65535 s))."""
    vals = np.round(np.clip(smap, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(vals).save(path, format="PNG")


def save_map_float(smap: np.ndarray, path) -> None:
    """Raw float32 dump: ``MDISMAP1``, width, height (uint32 LE), row-major data."""
    smap = np.asarray(smap, dtype="<f4")
    h, w = smap.shape
    with open(path, "wb") as fh:
        fh.write(_MAP_MAGIC + struct.pack("<II", w, h))
        fh.write(np.ascontiguousarray(smap).tobytes())


def load_map_float(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != _MAP_MAGIC:
        raise ValueError(f"{path}: bad magic")
    w, h = struct.unpack("<II", raw[8:16])
    return np.frombuffer(raw[16:], dtype="<f4").reshape(h, w).astype(np.float64)
