"""Mutual-information saliency per scale, max-rule fusion and the full pipeline.

Mode names follow ``<u|t|v>hmt<k>``: universal, trained scalar or vector
model; ``k = 0`` fuses all scales, ``k = 1..5`` selects one block size from
32x32 down to 2x2 pixels, ``k = 6`` is the emission-only (pseudo-DIS) map.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .hmt import ScalarHmtParams, VectorHmtParams, em_train_scalar, em_train_vector, universal_params
from .image_io import crop_map, pad_to_dyadic, to_luminance
from .inference import block_loglik, level_priors, ml_label, pyramid_forests, upward_sweep
from .labeltree import _posterior_centre, map_cascade
from .wavelet import BANDS, WaveletPyramid, dwt2_haar

MODELS = {"u": "universal", "t": "trained", "v": "vector"}
_MODE_RE = re.compile(r"^([utv])hmt([0-6])$")


@dataclass(frozen=True)
class ModeConfig:
    model: str = "universal"
    scale: int = 0

    def __post_init__(self):
        if self.model not in MODELS.values():
            raise ValueError(f"unknown model {self.model!r}")
        if not 0 <= self.scale <= 6:
            raise ValueError(f"scale selector must be in 0..6, got {self.scale}")

    @classmethod
    def parse(cls, text: str) -> "ModeConfig":
        m = _MODE_RE.match(text.strip().lower())
        if not m:
            raise ValueError(f"invalid mode {text!r}; expected e.g. uhmt0, thmt3, vhmt5")
        return cls(MODELS[m.group(1)], int(m.group(2)))

    @property
    def name(self) -> str:
        return f"{self.model[0]}hmt{self.scale}"


def class_entropy(p_centre) -> float:
    """Binary entropy (nats) of a class pmf given P(c = 1)."""
    p = float(p_centre)
    return float(-sum(q * np.log(q) for q in (p, 1.0 - p) if q > 0))


def block_mi(post, h_c: float):
    """``H(C) + sum_c P(c|d) log P(c|d)``, clamped at 0; ``post`` is P(c = 1)."""
    post = np.asarray(post, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(post > 0, post * np.log(post), 0.0)
        q = 1.0 - post
        qlogq = np.where(q > 0, q * np.log(q), 0.0)
    return np.maximum(h_c + plogp + qlogq, 0.0)


def saliency_at_scale(grid: np.ndarray, j: int) -> np.ndarray:
    """Paint each level-j value over its ``2^j x 2^j`` pixel block."""
    size = 1 << j
    return np.repeat(np.repeat(np.asarray(grid, dtype=np.float64), size, axis=0), size, axis=1)


def fuse_max(maps) -> np.ndarray:
    maps = [np.asarray(m, dtype=np.float64) for m in maps]
    if any(m.shape != maps[0].shape for m in maps):
        raise ValueError("maps must share dimensions")
    return np.maximum.reduce(maps)


def normalize_map(smap: np.ndarray) -> np.ndarray:
    """Affine rescale to [0, 1]; constant maps become 0.5 everywhere."""
    smap = np.asarray(smap, dtype=np.float64)
    lo, hi = smap.min(), smap.max()
    if hi <= lo:
        return np.full(smap.shape, 0.5)
    return (smap - lo) / (hi - lo)


@dataclass
class ScaleSaliency:
    """Everything the pipeline derives for one image and one model."""

    side: int
    depth: int
    grids: dict[int, np.ndarray] = field(default_factory=dict)  # level -> I grid
    entropies: dict[int, float] = field(default_factory=dict)
    posteriors: dict[int, np.ndarray] = field(default_factory=dict)
    labels: dict[int, np.ndarray] = field(default_factory=dict)
    pseudo_dis: np.ndarray | None = None
    params: object = None
    em_loglik: float | None = None

    def level_for(self, selector: int) -> int:
        return self.depth + 1 - selector

    def pixel_map(self, selector: int) -> np.ndarray:
        """Unnormalised pixel map for a scale selector (0 fuse, 1..depth, 6)."""
        if selector == 0:
            return fuse_max(saliency_at_scale(self.grids[j], j) for j in range(1, self.depth + 1))
        if selector == 6:
            return saliency_at_scale(self.pseudo_dis, 1)
        if not 1 <= selector <= self.depth:
            raise ValueError(f"selector {selector} needs depth >= {selector}")
        j = self.level_for(selector)
        return saliency_at_scale(self.grids[j], j)


def _root_class_prior(params) -> np.ndarray:
    if isinstance(params, dict):
        p = np.mean([level_priors(params[b])[-1] for b in BANDS], axis=0)
    else:
        p = level_priors(params)[-1]
    return p / p.sum()


def _finest_prior(params) -> np.ndarray:
    if isinstance(params, dict):
        p = np.mean([level_priors(params[b])[0] for b in BANDS], axis=0)
    else:
        p = level_priors(params)[0]
    return p / p.sum()


def pseudo_dis(pyr: WaveletPyramid, params) -> tuple[np.ndarray, np.ndarray, float]:
    """Emission-only saliency on the finest coefficient grid.

    ``params`` is a VectorHmtParams or a band -> ScalarHmtParams mapping
    (a single ScalarHmtParams is shared by all bands). Returns the MI grid,
    the P(c = 1) grid and the class entropy used.
    """
    if isinstance(params, ScalarHmtParams):
        params = {b: params for b in BANDS}
    if isinstance(params, VectorHmtParams):
        ll = np.moveaxis(params.log_emission(1, pyr.vector(1)), -1, 0)
    else:
        ll = sum(np.moveaxis(params[b].log_emission(1, pyr.band(1, b)), -1, 0) for b in BANDS)
    prior = _finest_prior(params)
    with np.errstate(divide="ignore"):
        lp = np.log(prior)[:, None, None]
    post = _posterior_centre(ll, lp)
    h = class_entropy(np.mean(ml_label(ll)))
    return block_mi(post, h), post, h


def fit_models(pyr: WaveletPyramid, model: str, params=None, max_iter: int = 50, tol: float = 1e-5):
    """Parameters for a pyramid: band -> ScalarHmtParams, or VectorHmtParams.

    A supplied ``params`` is used as-is for universal/fixed runs and as the EM
    initialisation for trained/vector runs. Returns ``(params, loglik)``.
    """
    depth = pyr.depth
    if model == "universal":
        p = params if params is not None else universal_params(depth, side=pyr.side)
        return {b: p for b in BANDS}, None
    forests = pyramid_forests(pyr, vector=(model == "vector"))
    if model == "trained":
        out, ll = {}, 0.0
        for b in BANDS:
            res = em_train_scalar(forests[b], init=params, max_iter=max_iter, tol=tol)
            out[b] = res.params
            ll += res.loglik
        return out, ll
    if model == "vector":
        res = em_train_vector(forests, init=params, max_iter=max_iter, tol=tol)
        return res.params, res.loglik
    raise ValueError(f"unknown model {model!r}")


def analyse(
    lum: np.ndarray,
    model: str = "universal",
    depth: int = 5,
    params=None,
    max_iter: int = 50,
    tol: float = 1e-5,
    with_pseudo_dis: bool = True,
) -> ScaleSaliency:
    """Run wavelet -> HMT -> cascade -> MI on a dyadic luminance square."""
    pyr = dwt2_haar(lum, depth)
    fitted, ll = fit_models(pyr, model, params, max_iter, tol)
    forests = pyramid_forests(pyr, vector=(model == "vector"))
    if isinstance(fitted, dict):
        bts = {b: upward_sweep(forests[b], fitted[b]) for b in BANDS}
    else:
        bts = upward_sweep(forests, fitted)
    logliks = [block_loglik(bts, j) for j in range(1, depth + 1)]
    casc = map_cascade(logliks, _root_class_prior(fitted))
    out = ScaleSaliency(side=lum.shape[0], depth=depth, params=fitted, em_loglik=ll)
    for j in range(1, depth + 1):
        h = class_entropy(casc.labels[j - 1].mean())
        out.entropies[j] = h
        out.labels[j] = casc.labels[j - 1]
        out.posteriors[j] = casc.posteriors[j - 1]
        out.grids[j] = block_mi(casc.posteriors[j - 1], h)
    if with_pseudo_dis:
        out.pseudo_dis, _, _ = pseudo_dis(pyr, fitted)
    return out


def prepare(img: np.ndarray, min_side: int = 64):
    lum = to_luminance(img) if np.asarray(img).ndim == 3 else np.asarray(img, dtype=np.float64)
    return pad_to_dyadic(lum, min_side)


def compute_saliency_maps(img, model: str = "universal", selectors=range(7), depth: int = 5, **kw) -> dict[int, np.ndarray]:
    """Normalised, cropped maps for several scale selectors from one model fit."""
    padded, win = prepare(img, max(64, 1 << depth))
    selectors = list(selectors)
    res = analyse(padded, model, depth, with_pseudo_dis=6 in selectors, **kw)
    return {s: normalize_map(crop_map(res.pixel_map(s), win)) for s in selectors}


def compute_saliency(img, cfg: ModeConfig | str, depth: int = 5, **kw) -> np.ndarray:
    """Saliency map in [0, 1] with the input's dimensions.

    ``img`` is an RGB raster or a luminance matrix. Extra keywords go to
    :func:`analyse` (``params``, ``max_iter``, ``tol``).
    """
    if isinstance(cfg, str):
        cfg = ModeConfig.parse(cfg)
    return compute_saliency_maps(img, cfg.model, [cfg.scale], depth, **kw)[cfg.scale]
