"""Upward-sweep likelihoods for every dyadic block of an image."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hmt import ScalarHmtParams, VectorHmtParams
from .tree import Forest, upward
from .wavelet import BANDS, NodeIndex, WaveletPyramid

SURROUND, CENTRE = 0, 1


@dataclass(frozen=True)
class BetaTree:
    """Conditional subtree likelihoods ``beta_i(m)`` for one forest.

    ``beta[j-1]`` holds per-node values rescaled so the larger state equals 1;
    ``log_scale[j-1]`` is the per-node log factor that undoes the rescaling.
    ``logb`` keeps the exact logarithms when the sweep provides them (a
    rescaled state can underflow to 0 when it is far below the other).
    """

    forest: Forest
    beta: tuple[np.ndarray, ...]
    log_scale: tuple[np.ndarray, ...]
    logb: tuple[np.ndarray, ...] | None = None

    @property
    def depth(self) -> int:
        return self.forest.depth

    def log_beta(self, j: int) -> np.ndarray:
        if self.logb is not None:
            return self.logb[j - 1]
        with np.errstate(divide="ignore"):
            return np.log(self.beta[j - 1]) + self.log_scale[j - 1][:, None]

    def log_beta_grid(self, j: int) -> np.ndarray:
        """Level-j log betas as a ``(2, R, C)`` array (state axis first)."""
        return np.moveaxis(self.forest.grid(j, self.log_beta(j)), -1, 0)


def _emissions(forest: Forest, params) -> list[np.ndarray]:
    return [params.log_emission(j, forest.values[j - 1]) for j in range(1, forest.depth + 1)]


def upward_sweep(coeffs, params: ScalarHmtParams | VectorHmtParams) -> BetaTree:
    """Run the upward recursion over a forest (or per-level grids, finest first)."""
    forest = coeffs if isinstance(coeffs, Forest) else Forest.from_grids(coeffs)
    if params.levels < forest.depth:
        raise ValueError(f"params cover {params.levels} levels, tree has {forest.depth}")
    vector = isinstance(params, VectorHmtParams)
    for v in forest.values:
        if (v.ndim == 2) != vector:
            raise ValueError("tree data and parameter kind disagree (scalar vs vector)")
    sweep = upward(forest, _emissions(forest, params), params.A)
    return BetaTree(forest, sweep.beta, sweep.log_scale, sweep.logb)


def level_priors(params: ScalarHmtParams | VectorHmtParams) -> np.ndarray:
    """Marginal state pmf per level, ``(levels, 2)``, propagated from the root."""
    J = params.levels
    pri = np.empty((J, 2))
    pri[J - 1] = params.p1
    for idx in range(J - 2, -1, -1):
        p = pri[idx + 1] @ params.A[idx]
        pri[idx] = p / p.sum()
    return pri


def _node_offset(bt: BetaTree, n: NodeIndex) -> int:
    if bt.forest.shapes is None:
        raise ValueError("tree has no grid layout")
    rows, cols = bt.forest.shapes[n.level - 1]
    r, c = n.pos
    if not (0 <= r < rows and 0 <= c < cols):
        raise IndexError(f"node {n} outside level grid {rows}x{cols}")
    return r * cols + c


def subtree_likelihood(bt: BetaTree, n: NodeIndex, pri: np.ndarray) -> float:
    """``log f(T_n) = log sum_m beta_n(m) p(S_n = m)``."""
    k = _node_offset(bt, n)
    with np.errstate(divide="ignore"):
        terms = bt.log_beta(n.level)[k] + np.log(pri[n.level - 1])
    return float(np.logaddexp(terms[0], terms[1]))


def block_loglik(bts, j: int) -> np.ndarray:
    """Class-conditional block log-likelihoods at level j, ``(2, R, C)``.

    ``bts`` is a mapping band -> BetaTree (product over bands) or a single
    vector BetaTree. Class 0 (surround) is the S state, class 1 (centre) L.
    """
    if isinstance(bts, BetaTree):
        return bts.log_beta_grid(j)
    return sum(bts[b].log_beta_grid(j) for b in sorted(bts))


def block_likelihood(bts, n: NodeIndex) -> np.ndarray:
    """``(log f(d_n | surround), log f(d_n | centre))`` for one block."""
    ll = block_loglik(bts, n.level)
    r, c = n.pos
    return ll[:, r, c]


def ml_label(loglik) -> int | np.ndarray:
    """Maximum-likelihood class; ties go to surround.

    Accepts a length-2 vector or a ``(2, ...)`` array of log-likelihoods.
    """
    loglik = np.asarray(loglik)
    lab = (loglik[1] > loglik[0]).astype(np.int8)
    return int(lab) if lab.ndim == 0 else lab


def pyramid_forests(pyr: WaveletPyramid, vector: bool = False):
    """Per-band quad-forests (dict) or one vector forest for a pyramid."""
    levels = range(1, pyr.depth + 1)
    if vector:
        return Forest.from_grids([pyr.vector(j) for j in levels])
    return {b: Forest.from_grids([pyr.band(j, b) for j in levels]) for b in BANDS}
