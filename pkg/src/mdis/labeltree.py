"""Coarse-to-fine context-based MAP labelling of dyadic blocks.

Per-scale arrays are indexed by level - 1 (level 1 = 2x2 blocks). The
context of a block is ``v = 2 * parent_label + neighbour_majority`` where
both labels are read on the next coarser grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.ndimage import convolve

EPS = 1e-6


class ContextState(NamedTuple):
    parent_label: int
    neighbor_majority: int

    @property
    def index(self) -> int:
        return 2 * self.parent_label + self.neighbor_majority


@dataclass
class CascadeResult:
    labels: list[np.ndarray]
    posteriors: list[np.ndarray]
    context_models: list[np.ndarray | None]


_RING = np.array([[1, 1, 1], [1, 0, 1], [1, 1, 1]])


def coarse_contexts(labels_coarser: np.ndarray) -> np.ndarray:
    """Context index (0..3) of every coarse-grid block, as seen by its children."""
    lab = np.asarray(labels_coarser, dtype=np.int64)
    ones = convolve(lab, _RING, mode="constant", cval=0)
    count = convolve(np.ones_like(lab), _RING, mode="constant", cval=0)
    maj = np.where(2 * ones > count, 1, np.where(2 * ones < count, 0, lab))
    return 2 * lab + maj


def contexts(labels_coarser: np.ndarray) -> np.ndarray:
    """Context index for every block of the next finer grid."""
    v = coarse_contexts(labels_coarser)
    return np.repeat(np.repeat(v, 2, axis=0), 2, axis=1)


def context_of(labels_coarser: np.ndarray, i: tuple[int, int]) -> ContextState:
    """Context of fine block ``i`` from the labels one level up."""
    r, c = i
    v = int(coarse_contexts(labels_coarser)[r // 2, c // 2])
    return ContextState(v // 2, v % 2)


def _posterior_centre(loglik: np.ndarray, log_prior: np.ndarray) -> np.ndarray:
    """P(c = 1) from class log-likelihoods ``(2, ...)`` and log priors ``(2, ...)``."""
    z = loglik[1] + log_prior[1] - (loglik[0] + log_prior[0])
    # logistic of the log-odds, stable for large |z|
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def fuse_scale(loglik: np.ndarray, ctx: np.ndarray, cm: np.ndarray):
    """Context-conditioned posterior and MAP labels at one scale.

    ``loglik`` is ``(2, R, C)``, ``ctx`` holds context indices ``(R, C)`` and
    ``cm`` is the ``(4, 2)`` table ``p(c | v)``. Returns ``(labels, P(c=1))``.
    """
    loglik = np.asarray(loglik, dtype=np.float64)
    log_prior = np.log(np.moveaxis(np.asarray(cm)[ctx], -1, 0))
    post = _posterior_centre(loglik, log_prior)
    # label from the log-odds sign so exact ties fall to surround
    z = loglik[1] + log_prior[1] - (loglik[0] + log_prior[0])
    return (z > 0).astype(np.int8), post


def estimate_context_model(loglik: np.ndarray, ctx: np.ndarray, max_iter: int = 20, tol: float = 1e-4) -> np.ndarray:
    """Self-consistent estimate of ``p(c | v)`` at one scale.

    Starts from a uniform table and alternates posterior computation with
    Laplace-smoothed re-estimation per context value. Unseen contexts keep a
    uniform row.
    """
    cm = np.full((4, 2), 0.5)
    ctx = np.asarray(ctx).ravel()
    counts = np.bincount(ctx, minlength=4).astype(np.float64)
    seen = counts > 0
    for _ in range(max_iter):
        _, post = fuse_scale(loglik, ctx.reshape(np.shape(loglik)[1:]), cm)
        mass1 = np.bincount(ctx, weights=post.ravel(), minlength=4)
        p1 = (mass1 + EPS) / (counts + 2 * EPS)
        p1 = np.clip(p1, EPS, 1 - EPS)
        new = cm.copy()
        new[seen, 1] = p1[seen]
        new[seen, 0] = 1.0 - p1[seen]
        delta = np.abs(new - cm).max()
        cm = new
        if delta < tol:
            break
    return cm


def map_cascade(logliks, root_prior, max_iter: int = 20, tol: float = 1e-4) -> CascadeResult:
    """Label every scale from the coarsest down.

    ``logliks[j-1]`` is the ``(2, R_j, C_j)`` class log-likelihood grid at
    level j; ``root_prior`` is the class pmf used at the coarsest level,
    which is labelled by maximum likelihood without context.
    """
    depth = len(logliks)
    labels: list = [None] * depth
    posts: list = [None] * depth
    models: list = [None] * depth
    top = np.asarray(logliks[-1], dtype=np.float64)
    root_prior = np.asarray(root_prior, dtype=np.float64)
    with np.errstate(divide="ignore"):
        lp = np.log(root_prior).reshape(2, *([1] * (top.ndim - 1)))
    labels[-1] = (top[1] > top[0]).astype(np.int8)
    posts[-1] = _posterior_centre(top, lp)
    for idx in range(depth - 2, -1, -1):
        ll = np.asarray(logliks[idx], dtype=np.float64)
        ctx = contexts(labels[idx + 1])
        cm = estimate_context_model(ll, ctx, max_iter, tol)
        labels[idx], posts[idx] = fuse_scale(ll, ctx, cm)
        models[idx] = cm
    return CascadeResult(labels, posts, models)


def dump_labels_pgm(labels: np.ndarray, path) -> None:
    """Binary PGM with 0 for surround and 255 for centre."""
    lab = (np.asarray(labels) > 0).astype(np.uint8) * 255
    h, w = lab.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(lab.tobytes())
