"""Level-indexed forests and the scaled upward/downward recursions.

A forest of depth ``J`` stores, for every level ``j`` (1 = leaves side,
``J`` = roots), the node observations and the index of each node's parent
in the level above. Quad-trees built from wavelet grids are one instance;
the recursions accept any branching, which is what lets tests compare them
with brute-force enumeration on small irregular trees.

Two-state quantities carry a trailing axis of size 2 ordered (S, L).
``A[j - 1][n, m]`` is the probability that a level-j node is in state ``m``
given its parent is in state ``n``.

Betas are kept as ``beta_i(m) = beta_tilde_i(m) * exp(log_scale_i)`` with
``max_m beta_tilde_i(m) = 1``. Downward quantities are renormalised per node;
posteriors are ratios, so the scale factors cancel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Forest:
    values: tuple[np.ndarray, ...]
    parents: tuple[np.ndarray, ...]
    shapes: tuple[tuple[int, int], ...] | None = None

    @property
    def depth(self) -> int:
        return len(self.values)

    def level_size(self, j: int) -> int:
        return len(self.values[j - 1])

    @classmethod
    def from_grids(cls, grids) -> "Forest":
        """Build a quad-forest from per-level grids, finest first.

        Each grid is ``(R_j, C_j)`` for scalar data or ``(R_j, C_j, d)`` for
        vector data, with ``R_j = 2 R_{j+1}``.
        """
        grids = [np.asarray(g, dtype=np.float64) for g in grids]
        values, parents, shapes = [], [], []
        for idx, g in enumerate(grids):
            rows, cols = g.shape[:2]
            shapes.append((rows, cols))
            values.append(g.reshape((rows * cols,) + g.shape[2:]))
            if idx + 1 < len(grids):
                prow, pcol = grids[idx + 1].shape[:2]
                if (rows, cols) != (2 * prow, 2 * pcol):
                    raise ValueError(f"level {idx + 1} grid {g.shape[:2]} is not twice level {idx + 2}")
                r, c = np.divmod(np.arange(rows * cols), cols)
                parents.append((r // 2) * pcol + c // 2)
            else:
                parents.append(np.empty(0, dtype=np.intp))
        return cls(tuple(values), tuple(parents), tuple(shapes))

    @classmethod
    def concat(cls, forests) -> "Forest":
        """Disjoint union of forests of equal depth (grid shapes are dropped)."""
        forests = list(forests)
        depth = forests[0].depth
        if any(f.depth != depth for f in forests):
            raise ValueError("forests must share depth")
        values, parents = [], []
        for idx in range(depth):
            values.append(np.concatenate([f.values[idx] for f in forests]))
            if idx + 1 < depth:
                offs = np.cumsum([0] + [len(f.values[idx + 1]) for f in forests[:-1]])
                parents.append(np.concatenate([f.parents[idx] + o for f, o in zip(forests, offs)]))
            else:
                parents.append(np.empty(0, dtype=np.intp))
        return cls(tuple(values), tuple(parents), None)

    def grid(self, j: int, arr: np.ndarray) -> np.ndarray:
        """Reshape a per-node level-j array back onto its grid."""
        if self.shapes is None:
            raise ValueError("forest has no grid layout")
        return arr.reshape(self.shapes[j - 1] + arr.shape[1:])


@dataclass(frozen=True)
class Sweep:
    """Output of :func:`upward`, indexed by level - 1.

    ``logb[j-1]`` holds the exact ``log beta``; ``beta`` and ``log_scale`` are
    its rescaled form (a state far below the other may underflow to 0 there).
    ``msg[j-1][i, n] = sum_m A(n -> m) beta_tilde_i(m)`` is the scaled
    message a level-j node sends to its parent in state ``n`` (None at the
    root level); its scale is ``log_scale[j-1][i]``.
    """

    beta: tuple[np.ndarray, ...]
    log_scale: tuple[np.ndarray, ...]
    msg: tuple[np.ndarray | None, ...]
    logb: tuple[np.ndarray, ...]

    def log_beta(self, idx: int) -> np.ndarray:
        return self.logb[idx]


def _log_messages(msg, top, lb, A):
    """``log sum_m A(n -> m) beta(m)``, redone in the log domain where the scaled sum underflowed."""
    with np.errstate(divide="ignore"):
        lmsg = np.log(msg) + top[:, None]
        bad = ~np.isfinite(lmsg)
        if np.any(bad):
            rows, states = np.nonzero(bad)
            terms = np.log(A[states]) + lb[rows]
            lmsg[rows, states] = np.logaddexp(terms[:, 0], terms[:, 1])
    return lmsg


def upward(forest: Forest, log_emit, A) -> Sweep:
    depth = forest.depth
    beta, scale, msgs, logb = [], [], [], []
    incoming = 0.0
    for idx in range(depth):
        lb = log_emit[idx] + incoming
        top = lb.max(axis=1)
        b = np.exp(lb - top[:, None])
        beta.append(b)
        scale.append(top)
        logb.append(lb)
        if idx + 1 < depth:
            msg = b @ A[idx].T
            msgs.append(msg)
            lmsg = _log_messages(msg, top, lb, A[idx])
            npar = forest.level_size(idx + 2)
            par = forest.parents[idx]
            incoming = np.stack(
                [np.bincount(par, weights=lmsg[:, n], minlength=npar) for n in range(2)], axis=-1
            )
        else:
            msgs.append(None)
    return Sweep(tuple(beta), tuple(scale), tuple(msgs), tuple(logb))


def tree_loglik(sweep: Sweep, p1) -> np.ndarray:
    """Per-tree log-likelihood ``log sum_m p1(m) beta_root(m)``."""
    with np.errstate(divide="ignore"):
        return np.logaddexp(*(sweep.logb[-1] + np.log(np.asarray(p1, dtype=np.float64))).T)


def _normalise(x: np.ndarray, axes) -> np.ndarray:
    tot = x.sum(axis=axes, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(tot > 0, x / tot, 0.0)


def smooth(forest: Forest, sweep: Sweep, A, p1, pairwise: bool = True):
    """Downward pass and state posteriors.

    Returns ``(gamma, xi)`` with ``gamma[j-1][i, m] = P(S_i = m | w)`` and
    ``xi[j-1][i, n, m] = P(S_rho(i) = n, S_i = m | w)`` (None at the root
    level, and everywhere when ``pairwise`` is false).
    """
    depth = forest.depth
    gamma = [None] * depth
    xi = [None] * depth
    alpha = np.broadcast_to(np.asarray(p1, dtype=np.float64), sweep.beta[-1].shape)
    gamma[-1] = _normalise(alpha * sweep.beta[-1], 1)
    ab = alpha * sweep.beta[-1]
    for idx in range(depth - 2, -1, -1):
        par = forest.parents[idx]
        msg = sweep.msg[idx]
        # r[i, n] proportional to alpha_rho(n) beta_rho(n) / beta_{i,rho}(n)
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.where(msg > 0, ab[par] / msg, 0.0)
        r = _normalise(r, 1)
        alpha = r @ A[idx]
        b = sweep.beta[idx]
        ab = _normalise(alpha * b, 1)
        gamma[idx] = ab
        if pairwise:
            xi[idx] = _normalise(r[:, :, None] * A[idx][None, :, :] * b[:, None, :], (1, 2))
    return gamma, xi
