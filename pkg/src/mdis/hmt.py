"""Two-state wavelet HMT parameter sets, universal parameters and EM training.

State order is (S, L) throughout: index 0 is the small-variance state,
index 1 the large-variance state. Transition matrices are indexed by the
child level: ``A[j - 1]`` maps a level-(j+1) parent state (row) to a level-j
child state (column). ``A[depth - 1]`` belongs to the root level and is
never used by the recursions; it is kept so every level carries a matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tree import Forest, smooth, tree_loglik, upward

VAR_FLOOR = 1e-8
COV_RIDGE = 1e-8
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class UniversalConstants:
    """Natural-image meta-parameters for the universal HMT."""

    alpha_S: float = 3.1
    C_alpha_S: float = 2.0**11
    alpha_L: float = 2.25
    C_alpha_L: float = 2.0**11
    lambda_S: float = 1.0
    C_SS: float = 2.0**2.3
    lambda_L: float = 0.4
    C_LL: float = 2.0**0.5
    pL_root: float = 0.5


def _check_transitions(A, p1):
    A = np.asarray(A)
    if np.any(A < 0) or not np.allclose(A.sum(axis=-1), 1.0, atol=1e-12, rtol=0):
        raise ValueError("transition rows must be pmfs")
    if np.any(p1 < 0) or abs(p1.sum() - 1.0) > 1e-12:
        raise ValueError("root pmf must sum to 1")


@dataclass(frozen=True, eq=False)
class ScalarHmtParams:
    """Per-level tied scalar HMT.

    ``sigma2[j - 1] = (sigma2_S, sigma2_L)`` at level j.
    """

    sigma2: np.ndarray
    A: np.ndarray
    p1: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sigma2", np.asarray(self.sigma2, dtype=np.float64))
        object.__setattr__(self, "A", np.asarray(self.A, dtype=np.float64))
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=np.float64))

    @property
    def levels(self) -> int:
        return len(self.sigma2)

    @property
    def sigma2_S(self) -> np.ndarray:
        return self.sigma2[:, 0]

    @property
    def sigma2_L(self) -> np.ndarray:
        return self.sigma2[:, 1]

    def validate(self) -> "ScalarHmtParams":
        J = self.levels
        if self.sigma2.shape != (J, 2) or self.A.shape != (J, 2, 2) or self.p1.shape != (2,):
            raise ValueError("inconsistent parameter shapes")
        if np.any(self.sigma2 <= 0) or np.any(self.sigma2[:, 1] < self.sigma2[:, 0]):
            raise ValueError("need 0 < sigma2_S <= sigma2_L at every level")
        _check_transitions(self.A, self.p1)
        return self

    def log_emission(self, j: int, w: np.ndarray) -> np.ndarray:
        """``log g(w; 0, sigma2_m[j])`` for both states, shape ``w.shape + (2,)``."""
        s2 = self.sigma2[j - 1]
        w = np.asarray(w, dtype=np.float64)[..., None]
        return -0.5 * (LOG_2PI + np.log(s2)) - w * w / (2.0 * s2)


@dataclass(frozen=True, eq=False)
class VectorHmtParams:
    """Per-level tied HMT over (LH, HL, HH) coefficient vectors.

    ``cov[j - 1, m]`` is the 3x3 covariance of state ``m`` at level j.
    """

    cov: np.ndarray
    A: np.ndarray
    p1: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=np.float64))
        object.__setattr__(self, "A", np.asarray(self.A, dtype=np.float64))
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=np.float64))

    @property
    def levels(self) -> int:
        return len(self.cov)

    @property
    def C_S(self) -> np.ndarray:
        return self.cov[:, 0]

    @property
    def C_L(self) -> np.ndarray:
        return self.cov[:, 1]

    def validate(self) -> "VectorHmtParams":
        J = self.levels
        if self.cov.shape != (J, 2, 3, 3) or self.A.shape != (J, 2, 2) or self.p1.shape != (2,):
            raise ValueError("inconsistent parameter shapes")
        if not np.allclose(self.cov, self.cov.swapaxes(-1, -2)):
            raise ValueError("covariances must be symmetric")
        if np.any(np.linalg.eigvalsh(self.cov) <= 0):
            raise ValueError("covariances must be positive definite")
        tr = np.trace(self.cov, axis1=-2, axis2=-1)
        if np.any(tr[:, 1] < tr[:, 0]):
            raise ValueError("need tr(C_S) <= tr(C_L) at every level")
        _check_transitions(self.A, self.p1)
        return self

    def log_emission(self, j: int, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        return np.stack([_mvn_logpdf(w, self.cov[j - 1, m]) for m in range(2)], axis=-1)


# --------------------------------------------------------------------------
# densities


def gauss_pdf(x, sigma2):
    """Zero-mean Gaussian density."""
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if np.any(sigma2 <= 0):
        raise ValueError("variance must be positive")
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-x * x / (2.0 * sigma2)) / np.sqrt(2.0 * np.pi * sigma2)


def mixture_pdf(w, params: ScalarHmtParams, j: int, prior):
    """Two-state marginal density of a level-j coefficient under ``prior``."""
    prior = np.asarray(prior, dtype=np.float64)
    if abs(prior.sum() - 1.0) > 1e-12:
        raise ValueError("prior must sum to 1")
    s2 = params.sigma2[j - 1]
    return prior[0] * gauss_pdf(w, s2[0]) + prior[1] * gauss_pdf(w, s2[1])


def _mvn_logpdf(w: np.ndarray, C: np.ndarray) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(C)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is not positive definite") from exc
    d = C.shape[0]
    inv_chol = np.linalg.inv(chol)
    z = w.reshape(-1, d) @ inv_chol.T
    maha = np.einsum("ij,ij->i", z, z)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    out = -0.5 * (d * LOG_2PI + logdet + maha)
    return out.reshape(w.shape[:-1])


def mvn_pdf(w, C):
    """Zero-mean multivariate normal density (with the usual 1/2 in the exponent)."""
    C = np.asarray(C, dtype=np.float64)
    if not np.allclose(C, C.T):
        raise ValueError("covariance must be symmetric")
    return np.exp(_mvn_logpdf(np.asarray(w, dtype=np.float64), C))


# --------------------------------------------------------------------------
# universal model


def universal_params(
    levels: int = 5, consts: UniversalConstants = UniversalConstants(), side: int | None = None
) -> ScalarHmtParams:
    """Universal scalar HMT shared by all three bands.

    Variances decay as ``C 2^(-alpha k)`` and persistence grows as
    ``1 - C 2^(-lambda k)`` (clamped to ``[1/2, 1 - 1e-6]``) in a scale index
    ``k``. Without ``side``, ``k`` is the pyramid level itself. With ``side``
    (the padded image side), ``k`` counts from the coarsest dyadic scale of
    the image, ``k = log2(side) + 1 - j``, so level j of a 256-pixel image
    uses ``k = 9 - j``.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    j = np.arange(1, levels + 1, dtype=np.float64)
    if side is not None:
        top = int(round(math.log2(side)))
        if (1 << top) != side or top < levels:
            raise ValueError(f"side {side} is not a power of two covering {levels} levels")
        j = top + 1 - j
    s2_S = consts.C_alpha_S * 2.0 ** (-consts.alpha_S * j)
    s2_L = consts.C_alpha_L * 2.0 ** (-consts.alpha_L * j)
    hi = 1.0 - 1e-6
    p_ss = np.clip(1.0 - consts.C_SS * 2.0 ** (-consts.lambda_S * j), 0.5, hi)
    p_ll = np.clip(1.0 - consts.C_LL * 2.0 ** (-consts.lambda_L * j), 0.5, hi)
    A = np.empty((levels, 2, 2))
    A[:, 0, 0], A[:, 0, 1] = p_ss, 1.0 - p_ss
    A[:, 1, 1], A[:, 1, 0] = p_ll, 1.0 - p_ll
    p1 = np.array([1.0 - consts.pL_root, consts.pL_root])
    return ScalarHmtParams(np.stack([s2_S, s2_L], axis=1), A, p1).validate()


# --------------------------------------------------------------------------
# EM


@dataclass
class EmResult:
    params: ScalarHmtParams | VectorHmtParams
    loglik: float
    iterations: int
    history: list[float] = field(default_factory=list)
    degenerate: bool = False


def _e_step(forest: Forest, params):
    log_emit = [params.log_emission(j, forest.values[j - 1]) for j in range(1, forest.depth + 1)]
    sweep = upward(forest, log_emit, params.A)
    gamma, xi = smooth(forest, sweep, params.A, params.p1)
    ll = float(tree_loglik(sweep, params.p1).sum())
    return ll, gamma, xi


def _m_transitions(gamma, xi, old_A, old_p1):
    depth = len(gamma)
    A = old_A.copy()
    for idx in range(depth - 1):
        counts = xi[idx].sum(axis=0)
        mass = counts.sum(axis=1, keepdims=True)
        ok = mass[:, 0] > 0
        A[idx, ok] = counts[ok] / mass[ok]
    p1 = gamma[-1].mean(axis=0)
    p1 = p1 / p1.sum() if np.all(np.isfinite(p1)) and p1.sum() > 0 else old_p1
    return A, p1


def _swap_levels(A: np.ndarray, p1: np.ndarray, swap: np.ndarray):
    """Relabel S <-> L at the flagged levels without changing the model."""
    A = A.copy()
    p1 = p1.copy()
    depth = len(swap)
    for idx in np.flatnonzero(swap):
        A[idx] = A[idx][:, ::-1]  # child state of level idx+1
        if idx > 0:
            A[idx - 1] = A[idx - 1][::-1, :]  # parent state of the level below
        if idx == depth - 1:
            p1 = p1[::-1]
    return A, p1


def _relative_gain(new: float, old: float) -> float:
    return (new - old) / max(abs(old), 1e-300)


def _as_forest(coeffs) -> Forest:
    return coeffs if isinstance(coeffs, Forest) else Forest.from_grids(coeffs)


def _run_em(forest, params, m_step, max_iter, tol):
    ll, gamma, xi = _e_step(forest, params)
    history = [ll]
    it = 0
    for it in range(1, max_iter + 1):
        params = m_step(params, gamma, xi)
        ll_new, gamma, xi = _e_step(forest, params)
        history.append(ll_new)
        gain = _relative_gain(ll_new, ll)
        ll = ll_new
        if gain < tol:
            break
    return params, ll, it, history


def default_scalar_init(forest: Forest, persistence: float = 0.8) -> ScalarHmtParams:
    depth = forest.depth
    var = np.array([np.mean(np.square(v)) if v.size else 0.0 for v in forest.values])
    s2 = np.maximum(np.stack([0.25 * var, 4.0 * var], axis=1), VAR_FLOOR)
    A = np.tile(np.array([[persistence, 1 - persistence], [1 - persistence, persistence]]), (depth, 1, 1))
    return ScalarHmtParams(s2, A, np.array([0.5, 0.5]))


def em_train_scalar(coeffs, init: ScalarHmtParams | None = None, max_iter: int = 50, tol: float = 1e-5) -> EmResult:
    """Fit a tied scalar HMT to a coefficient forest by EM.

    ``coeffs`` is a :class:`Forest` or a list of per-level grids (finest
    first). Several bands can be pooled with :meth:`Forest.concat`.
    """
    forest = _as_forest(coeffs)
    if any(forest.level_size(j) < 4 for j in range(1, forest.depth))  or forest.level_size(forest.depth) < 1:
        raise ValueError("need at least 4 coefficients per level")
    params = init if init is not None else default_scalar_init(forest)
    if params.levels != forest.depth:
        raise ValueError(f"init has {params.levels} levels, data has {forest.depth}")
    params.validate()

    def m_step(p, gamma, xi):
        s2 = p.sigma2.copy()
        for idx in range(forest.depth):
            g = gamma[idx]
            mass = g.sum(axis=0)
            w2 = np.square(forest.values[idx])
            ok = mass > 0
            s2[idx, ok] = (g[:, ok] * w2[:, None]).sum(axis=0) / mass[ok]
        s2 = np.maximum(s2, VAR_FLOOR)
        A, p1 = _m_transitions(gamma, xi, p.A, p.p1)
        swap = s2[:, 0] > s2[:, 1]
        s2[swap] = s2[swap][:, ::-1]
        A, p1 = _swap_levels(A, p1, swap)
        return ScalarHmtParams(s2, A, p1)

    params, ll, it, history = _run_em(forest, params, m_step, max_iter, tol)
    degenerate = bool(np.any(params.sigma2[:, 1] <= VAR_FLOOR * (1 + 1e-9)))
    return EmResult(params.validate(), ll, it, history, degenerate)


def default_vector_init(forest: Forest, persistence: float = 0.8) -> VectorHmtParams:
    depth = forest.depth
    eye = np.eye(3)
    cov = np.empty((depth, 2, 3, 3))
    for idx, v in enumerate(forest.values):
        S = v.T @ v / max(len(v), 1)
        cov[idx, 0] = 0.25 * S + COV_RIDGE * eye
        cov[idx, 1] = 4.0 * S + COV_RIDGE * eye
    A = np.tile(np.array([[persistence, 1 - persistence], [1 - persistence, persistence]]), (depth, 1, 1))
    return VectorHmtParams(cov, A, np.array([0.5, 0.5]))


def em_train_vector(coeffs, init: VectorHmtParams | None = None, max_iter: int = 50, tol: float = 1e-5) -> EmResult:
    """Fit a vector HMT (one shared state tree across orientations) by EM.

    ``coeffs`` is a :class:`WaveletPyramid`, a vector :class:`Forest`, or a
    list of ``(R_j, C_j, 3)`` grids.
    """
    if hasattr(coeffs, "vector"):
        coeffs = [coeffs.vector(j) for j in range(1, coeffs.depth + 1)]
    forest = _as_forest(coeffs)
    if any(forest.level_size(j) < 4 for j in range(1, forest.depth)):
        raise ValueError("need at least 4 coefficients per level")
    params = init if init is not None else default_vector_init(forest)
    if params.levels != forest.depth:
        raise ValueError(f"init has {params.levels} levels, data has {forest.depth}")
    params.validate()
    eye = np.eye(3)

    def m_step(p, gamma, xi):
        cov = p.cov.copy()
        for idx in range(forest.depth):
            g = gamma[idx]
            v = forest.values[idx]
            mass = g.sum(axis=0)
            for m in range(2):
                if mass[m] > 0:
                    C = (v * g[:, m : m + 1]).T @ v / mass[m]
                    cov[idx, m] = 0.5 * (C + C.T) + COV_RIDGE * eye
        A, p1 = _m_transitions(gamma, xi, p.A, p.p1)
        tr = np.trace(cov, axis1=-2, axis2=-1)
        swap = tr[:, 0] > tr[:, 1]
        cov[swap] = cov[swap][:, ::-1]
        A, p1 = _swap_levels(A, p1, swap)
        return VectorHmtParams(cov, A, p1)

    params, ll, it, history = _run_em(forest, params, m_step, max_iter, tol)
    tr_L = np.trace(params.cov[:, 1], axis1=-2, axis2=-1)
    degenerate = bool(np.any(tr_L <= 3 * 2 * COV_RIDGE))
    return EmResult(params.validate(), ll, it, history, degenerate)


# --------------------------------------------------------------------------
# model files


def _fmt(x: float) -> str:
    return repr(float(x))


def save_params(params, path, loglik: float | None = None) -> None:
    """Write a model as ``name=value`` lines."""
    lines = [f"levels={params.levels}"]
    for j in range(1, params.levels + 1):
        if isinstance(params, ScalarHmtParams):
            lines.append(f"sigma2_S.{j}={_fmt(params.sigma2[j - 1, 0])}")
            lines.append(f"sigma2_L.{j}={_fmt(params.sigma2[j - 1, 1])}")
        else:
            for m, name in enumerate(("C_S", "C_L")):
                for r in range(3):
                    for c in range(3):
                        lines.append(f"{name}.{j}.{r}{c}={_fmt(params.cov[j - 1, m, r, c])}")
        for r in range(2):
            for c in range(2):
                lines.append(f"A.{j}.{r}{c}={_fmt(params.A[j - 1, r, c])}")
    lines.append(f"p1.S={_fmt(params.p1[0])}")
    lines.append(f"p1.L={_fmt(params.p1[1])}")
    if loglik is not None:
        lines.append(f"loglik={_fmt(loglik)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_model_file(path) -> dict[str, str]:
    kv = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected name=value")
        k, v = line.split("=", 1)
        kv[k.strip()] = v.strip()
    return kv


def load_params(path) -> ScalarHmtParams | VectorHmtParams:
    kv = read_model_file(path)
    J = int(kv["levels"])
    A = np.array([[[float(kv[f"A.{j}.{r}{c}"]) for c in range(2)] for r in range(2)] for j in range(1, J + 1)])
    p1 = np.array([float(kv["p1.S"]), float(kv["p1.L"])])
    if "sigma2_S.1" in kv:
        s2 = np.array([[float(kv[f"sigma2_S.{j}"]), float(kv[f"sigma2_L.{j}"])] for j in range(1, J + 1)])
        return ScalarHmtParams(s2, A, p1).validate()
    cov = np.array(
        [
            [[[float(kv[f"{n}.{j}.{r}{c}"]) for c in range(3)] for r in range(3)] for n in ("C_S", "C_L")]
            for j in range(1, J + 1)
        ]
    )
    return VectorHmtParams(cov, A, p1).validate()
