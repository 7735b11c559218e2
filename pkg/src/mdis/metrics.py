"""Fixation data and map-versus-fixation scores (LCC, NSS, ROC/AUC, ISROC).

Fixations are ``(x, y)`` pixel coordinates; a fixation lands on the pixel
``(round(y), round(x))``. Degenerate inputs that the scores define as 0
(constant maps) emit :class:`DegenerateMetricWarning` so callers can flag
them.
"""

from __future__ import annotations

import csv
import warnings
from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

DEFAULT_BLUR = 8.0
DEFAULT_THRESHOLDS = 256
CSV_HEADER = ("image", "subject", "x", "y")


class DegenerateMetricWarning(UserWarning):
    """A score was defined by convention because its input was degenerate."""


@dataclass
class FixationSet:
    """All subjects' fixations on one image.

    ``subjects`` maps a subject id to an ``(n, 2)`` array of ``(x, y)``.
    ``shape`` is ``(height, width)`` once known; points are checked against it.
    """

    image: str
    subjects: dict[str, np.ndarray] = field(default_factory=dict)
    shape: tuple[int, int] | None = None

    def __post_init__(self):
        self.subjects = {
            str(k): np.asarray(v, dtype=np.float64).reshape(-1, 2) for k, v in self.subjects.items()
        }
        if self.shape is not None:
            self.check_bounds(self.shape)

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    def points(self, exclude: str | None = None) -> np.ndarray:
        """All fixations stacked, optionally leaving one subject out."""
        parts = [v for k, v in sorted(self.subjects.items()) if k != exclude]
        return np.concatenate(parts) if parts else np.empty((0, 2))

    def only(self, subject: str) -> "FixationSet":
        return FixationSet(self.image, {subject: self.subjects[subject]}, self.shape)

    def without(self, subject: str) -> "FixationSet":
        rest = {k: v for k, v in self.subjects.items() if k != subject}
        return FixationSet(self.image, rest, self.shape)

    def with_shape(self, shape: tuple[int, int]) -> "FixationSet":
        return FixationSet(self.image, self.subjects, tuple(shape))

    def check_bounds(self, shape) -> None:
        pixel_indices(self.points(), shape)


def pixel_indices(points: np.ndarray, shape) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-pixel ``(rows, cols)`` of ``(x, y)`` points; raises if any is off the map."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    h, w = shape
    cols = np.floor(points[:, 0] + 0.5).astype(np.int64)
    rows = np.floor(points[:, 1] + 0.5).astype(np.int64)
    bad = (cols < 0) | (cols >= w) | (rows < 0) | (rows >= h) | ~np.isfinite(points).all(axis=1)
    if np.any(bad):
        x, y = points[np.flatnonzero(bad)[0]]
        raise ValueError(f"fixation ({x}, {y}) outside a {w}x{h} image")
    return rows, cols


# --------------------------------------------------------------------------
# CSV ingestion


def read_fixations_csv(path) -> dict[str, FixationSet]:
    """Parse an ``image,subject,x,y`` CSV into one FixationSet per image."""
    grouped: dict[str, dict[str, list]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            image, subject, x, y = (r.strip() for r in row)
            try:
                pt = (float(x), float(y))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad coordinate") from exc
            grouped.setdefault(image, {}).setdefault(subject, []).append(pt)
    return {img: FixationSet(img, subs) for img, subs in grouped.items()}


def write_fixations_csv(sets: Iterable[FixationSet], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_HEADER)
        for fx in sorted(sets, key=lambda f: f.image):
            for subject, pts in sorted(fx.subjects.items()):
                for x, y in pts:
                    wr.writerow([fx.image, subject, repr(float(x)), repr(float(y))])


def records_to_csv(records: Iterable[tuple[str, str, float, float]], path) -> None:
    """Write raw ``(image, subject, x, y)`` records as a fixation CSV.

    This is the hook for bringing an eye-tracking corpus in. Most corpora
    ship one file per subject and image with a fixation per line, often in
    a different coordinate origin. Converting them is an offline step. Read
    each record, shift it to 0-based pixel coordinates with x along the
    columns, and feed the tuples here. Subject ids are kept as strings.
    """
    sets: dict[str, dict[str, list]] = {}
    for image, subject, x, y in records:
        sets.setdefault(str(image), {}).setdefault(str(subject), []).append((float(x), float(y)))
    write_fixations_csv([FixationSet(i, s) for i, s in sets.items()], path)


# --------------------------------------------------------------------------
# maps


def density_from_fixations(fx: FixationSet, sigma_blur: float = DEFAULT_BLUR, shape=None) -> np.ndarray:
    """Gaussian-blurred, unit-sum map of all subjects' fixation impulses."""
    shape = tuple(shape) if shape is not None else fx.shape
    if shape is None:
        raise ValueError("fixation set has no image shape")
    pts = fx.points()
    if len(pts) == 0:
        raise ValueError("no fixations")
    rows, cols = pixel_indices(pts, shape)
    imp = np.zeros(shape, dtype=np.float64)
    np.add.at(imp, (rows, cols), 1.0)
    if sigma_blur > 0:
        imp = gaussian_filter(imp, sigma_blur, mode="reflect", truncate=4.0)
    imp = np.maximum(imp, 0.0)
    return imp / imp.sum()


def _normalise01(smap: np.ndarray) -> np.ndarray:
    lo, hi = smap.min(), smap.max()
    if hi <= lo:
        return np.full(smap.shape, 0.5)
    return (smap - lo) / (hi - lo)


# --------------------------------------------------------------------------
# scores


def lcc(s, g) -> float:
    """Pearson correlation over pixels; 0 (with a warning) if either map is constant."""
    s = np.asarray(s, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if s.shape != g.shape:
        raise ValueError(f"map shapes differ: {s.shape} vs {g.shape}")
    if np.ptp(s) == 0 or np.ptp(g) == 0:
        warnings.warn("constant map: LCC set to 0", DegenerateMetricWarning, stacklevel=2)
        return 0.0
    ds = s - s.mean()
    dg = g - g.mean()
    return float(np.clip(np.sum(ds * dg) / np.sqrt(np.sum(ds * ds) * np.sum(dg * dg)), -1.0, 1.0))


def nss(s, fx: FixationSet | np.ndarray) -> float:
    """Mean of the standardised map at the fixated pixels (every fixation counts)."""
    s = np.asarray(s, dtype=np.float64)
    pts = fx.points() if isinstance(fx, FixationSet) else np.asarray(fx)
    if len(pts) == 0:
        raise ValueError("no fixations")
    rows, cols = pixel_indices(pts, s.shape)
    # an exact spread test; the float std of a constant map is not always 0
    if np.ptp(s) == 0:
        warnings.warn("constant map: NSS set to 0", DegenerateMetricWarning, stacklevel=2)
        return 0.0
    z = (s - s.mean()) / s.std()
    return float(z[rows, cols].mean())


@dataclass(frozen=True)
class RocCurve:
    """``(fpr, tpr)`` from ``(0, 0)`` to ``(1, 1)``, thresholds descending."""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def fixation_mask(shape, fx: FixationSet | np.ndarray) -> np.ndarray:
    pts = fx.points() if isinstance(fx, FixationSet) else np.asarray(fx)
    rows, cols = pixel_indices(pts, shape)
    mask = np.zeros(shape, dtype=bool)
    mask[rows, cols] = True
    return mask


def roc(s, fx: FixationSet | np.ndarray, n_thresholds: int = DEFAULT_THRESHOLDS) -> RocCurve:
    """Threshold sweep of the [0, 1]-normalised map against fixated pixels.

    Positives are the distinct fixated pixels, negatives all the others.
    A pixel is predicted positive when its value is ``>= t``; ``t`` runs
    over ``n_thresholds`` uniform levels on [0, 1] bracketed by +inf and
    -inf, which pin the end points at (0, 0) and (1, 1).
    """
    s = _normalise01(np.asarray(s, dtype=np.float64))
    pos = fixation_mask(s.shape, fx)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one fixated and one non-fixated pixel")
    if n_thresholds < 2:
        raise ValueError("need at least 2 thresholds")
    levels = np.linspace(0.0, 1.0, n_thresholds)
    thr = np.concatenate([[np.inf], levels[::-1], [-np.inf]])
    # count pixels >= t through a sorted search (exact, no binning)
    sp = np.sort(s[pos])
    sn = np.sort(s[~pos])
    tp = n_pos - np.searchsorted(sp, thr, side="left")
    fp = n_neg - np.searchsorted(sn, thr, side="left")
    return RocCurve(fp / n_neg, tp / n_pos, thr)


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the curve."""
    x, y = curve.fpr, curve.tpr
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) * 0.5))


def roc_auc(s, fx, n_thresholds: int = DEFAULT_THRESHOLDS) -> float:
    return auc(roc(s, fx, n_thresholds))


@dataclass(frozen=True)
class IsrocResult:
    inter_subject_auc: float
    model_auc: float
    per_subject: dict[str, float]


def isroc(
    smap,
    fx: FixationSet,
    sigma_blur: float = DEFAULT_BLUR,
    n_thresholds: int = DEFAULT_THRESHOLDS,
) -> IsrocResult:
    """Leave-one-subject-out human AUC paired with the model's pooled AUC.

    Each subject's fixations are scored against the density map of the
    remaining subjects; the mean of those AUCs is the inter-subject value.
    """
    if fx.n_subjects < 2:
        raise ValueError("inter-subject ROC needs at least two subjects")
    smap = np.asarray(smap, dtype=np.float64)
    per = {}
    for u in sorted(fx.subjects):
        if len(fx.subjects[u]) == 0:
            continue
        pred = density_from_fixations(fx.without(u), sigma_blur, smap.shape)
        per[u] = roc_auc(pred, fx.subjects[u], n_thresholds)
    if not per:
        raise ValueError("no subject has fixations")
    inter = float(np.mean(list(per.values())))
    return IsrocResult(inter, roc_auc(smap, fx, n_thresholds), per)


@dataclass(frozen=True)
class MetricsRecord:
    lcc: float
    nss: float
    auc: float

    def __post_init__(self):
        if not -1.0 <= self.lcc <= 1.0:
            raise ValueError(f"lcc {self.lcc} outside [-1, 1]")
        if not 0.0 <= self.auc <= 1.0:
            raise ValueError(f"auc {self.auc} outside [0, 1]")


def evaluate_map(
    smap,
    fx: FixationSet,
    sigma_blur: float = DEFAULT_BLUR,
    n_thresholds: int = DEFAULT_THRESHOLDS,
) -> MetricsRecord:
    """LCC against the fixation density, NSS and pooled AUC for one map."""
    smap = np.asarray(smap, dtype=np.float64)
    g = density_from_fixations(fx, sigma_blur, smap.shape)
    return MetricsRecord(lcc(smap, g), nss(smap, fx), roc_auc(smap, fx, n_thresholds))
