"""Gray-level segmentation constraint.

At scheduled iterations the current image is split into ``n`` gray-level
groups by multi-level Otsu thresholding. Pixels on group boundaries are
released, every remaining pixel is replaced by its group median, and the
image is pulled toward that piecewise-constant estimate with step ``beta``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import ReconConfig

__all__ = [
    "UNGROUPED",
    "DegenerateHistogramError",
    "SegmentationMap",
    "otsu_from_histogram",
    "otsu_thresholds",
    "segment",
    "refine",
    "group_medians",
    "build_fseg",
    "apply_global_constraint",
    "global_update",
    "labels_to_uint8",
]

log = logging.getLogger(__name__)

UNGROUPED = -1
N_BINS = 256
_TIE_RTOL = 1e-12


class DegenerateHistogramError(ValueError):
    """The image has a single gray value, so no threshold can split it."""


@dataclass(frozen=True)
class SegmentationMap:
    labels: np.ndarray
    n_groups: int
    thresholds: tuple[float, ...]
    medians: np.ndarray | None = None

    @property
    def grouped(self) -> np.ndarray:
        return self.labels != UNGROUPED


def _class_scores(hist):
    # score[i, j] = S^2 / W for the class holding bins [i, j); maximising the
    # sum over classes maximises between-class variance
    hist = np.asarray(hist, dtype=np.float64)
    idx = np.arange(hist.size, dtype=np.float64)
    w = np.concatenate(([0.0], np.cumsum(hist)))
    m = np.concatenate(([0.0], np.cumsum(hist * idx)))
    dw = w[None, :] - w[:, None]
    dm = m[None, :] - m[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where(dw > 0, dm * dm / dw, 0.0)
    return score


def otsu_from_histogram(hist, n: int) -> tuple[int, ...]:
    """Exact multi-level Otsu on a histogram.

    Returns ``n - 1`` strictly increasing bin indices ``t``; class ``k`` holds
    bins ``[t[k-1], t[k])``. Solved by dynamic programming over suffixes, and
    among optimal threshold vectors the lexicographically smallest is taken.
    """
    hist = np.asarray(hist, dtype=np.float64)
    n_bins = hist.size
    if n < 1:
        raise ValueError("need at least one class")
    if n > n_bins:
        raise ValueError(f"cannot form {n} classes from {n_bins} bins")
    if n == 1:
        return ()
    score = _class_scores(hist)

    # best[m][i]: optimum for bins [i, n_bins) split into m classes
    best = np.full((n + 1, n_bins + 1), -np.inf)
    best[1, :n_bins] = score[:n_bins, n_bins]
    for m in range(2, n + 1):
        for i in range(n_bins - m + 1):
            best[m, i] = np.max(score[i, i + 1 : n_bins - m + 2] + best[m - 1, i + 1 : n_bins - m + 2])

    thresholds = []
    i = 0
    for m in range(n, 1, -1):
        cand = score[i, i + 1 : n_bins - m + 2] + best[m - 1, i + 1 : n_bins - m + 2]
        target = best[m, i]
        hit = np.flatnonzero(cand >= target - _TIE_RTOL * abs(target))
        i = i + 1 + int(hit[0])
        thresholds.append(i)
    return tuple(thresholds)


def _bin_indices(f, n_bins=N_BINS):
    f = np.asarray(f, dtype=np.float64)
    lo, hi = float(f.min()), float(f.max())
    if hi <= lo:
        return None, lo, hi
    idx = np.floor((f - lo) / (hi - lo) * n_bins).astype(np.int64)
    np.clip(idx, 0, n_bins - 1, out=idx)
    return idx, lo, hi


def _otsu_bins(f, n, n_bins=N_BINS):
    if not 1 <= n <= n_bins:
        raise ValueError(f"group count must be in [1, {n_bins}], got {n}")
    idx, lo, hi = _bin_indices(f, n_bins)
    if idx is None:
        if n == 1:
            return None, (), lo, hi
        raise DegenerateHistogramError("degenerate histogram: image is constant")
    hist = np.bincount(idx.ravel(), minlength=n_bins)
    return idx, otsu_from_histogram(hist, n), lo, hi


def otsu_thresholds(f, n: int, n_bins: int = N_BINS) -> tuple[float, ...]:
    """Gray-value thresholds for ``n`` Otsu classes.

    Thresholds are the bin edges between classes (the midpoints of adjacent
    bin centres) on a uniform ``n_bins`` histogram spanning ``[min f, max f]``.
    """
    _, t, lo, hi = _otsu_bins(f, n, n_bins)
    width = (hi - lo) / n_bins
    return tuple(lo + k * width for k in t)


def segment(f, n: int, n_bins: int = N_BINS) -> SegmentationMap:
    """Label every pixel with its Otsu class (``0 .. n-1``)."""
    if n < 2:
        raise ValueError("segment needs at least two groups")
    idx, t, lo, hi = _otsu_bins(f, n, n_bins)
    labels = np.searchsorted(np.asarray(t), idx, side="right").astype(np.int64)
    width = (hi - lo) / n_bins
    return SegmentationMap(labels, n, tuple(lo + k * width for k in t))


def refine(seg: SegmentationMap, f=None, connectivity: int = 4) -> SegmentationMap:
    """Release every pixel whose in-bounds neighbours do not all share its label.

    Evaluated in one pass against the incoming labels.
    """
    labels = seg.labels
    if f is not None and np.shape(f) != labels.shape:
        raise ValueError("segmentation and image shapes differ")
    padded = np.pad(labels, 1, mode="edge")
    h, w = labels.shape
    offsets = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if connectivity == 8:
        offsets += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    elif connectivity != 4:
        raise ValueError("connectivity must be 4 or 8")
    keep = labels != UNGROUPED
    for di, dj in offsets:
        keep &= padded[1 + di : 1 + di + h, 1 + dj : 1 + dj + w] == labels
    return SegmentationMap(np.where(keep, labels, UNGROUPED), seg.n_groups, seg.thresholds)


def group_medians(seg: SegmentationMap, f) -> SegmentationMap:
    """Median gray level of each group over its grouped pixels (NaN if empty)."""
    f = np.asarray(f, dtype=np.float64)
    medians = np.full(seg.n_groups, np.nan)
    for k in range(seg.n_groups):
        vals = f[seg.labels == k]
        if vals.size:
            medians[k] = np.median(vals)
    return SegmentationMap(seg.labels, seg.n_groups, seg.thresholds, medians)


def build_fseg(seg: SegmentationMap, f) -> np.ndarray:
    """Copy of ``f`` with grouped pixels replaced by their group median."""
    if seg.medians is None:
        raise ValueError("medians have not been computed")
    f = np.asarray(f, dtype=np.float64)
    out = f.copy()
    mask = seg.grouped
    med = seg.medians[seg.labels[mask]]
    ok = np.isfinite(med)
    sel = np.flatnonzero(mask.ravel())[ok]
    out.ravel()[sel] = med[ok]
    return out


def apply_global_constraint(f, n_groups: int, beta: float, connectivity: int = 4, refine_boundaries: bool = True):
    """One global step; returns ``(new_f, seg)`` or ``(f, None)`` if ``f`` is flat."""
    f = np.asarray(f, dtype=np.float64)
    try:
        seg = segment(f, n_groups)
    except DegenerateHistogramError:
        log.warning("global step skipped: constant image")
        return f.copy(), None
    if refine_boundaries:
        seg = refine(seg, f, connectivity)
    seg = group_medians(seg, f)
    f_seg = build_fseg(seg, f)
    if beta == 0:
        return f.copy(), seg
    if beta == 1:
        return f_seg, seg
    out = f - beta * (f - f_seg)
    # ungrouped pixels are bit-identical to the input
    out[~seg.grouped] = f[~seg.grouped]
    return out, seg


def global_update(f, i: int, cfg: ReconConfig) -> np.ndarray:
    """Global step at iteration ``i`` with ``n = cfg.groups_at(i)`` groups."""
    out, _ = apply_global_constraint(f, cfg.groups_at(i), cfg.effective_global_beta, cfg.connectivity, cfg.refine)
    return out


def labels_to_uint8(seg: SegmentationMap) -> np.ndarray:
    """8-bit label image for inspection; ungrouped pixels are 0, groups spread over 1..255."""
    out = np.zeros(seg.labels.shape, dtype=np.uint8)
    mask = seg.grouped
    if seg.n_groups > 1:
        out[mask] = 1 + np.round(seg.labels[mask] * (254 / (seg.n_groups - 1))).astype(np.uint8)
    else:
        out[mask] = 255
    return out
