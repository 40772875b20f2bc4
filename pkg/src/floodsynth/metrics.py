"""Evaluation metrics: RMSE, IoU with best-threshold search, and the
log-scaled histogram intersection used to compare disaster magnitudes.

The histogram intersection works on log10 of absolute cell values at or
above a floor, binned with fixed width over a fixed range (outliers land
in the end bins), each histogram normalized to sum 1. It is a pure
magnitude-distribution statistic: spatially permuting cells does not
change it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Raster

LSHI_FLOOR = 0.01
LSHI_BIN_WIDTH = 0.1
LSHI_LOG_RANGE = (-2.0, 2.0)


@dataclass
class MetricsReport:
    rmse: float
    lshi: float
    n_valid: int
    iou: float | None = None
    iou_best_threshold: float | None = None

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "iou": self.iou,
            "iou_best_threshold": self.iou_best_threshold,
            "lshi": self.lshi,
            "n_valid": self.n_valid,
            "lshi_floor": LSHI_FLOOR,
            "lshi_bin_width": LSHI_BIN_WIDTH,
            "lshi_log_range": list(LSHI_LOG_RANGE),
        }


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, Raster) else np.asarray(x)


def _masked(pred, ref, mask):
    p = _values(pred).astype(np.float64)
    r = _values(ref).astype(np.float64)
    if p.shape != r.shape:
        raise ValueError("prediction and reference differ in shape")
    if mask is None:
        m = np.ones(p.shape, dtype=bool)
    else:
        m = _values(mask).astype(bool)
        if m.shape != p.shape:
            raise ValueError("mask shape mismatch")
    return p[m], r[m]


def rmse(pred, ref, mask=None) -> float:
    """Root mean square error over masked cells."""
    p, r = _masked(pred, ref, mask)
    if p.size == 0:
        raise ValueError("empty mask")
    return float(np.sqrt(np.mean((p - r) ** 2)))


def iou(pred_bin, ref_bin, mask=None) -> float:
    """Intersection over union of two binary maps; 1 when both empty."""
    p, r = _masked(pred_bin, ref_bin, mask)
    p = p != 0
    r = r != 0
    union = np.count_nonzero(p | r)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(p & r) / union)


def best_threshold_iou(pred_cont, ref_bin, mask=None) -> tuple[float, float]:
    """Max IoU of the thresholded prediction over all candidate thresholds.

    A cell is predicted changed when |pred| >= t and |pred| > 0 (zero
    magnitude never flags, so an all-zero prediction scores 0 against a
    non-empty reference). Candidates are the sorted unique |pred| values
    plus 0; the smallest threshold achieving the maximum is returned.
    The sweep is exact: with nonzero cells sorted by |pred| descending,
    the prediction at threshold t is a prefix, so intersection and union
    come from prefix sums.
    """
    p, r = _masked(pred_cont, ref_bin, mask)
    r = r != 0
    a = np.abs(p)
    n_ref = int(r.sum())

    nz = a > 0
    az = a[nz]
    rz = r[nz]
    asc = np.sort(az)
    desc_ref = rz[np.argsort(-az, kind="stable")]
    tp_prefix = np.concatenate([[0], np.cumsum(desc_ref)])

    cand = np.unique(np.concatenate([a.ravel(), [0.0]]))
    k = az.size - np.searchsorted(asc, cand, side="left")  # nonzero cells >= t
    tp = tp_prefix[k]
    union = k + n_ref - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        ious = np.where(union > 0, tp / np.where(union > 0, union, 1), 1.0)
    best = int(np.argmax(ious))  # first (= smallest) threshold at the max
    return float(ious[best]), float(cand[best])


def lshi(pred, ref, mask=None, floor: float = LSHI_FLOOR,
         bin_width: float = LSHI_BIN_WIDTH, log_range=LSHI_LOG_RANGE) -> float:
    """Histogram intersection of log10 magnitudes.

    Cells with |v| < floor are ignored; both histograms empty gives 1,
    exactly one empty gives 0.
    """
    p, r = _masked(pred, ref, mask)

    def hist(v):
        v = np.abs(v)
        v = v[v >= floor]
        if v.size == 0:
            return None
        lo, hi = log_range
        nbins = int(round((hi - lo) / bin_width))
        idx = np.floor((np.log10(v) - lo) / bin_width).astype(int)
        idx = np.clip(idx, 0, nbins - 1)
        return np.bincount(idx, minlength=nbins).astype(np.int64)

    hp = hist(p)
    hr = hist(r)
    if hp is None and hr is None:
        return 1.0
    if hp is None or hr is None:
        return 0.0
    # sum of min(P_k, Q_k) over normalized histograms, done in integer
    # cross-products so identical inputs score exactly 1
    sp = int(hp.sum())
    sr = int(hr.sum())
    inter = int(np.minimum(hp * sr, hr * sp).sum())
    return inter / (sp * sr)


def ensemble_average(cases: list[Raster]) -> Raster:
    """Per-cell arithmetic mean across simulation cases."""
    if not cases:
        raise ValueError("no cases to average")
    first = cases[0]
    for c in cases[1:]:
        if not c.header_matches(first):
            raise ValueError("case headers differ")
    stack = np.stack([c.values for c in cases])
    return first.with_values(stack.mean(axis=0))


def evaluate(pred, ref, mask=None, ref_bin=None) -> MetricsReport:
    """Bundle of all metrics; IoU uses the best-threshold search when a
    binary reference is given."""
    p, _ = _masked(pred, ref, mask)
    report = MetricsReport(
        rmse=rmse(pred, ref, mask),
        lshi=lshi(pred, ref, mask),
        n_valid=int(p.size),
    )
    if ref_bin is not None:
        val, t = best_threshold_iou(pred, ref_bin, mask)
        report.iou = val
        report.iou_best_threshold = t
    return report
