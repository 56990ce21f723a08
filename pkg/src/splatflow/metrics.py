"""Optical-flow evaluation metrics: EPE, pxN accuracy, F1-ALL and WAUC.

All thresholds are inclusive (an error equal to the threshold counts as a hit)
and every reduction runs in float64. Sums go through :func:`math.fsum`, so
results do not depend on summation order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyMask

# WAUC: thresholds i/20 px and weights 1 - (i - 1)/100 for i = 1..100.
WAUC_THRESHOLDS = np.arange(1, 101) / 20.0
WAUC_WEIGHTS = 1.0 - (np.arange(1, 101) - 1) / 100.0

F1_ABS_THRESHOLD = 3.0
F1_REL_THRESHOLD = 0.05


@dataclass
class MetricsReport:
    epe: float
    px1: float
    px3: float
    px5: float
    f1_all: float
    wauc: float
    valid_pixel_count: int

    def as_dict(self) -> dict:
        return asdict(self)


def _valid_errors(pred, gt, mask=None) -> tuple[np.ndarray, np.ndarray]:
    """Endpoint errors and ground-truth magnitudes on valid pixels."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[-1] != 2:
        raise DimensionMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    if mask is None:
        valid = np.ones(gt.shape[:2], dtype=bool)
    else:
        valid = np.asarray(mask, dtype=bool)
        if valid.shape != gt.shape[:2]:
            raise DimensionMismatch(f"mask {valid.shape} vs flow {gt.shape[:2]}")
    if not valid.any():
        raise EmptyMask("mask selects no pixels")
    d = pred[valid] - gt[valid]
    err = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1])
    g = gt[valid]
    gt_mag = np.sqrt(g[:, 0] * g[:, 0] + g[:, 1] * g[:, 1])
    return err, gt_mag


def epe(pred, gt, mask=None) -> float:
    err, _ = _valid_errors(pred, gt, mask)
    return math.fsum(err) / err.size


def px_accuracy(pred, gt, mask=None, tau: float = 1.0) -> float:
    err, _ = _valid_errors(pred, gt, mask)
    return int(np.count_nonzero(err <= tau)) / err.size


def f1_all(pred, gt, mask=None) -> float:
    """Percentage of outliers: error > 3 px and > 5 % of the ground-truth magnitude."""
    err, gt_mag = _valid_errors(pred, gt, mask)
    outliers = (err > F1_ABS_THRESHOLD) & (err > F1_REL_THRESHOLD * gt_mag)
    return 100.0 * int(np.count_nonzero(outliers)) / err.size


def _wauc_from_errors(err: np.ndarray) -> float:
    hits = np.searchsorted(np.sort(err), WAUC_THRESHOLDS, side="right")
    fractions = hits / err.size
    return 100.0 * math.fsum(WAUC_WEIGHTS * fractions) / math.fsum(WAUC_WEIGHTS)


def wauc(pred, gt, mask=None) -> float:
    err, _ = _valid_errors(pred, gt, mask)
    return _wauc_from_errors(err)


def evaluate(pred, gt, mask=None) -> MetricsReport:
    err, gt_mag = _valid_errors(pred, gt, mask)
    n = err.size
    outliers = (err > F1_ABS_THRESHOLD) & (err > F1_REL_THRESHOLD * gt_mag)
    return MetricsReport(
        epe=math.fsum(err) / n,
        px1=int(np.count_nonzero(err <= 1.0)) / n,
        px3=int(np.count_nonzero(err <= 3.0)) / n,
        px5=int(np.count_nonzero(err <= 5.0)) / n,
        f1_all=100.0 * int(np.count_nonzero(outliers)) / n,
        wauc=_wauc_from_errors(err),
        valid_pixel_count=int(n),
    )


def aggregate(reports: list[MetricsReport]) -> MetricsReport:
    """Mean of per-pair metrics; ``valid_pixel_count`` is the total."""
    if not reports:
        raise EmptyMask("no reports to aggregate")
    n = len(reports)

    def mean(name):
        return math.fsum(getattr(r, name) for r in reports) / n

    return MetricsReport(
        epe=mean("epe"), px1=mean("px1"), px3=mean("px3"), px5=mean("px5"),
        f1_all=mean("f1_all"), wauc=mean("wauc"),
        valid_pixel_count=sum(r.valid_pixel_count for r in reports),
    )
