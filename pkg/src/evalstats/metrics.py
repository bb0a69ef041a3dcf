"""
Ranking metrics over a ScoredSet.

Equal scores always collapse into one operating point, so the AUC, the curve
points and the DeLong components agree with each other.
"""
from typing import Tuple

import numpy as np
from scipy.stats import rankdata
from sklearn.metrics import auc as trapezoid_area

from src.core.errors import UndefinedMetricError
from src.evalstats.schemas import CurvePoints, ScoredSet


def _require_positives(s: ScoredSet) -> None:
    if s.n_pos == 0:
        raise UndefinedMetricError("no positive labels")


def _require_both_classes(s: ScoredSet) -> None:
    _require_positives(s)
    if s.n_neg == 0:
        raise UndefinedMetricError("no negative labels")


def roc_auc(s: ScoredSet) -> float:
    """Mann-Whitney form: P(score_pos > score_neg) + 0.5 * P(tie)."""
    _require_both_classes(s)
    ranks = rankdata(s.scores)
    n_pos, n_neg = s.n_pos, s.n_neg
    rank_sum = ranks[s.labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _threshold_counts(s: ScoredSet) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cumulative (tp, fp) at each distinct score, scanned from the highest score down."""
    order = np.argsort(-s.scores, kind="mergesort")
    scores = s.scores[order]
    labels = s.labels[order]
    # last index of every run of equal scores
    ends = np.r_[np.flatnonzero(np.diff(scores)), scores.size - 1]
    tps = np.cumsum(labels)[ends].astype(np.float64)
    fps = (ends + 1) - tps
    return tps, fps, scores[ends]


def average_precision(s: ScoredSet) -> float:
    """Step-integrated area under the precision-recall curve."""
    _require_positives(s)
    tps, fps, _ = _threshold_counts(s)
    precision = tps / (tps + fps)
    recall = tps / s.n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def curve_points(s: ScoredSet, kind: str) -> CurvePoints:
    tps, fps, thresholds = _threshold_counts(s)
    if kind == "roc":
        _require_both_classes(s)
        x = np.r_[0.0, fps / s.n_neg]
        y = np.r_[0.0, tps / s.n_pos]
    elif kind == "pr":
        _require_positives(s)
        precision = tps / (tps + fps)
        x = np.r_[0.0, tps / s.n_pos]
        y = np.r_[precision[0], precision]
    else:
        raise ValueError(f"unknown curve kind {kind!r}")
    return CurvePoints(
        kind=kind,
        x=x.tolist(),
        y=y.tolist(),
        thresholds=[None] + thresholds.tolist(),
    )


def curve_area(points: CurvePoints) -> float:
    """Trapezoidal area for ROC curves; step area for PR curves."""
    x, y = np.asarray(points.x), np.asarray(points.y)
    if points.kind == "roc":
        return float(trapezoid_area(x, y))
    return float(np.sum(np.diff(x) * y[1:]))
