"""
DeLong's test for two correlated ROC AUCs on the same labels.

Structural components come from midranks, so the cost is O(n log n) per model.
"""
import logging
from typing import Dict, Tuple

import numpy as np
from scipy.stats import norm, rankdata

from src.core.errors import DegenerateVarianceError, UndefinedMetricError
from src.evalstats.schemas import DeLongResult

logger = logging.getLogger(__name__)


def structural_components(scores: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """Returns (auc, per-positive placements V10, per-negative placements V01)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    m, n = pos.size, neg.size

    all_ranks = rankdata(np.r_[pos, neg])
    pos_ranks = rankdata(pos)
    neg_ranks = rankdata(neg)

    v10 = (all_ranks[:m] - pos_ranks) / n
    v01 = 1.0 - (all_ranks[m:] - neg_ranks) / m
    auc = (all_ranks[:m].sum() - m * (m + 1) / 2) / (m * n)
    return float(auc), v10, v01


def delong_test(a: np.ndarray, b: np.ndarray, labels: np.ndarray) -> DeLongResult:
    labels = np.asarray(labels)
    if len(a) != len(labels) or len(b) != len(labels):
        raise ValueError("both score lists must align with the labels")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos < 2 or n_neg < 2:
        raise UndefinedMetricError(f"DeLong needs 2 positives and 2 negatives, got {n_pos} and {n_neg}")

    auc_a, v10_a, v01_a = structural_components(a, labels)
    auc_b, v10_b, v01_b = structural_components(b, labels)

    s10 = np.cov(np.vstack([v10_a, v10_b]), ddof=1)
    s01 = np.cov(np.vstack([v01_a, v01_b]), ddof=1)
    cov = s10 / n_pos + s01 / n_neg
    variance = float(cov[0, 0] + cov[1, 1] - 2 * cov[0, 1])
    diff = auc_a - auc_b

    if diff == 0:
        z = 0.0
    elif variance <= 0:
        raise DegenerateVarianceError(f"zero variance for AUC difference {diff:.6f}")
    else:
        z = diff / np.sqrt(variance)
    p_value = float(min(1.0, 2.0 * norm.sf(abs(z))))
    return DeLongResult(auc_a=auc_a, auc_b=auc_b, z_statistic=float(z), p_value=p_value, variance=variance)


def delong_matrix(scores: Dict[str, np.ndarray], labels: np.ndarray) -> Dict[str, DeLongResult]:
    """Every unordered pair of models, keyed "a|b" with a < b."""
    results = {}
    names = sorted(scores)
    for i, name_a in enumerate(names):
        for name_b in names[i + 1:]:
            results[f"{name_a}|{name_b}"] = delong_test(scores[name_a], scores[name_b], labels)
    return results
