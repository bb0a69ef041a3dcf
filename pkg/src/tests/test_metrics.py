import numpy as np
import pytest
from scipy.stats import rankdata
from sklearn.metrics import average_precision_score

from src.core.errors import UndefinedMetricError
from src.evalstats.metrics import average_precision, curve_area, curve_points, roc_auc
from src.evalstats.schemas import ScoredSet


def _random_set(rng, max_n):
    n = int(rng.integers(2, max_n + 1))
    labels = rng.integers(0, 2, size=n)
    labels[0], labels[1] = 0, 1
    # coarse grid for plenty of ties
    scores = rng.integers(0, 20, size=n) / 20.0 + 0.3 * labels
    return ScoredSet(scores, labels)


def _pairwise_auc(s):
    pos = s.scores[s.labels == 1][:, None]
    neg = s.scores[s.labels == 0][None, :]
    wins = (pos > neg).sum() + 0.5 * (pos == neg).sum()
    return wins / (pos.size * neg.size)


def _stepwise_ap(s):
    """Walk the distinct thresholds from the top, one precision per recall step."""
    total = 0.0
    previous_recall = 0.0
    for threshold in sorted(set(s.scores.tolist()), reverse=True):
        predicted = s.scores >= threshold
        tp = int((predicted & (s.labels == 1)).sum())
        recall = tp / s.n_pos
        precision = tp / int(predicted.sum())
        total += (recall - previous_recall) * precision
        previous_recall = recall
    return total


def test_auc_equals_exhaustive_pairwise_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        s = _random_set(rng, 500)
        assert roc_auc(s) == _pairwise_auc(s)


def test_ap_equals_step_integration():
    rng = np.random.default_rng(1)
    for _ in range(100):
        s = _random_set(rng, 50)
        assert abs(average_precision(s) - _stepwise_ap(s)) < 1e-12
        assert abs(average_precision(s) - average_precision_score(s.labels, s.scores)) < 1e-12


def test_metric_values_on_small_examples():
    perfect = ScoredSet([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert roc_auc(perfect) == 1.0
    assert average_precision(perfect) == 1.0

    tied = ScoredSet([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1])
    assert roc_auc(tied) == 0.5
    assert average_precision(tied) == 0.5


def test_undefined_metrics_raise_instead_of_nan():
    no_positives = ScoredSet([0.1, 0.2], [0, 0])
    with pytest.raises(UndefinedMetricError):
        roc_auc(no_positives)
    with pytest.raises(UndefinedMetricError):
        average_precision(no_positives)
    with pytest.raises(UndefinedMetricError):
        roc_auc(ScoredSet([0.1, 0.2], [1, 1]))
    assert average_precision(ScoredSet([0.1, 0.2], [1, 1])) == 1.0


def test_scored_set_validation():
    with pytest.raises(ValueError):
        ScoredSet([0.1, 0.2], [0, 1, 1])
    with pytest.raises(ValueError):
        ScoredSet([0.1, 0.2], [0, 2])
    with pytest.raises(ValueError):
        ScoredSet([0.1, np.nan], [0, 1])


def test_curves_are_consistent_with_the_areas():
    rng = np.random.default_rng(2)
    for _ in range(50):
        s = _random_set(rng, 80)
        roc = curve_points(s, "roc")
        pr = curve_points(s, "pr")
        assert (roc.x[0], roc.y[0]) == (0.0, 0.0)
        assert roc.x[-1] == pytest.approx(1.0) and roc.y[-1] == pytest.approx(1.0)
        assert roc.thresholds[0] is None
        assert curve_area(roc) == pytest.approx(roc_auc(s), abs=1e-12)
        assert pr.x[0] == 0.0 and pr.x[-1] == pytest.approx(1.0)
        assert curve_area(pr) == pytest.approx(average_precision(s), abs=1e-12)
        assert np.all(np.diff(roc.x) >= 0) and np.all(np.diff(pr.x) >= 0)


def test_unknown_curve_kind():
    with pytest.raises(ValueError):
        curve_points(ScoredSet([0.1, 0.9], [0, 1]), "lift")


@pytest.mark.parametrize(
    "transform",
    [np.exp, lambda x: 2.5 * x - 7.0, lambda x: rankdata(x, method="dense").astype(float)],
    ids=["exp", "affine", "rank"],
)
def test_metrics_only_see_the_score_order(transform):
    rng = np.random.default_rng(11)
    for _ in range(50):
        raw = _random_set(rng, 40)
        # one float per distinct score, so no transform can merge near-equal values
        s = ScoredSet(np.round(raw.scores, 6), raw.labels)
        moved = ScoredSet(transform(s.scores), s.labels)
        assert roc_auc(moved) == pytest.approx(roc_auc(s), abs=1e-12)
        assert average_precision(moved) == pytest.approx(average_precision(s), abs=1e-12)


def test_flipping_the_labels_mirrors_the_auc():
    rng = np.random.default_rng(12)
    for _ in range(50):
        s = _random_set(rng, 40)
        flipped = ScoredSet(s.scores, 1 - s.labels)
        assert roc_auc(flipped) == pytest.approx(1.0 - roc_auc(s), abs=1e-12)
