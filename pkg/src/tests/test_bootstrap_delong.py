import numpy as np
import pytest
from scipy.stats import norm

from src.core.errors import DegenerateVarianceError, UndefinedMetricError
from src.evalstats.bootstrap import stratified_bootstrap_ci, stratified_resample
from src.evalstats.delong import delong_matrix, delong_test
from src.evalstats.metrics import average_precision, roc_auc
from src.evalstats.schemas import ScoredSet

# binormal separation giving a true AUC of 0.75
DELTA = np.sqrt(2.0) * norm.ppf(0.75)


def _binormal(rng, n_per_class):
    scores = np.r_[rng.normal(0.0, 1.0, n_per_class), rng.normal(DELTA, 1.0, n_per_class)]
    labels = np.r_[np.zeros(n_per_class, int), np.ones(n_per_class, int)]
    return ScoredSet(scores, labels)


# --- bootstrap ------------------------------------------------------------

def test_resampling_keeps_class_counts():
    s = ScoredSet(np.arange(10.0), [0] * 7 + [1] * 3)
    resampled = stratified_resample(s, np.random.default_rng(0))
    assert (resampled.n_pos, resampled.n_neg) == (3, 7)
    assert set(resampled.scores[resampled.labels == 1]) <= {7.0, 8.0, 9.0}


def test_bootstrap_is_reproducible_and_brackets_the_estimate():
    s = _binormal(np.random.default_rng(0), 100)
    a = stratified_bootstrap_ci(s, roc_auc, n=300, seed=9)
    b = stratified_bootstrap_ci(s, roc_auc, n=300, seed=9)
    assert a == b
    assert a.ci_low <= a.point_estimate <= a.ci_high
    assert a.point_estimate == roc_auc(s)
    assert a.n_redraws == 0
    assert stratified_bootstrap_ci(s, roc_auc, n=300, seed=10) != a


def test_bootstrap_argument_checks():
    s = _binormal(np.random.default_rng(0), 10)
    with pytest.raises(ValueError):
        stratified_bootstrap_ci(s, roc_auc, n=0)
    with pytest.raises(ValueError):
        stratified_bootstrap_ci(s, roc_auc, level=1.0)


def test_bootstrap_redraws_undefined_replicates(caplog):
    calls = {"n": 0}

    def flaky(s):
        calls["n"] += 1
        if calls["n"] in (2, 3):
            raise UndefinedMetricError("flaky")
        return average_precision(s)

    result = stratified_bootstrap_ci(_binormal(np.random.default_rng(1), 20), flaky, n=10, seed=0)
    assert result.n_redraws == 2
    assert "redrew 2" in caplog.text


def _coverage(repetitions, n_per_class, n_boot):
    true_auc = norm.cdf(DELTA / np.sqrt(2.0))
    rng = np.random.default_rng(2024)
    covered = 0
    for rep in range(repetitions):
        ci = stratified_bootstrap_ci(_binormal(rng, n_per_class), roc_auc, n=n_boot, seed=rep)
        covered += ci.ci_low <= true_auc <= ci.ci_high
    return covered / repetitions


def test_bootstrap_coverage_small():
    assert _coverage(repetitions=30, n_per_class=150, n_boot=300) >= 0.8


@pytest.mark.slow
def test_bootstrap_coverage_full():
    assert _coverage(repetitions=200, n_per_class=500, n_boot=2000) >= 0.9


# --- DeLong ---------------------------------------------------------------

def _oracle_variance(a, b, labels):
    """Structural components from the explicit pairwise kernel."""
    def components(scores):
        pos, neg = scores[labels == 1], scores[labels == 0]
        psi = (pos[:, None] > neg[None, :]) + 0.5 * (pos[:, None] == neg[None, :])
        return psi.mean(axis=1), psi.mean(axis=0)

    v10_a, v01_a = components(a)
    v10_b, v01_b = components(b)
    m, n = v10_a.size, v01_a.size
    s10 = np.cov(np.vstack([v10_a, v10_b]))
    s01 = np.cov(np.vstack([v01_a, v01_b]))
    cov = s10 / m + s01 / n
    return cov[0, 0] + cov[1, 1] - 2 * cov[0, 1]


def _pair(rng, n):
    labels = rng.integers(0, 2, size=n)
    labels[:2], labels[2:4] = 0, 1
    a = rng.integers(0, 10, size=n) + 2.0 * labels
    b = rng.normal(size=n) + labels
    return a.astype(float), b, labels


def test_same_model_gives_z_zero_and_p_one():
    a, _, labels = _pair(np.random.default_rng(0), 40)
    result = delong_test(a, a, labels)
    assert result.z_statistic == 0.0
    assert result.p_value == 1.0


def test_delong_is_antisymmetric():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        a, b, labels = _pair(rng, int(rng.integers(8, 60)))
        try:
            ab = delong_test(a, b, labels)
        except DegenerateVarianceError:
            with pytest.raises(DegenerateVarianceError):
                delong_test(b, a, labels)
            continue
        ba = delong_test(b, a, labels)
        assert ab.z_statistic == pytest.approx(-ba.z_statistic, abs=1e-12)
        assert ab.p_value == pytest.approx(ba.p_value, abs=1e-12)


def test_delong_variance_matches_pairwise_oracle():
    rng = np.random.default_rng(2)
    for _ in range(100):
        a, b, labels = _pair(rng, int(rng.integers(6, 30)))
        expected = _oracle_variance(a, b, labels)
        if expected <= 0:
            # both component sets constant: only a zero AUC difference is testable
            continue
        assert abs(delong_test(a, b, labels).variance - expected) < 1e-10


def test_delong_detects_a_clear_difference():
    rng = np.random.default_rng(3)
    labels = np.r_[np.zeros(300, int), np.ones(300, int)]
    strong = rng.normal(size=600) + 2.0 * labels
    weak = rng.normal(size=600) + 0.2 * labels
    result = delong_test(strong, weak, labels)
    assert result.auc_a > result.auc_b
    assert result.p_value < 1e-5


def test_delong_needs_two_of_each_class():
    with pytest.raises(UndefinedMetricError):
        delong_test([0.1, 0.2, 0.3], [0.3, 0.2, 0.1], [0, 0, 1])


def test_zero_variance_with_a_difference_is_an_error():
    labels = np.array([0, 0, 1, 1])
    separated = np.array([0.1, 0.2, 0.8, 0.9])
    constant = np.full(4, 0.5)
    with pytest.raises(DegenerateVarianceError):
        delong_test(separated, constant, labels)


def test_delong_matrix_covers_every_pair_once():
    rng = np.random.default_rng(4)
    labels = np.r_[np.zeros(20, int), np.ones(20, int)]
    scores = {name: rng.normal(size=40) + labels for name in ("model_7", "model_2", "model_5")}
    matrix = delong_matrix(scores, labels)
    assert sorted(matrix) == ["model_2|model_5", "model_2|model_7", "model_5|model_7"]
