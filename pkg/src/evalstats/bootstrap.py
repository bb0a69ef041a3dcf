import logging
from typing import Callable

import numpy as np

from src.core.errors import UndefinedMetricError
from src.evalstats.schemas import BootstrapResult, ScoredSet

logger = logging.getLogger(__name__)

Metric = Callable[[ScoredSet], float]

MAX_REDRAWS_PER_REPLICATE = 100


def stratified_resample(s: ScoredSet, rng: np.random.Generator) -> ScoredSet:
    """Resample positives and negatives separately, keeping both class counts."""
    pos = np.flatnonzero(s.labels == 1)
    neg = np.flatnonzero(s.labels == 0)
    idx = np.r_[
        rng.choice(pos, size=pos.size, replace=True) if pos.size else pos,
        rng.choice(neg, size=neg.size, replace=True) if neg.size else neg,
    ]
    return ScoredSet(s.scores[idx], s.labels[idx])


def stratified_bootstrap_ci(
    s: ScoredSet,
    metric: Metric,
    n: int = 2000,
    seed: int = 42,
    level: float = 0.95,
) -> BootstrapResult:
    """
    Percentile confidence interval for `metric` on `s`.

    Replicate i draws from its own generator spawned off SeedSequence(seed),
    so results do not depend on evaluation order. A replicate on which the
    metric is undefined is redrawn from the same generator and counted.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")

    point = metric(s)
    values = np.empty(n)
    redraws = 0
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n)):
        rng = np.random.default_rng(child)
        for _ in range(MAX_REDRAWS_PER_REPLICATE):
            try:
                values[i] = metric(stratified_resample(s, rng))
                break
            except UndefinedMetricError:
                redraws += 1
        else:
            raise UndefinedMetricError(f"metric undefined on {MAX_REDRAWS_PER_REPLICATE} redraws of replicate {i}")

    if redraws:
        logger.warning(f"Bootstrap redrew {redraws} replicates with an undefined metric")
    alpha = (1.0 - level) / 2.0
    low, high = np.quantile(values, [alpha, 1.0 - alpha])
    return BootstrapResult(
        point_estimate=point,
        ci_low=float(low),
        ci_high=float(high),
        n_iterations=n,
        seed=seed,
        level=level,
        n_redraws=redraws,
    )
