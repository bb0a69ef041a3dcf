"""
The evaluation report: per-model AUC and AP with bootstrap intervals, curve
points and pairwise DeLong tests, for all knees and for one subgroup.
"""
import logging
from typing import Dict, Optional, Sequence

import numpy as np
import orjson
import pandas as pd

from src.core.config import SOFTWARE_VERSION
from src.core.errors import EmptySubgroupError
from src.evalstats.bootstrap import stratified_bootstrap_ci
from src.evalstats.delong import delong_matrix
from src.evalstats.metrics import average_precision, curve_points, roc_auc
from src.evalstats.schemas import EvaluationReport, ModelMetrics, ScoredSet, SubgroupReport

logger = logging.getLogger(__name__)

LABEL_COLUMN = "label_binary"


def model_metrics(s: ScoredSet, n_bootstrap: int, ci_level: float, seed: int) -> ModelMetrics:
    auc_ci = stratified_bootstrap_ci(s, roc_auc, n_bootstrap, seed, ci_level)
    ap_ci = stratified_bootstrap_ci(s, average_precision, n_bootstrap, seed, ci_level)
    return ModelMetrics(
        auc=auc_ci.point_estimate,
        auc_ci=[auc_ci.ci_low, auc_ci.ci_high],
        ap=ap_ci.point_estimate,
        ap_ci=[ap_ci.ci_low, ap_ci.ci_high],
        n_knees=int(s.labels.size),
        n_progressors=s.n_pos,
        roc=curve_points(s, "roc"),
        pr=curve_points(s, "pr"),
    )


def subgroup_report(
    name: str,
    scores: pd.DataFrame,
    model_columns: Sequence[str],
    n_bootstrap: int,
    ci_level: float,
    seed: int,
) -> SubgroupReport:
    if scores.empty:
        raise EmptySubgroupError(f"subgroup '{name}' has no knees")
    labels = scores[LABEL_COLUMN].to_numpy(dtype=np.int64)
    models = {}
    for column in model_columns:
        models[column] = model_metrics(ScoredSet(scores[column].to_numpy(), labels), n_bootstrap, ci_level, seed)
        logger.info(
            f"[{name}] {column}: AUC {models[column].auc:.3f} {models[column].auc_ci} "
            f"AP {models[column].ap:.3f} {models[column].ap_ci}"
        )
    delong = delong_matrix({c: scores[c].to_numpy() for c in model_columns}, labels) if len(model_columns) > 1 else {}
    return SubgroupReport(name=name, prevalence=float(labels.mean()), models=models, delong=delong)


def evaluate_models(
    scores: pd.DataFrame,
    model_columns: Sequence[str],
    n_bootstrap: int = 2000,
    ci_level: float = 0.95,
    seed: int = 42,
    subgroups: Optional[Dict[str, np.ndarray]] = None,
    config_hash: str = "",
) -> EvaluationReport:
    """`subgroups` maps a name to a boolean row mask; "all" is always included."""
    reports = {"all": subgroup_report("all", scores, model_columns, n_bootstrap, ci_level, seed)}
    for name, mask in (subgroups or {}).items():
        subset = scores[np.asarray(mask, dtype=bool)].reset_index(drop=True)
        reports[name] = subgroup_report(name, subset, model_columns, n_bootstrap, ci_level, seed)
    return EvaluationReport(
        software_version=SOFTWARE_VERSION,
        config_hash=config_hash,
        n_bootstrap=n_bootstrap,
        ci_level=ci_level,
        seed=seed,
        subgroups=reports,
    )


def report_bytes(report: EvaluationReport) -> bytes:
    return orjson.dumps(report.model_dump(mode="json"), option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2)
