from dataclasses import dataclass
from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator


@dataclass(frozen=True)
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64).ravel()
        labels = np.asarray(self.labels).ravel()
        if scores.shape != labels.shape:
            raise ValueError(f"{scores.size} scores but {labels.size} labels")
        if not np.all(np.isin(labels, (0, 1))):
            raise ValueError("labels must be 0 or 1")
        if not np.all(np.isfinite(scores)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels.astype(np.int64))

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return int(self.labels.size - self.labels.sum())


class CurvePoints(BaseModel):
    kind: Literal["roc", "pr"]
    x: List[float]
    y: List[float]
    # None stands for the operating point above every score
    thresholds: List[Optional[float]]

    @model_validator(mode="after")
    def _aligned(self):
        if not (len(self.x) == len(self.y) == len(self.thresholds)):
            raise ValueError("x, y and thresholds must have equal lengths")
        return self


class BootstrapResult(BaseModel):
    point_estimate: float
    ci_low: float
    ci_high: float
    n_iterations: int = 2000
    seed: int
    level: float = 0.95
    n_redraws: int = 0

    @model_validator(mode="after")
    def _ordered(self):
        if self.ci_low > self.ci_high:
            raise ValueError("ci_low must not exceed ci_high")
        return self


class DeLongResult(BaseModel):
    auc_a: float
    auc_b: float
    z_statistic: float
    p_value: float = Field(ge=0, le=1)
    variance: float


class ModelMetrics(BaseModel):
    auc: float
    auc_ci: List[float]
    ap: float
    ap_ci: List[float]
    n_knees: int
    n_progressors: int
    roc: CurvePoints
    pr: CurvePoints


class SubgroupReport(BaseModel):
    name: str
    prevalence: float
    models: Dict[str, ModelMetrics]
    # "a|b" -> DeLong comparison of model a against model b
    delong: Dict[str, DeLongResult] = Field(default_factory=dict)


class EvaluationReport(BaseModel):
    software_version: str
    config_hash: str
    n_bootstrap: int
    ci_level: float
    seed: int
    # "all" plus the configured subgroup
    subgroups: Dict[str, SubgroupReport]
