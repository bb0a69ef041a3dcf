"""
Gradient boosted trees on the second-level features (LightGBM).

Missing values are passed through as NaN; LightGBM learns a default
direction for them at every split, so no imputation happens here.
"""
import logging
from typing import Any, Dict, List, Literal, Optional, Sequence

import lightgbm as lgb
import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from src.core.errors import InsufficientDataError
from src.evalstats.metrics import average_precision
from src.evalstats.schemas import ScoredSet
from src.fusion.features import LABEL_COLUMN, feature_matrix, validate_feature_subset
from src.nnmodel.schemas import FoldSplit

logger = logging.getLogger(__name__)

GBMMode = Literal["refit", "cv_ensemble"]


class GBMParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_estimators: int = Field(default=200, ge=1)
    num_leaves: int = Field(default=8, ge=2)
    learning_rate: float = Field(default=0.05, gt=0)
    feature_fraction: float = Field(default=1.0, gt=0, le=1)
    bagging_fraction: float = Field(default=1.0, gt=0, le=1)
    lambda_l2: float = Field(default=0.0, ge=0)
    min_data_in_leaf: int = Field(default=20, ge=1)
    min_sum_hessian_in_leaf: float = Field(default=1e-3, ge=0)
    min_data_in_bin: int = Field(default=3, ge=1)

    def lgb_params(self, seed: int) -> Dict[str, Any]:
        return {
            "objective": "binary",
            "learning_rate": self.learning_rate,
            "num_leaves": self.num_leaves,
            "feature_fraction": self.feature_fraction,
            "bagging_fraction": self.bagging_fraction,
            "bagging_freq": 1 if self.bagging_fraction < 1 else 0,
            "lambda_l2": self.lambda_l2,
            "min_data_in_leaf": self.min_data_in_leaf,
            "min_sum_hessian_in_leaf": self.min_sum_hessian_in_leaf,
            "min_data_in_bin": self.min_data_in_bin,
            "use_missing": True,
            "zero_as_missing": False,
            "feature_pre_filter": False,
            "seed": seed,
            "deterministic": True,
            "force_row_wise": True,
            "num_threads": 1,
            "verbose": -1,
        }


class BoostedTreeModel:
    """One booster (refit) or one per fold (cv_ensemble, probabilities averaged)."""

    def __init__(self, boosters: List[lgb.Booster], features: Sequence[str], params: GBMParams, mode: GBMMode):
        self.boosters = boosters
        self.features = tuple(features)
        self.params = params
        self.mode = mode

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        return np.mean([booster.predict(X) for booster in self.boosters], axis=0)

    def predict_proba(self, frame: pd.DataFrame) -> np.ndarray:
        return self.predict_matrix(feature_matrix(frame, self.features))


def train_booster(X: np.ndarray, y: np.ndarray, params: GBMParams, seed: int, feature_names: Sequence[str]) -> lgb.Booster:
    if X.shape[0] == 0:
        raise InsufficientDataError("cannot fit boosted trees on zero rows")
    dataset = lgb.Dataset(
        X,
        label=y,
        feature_name=list(feature_names),
        params={"feature_pre_filter": False, "min_data_in_bin": params.min_data_in_bin, "verbose": -1},
        free_raw_data=False,
    )
    return lgb.train(params.lgb_params(seed), dataset, num_boost_round=params.n_estimators)


def _fold_masks(subject_ids: np.ndarray, split: FoldSplit):
    train = np.isin(subject_ids, split.train_subject_ids)
    val = np.isin(subject_ids, split.val_subject_ids)
    return train, val


def fit_gbm(
    frame: pd.DataFrame,
    feature_subset: Sequence[str],
    hyperparams: Optional[GBMParams] = None,
    splits: Optional[Sequence[FoldSplit]] = None,
    mode: GBMMode = "refit",
    seed: int = 42,
) -> BoostedTreeModel:
    features = validate_feature_subset(feature_subset)
    params = hyperparams or GBMParams()
    if frame.empty:
        raise InsufficientDataError("no training rows")
    X = feature_matrix(frame, features)
    y = frame[LABEL_COLUMN].to_numpy(dtype=np.int64)

    if mode == "refit":
        boosters = [train_booster(X, y, params, seed, features)]
    else:
        if not splits:
            raise ValueError("cv_ensemble mode needs the cross-validation splits")
        subject_ids = frame["subject_id"].to_numpy()
        boosters = []
        for split in splits:
            train, _ = _fold_masks(subject_ids, split)
            boosters.append(train_booster(X[train], y[train], params, seed, features))
    logger.info(f"Fitted {len(boosters)} booster(s) on {len(features)} features, mode={mode}")
    return BoostedTreeModel(boosters, features, params, mode)


def cross_validated_ap(
    X: np.ndarray,
    y: np.ndarray,
    subject_ids: np.ndarray,
    splits: Sequence[FoldSplit],
    params: GBMParams,
    seed: int,
    feature_names: Optional[Sequence[str]] = None,
) -> float:
    """Mean out-of-fold AP over the subject-wise splits."""
    names = feature_names or [f"f{i}" for i in range(X.shape[1])]
    scores = []
    for split in splits:
        train, val = _fold_masks(subject_ids, split)
        booster = train_booster(X[train], y[train], params, seed, names)
        scores.append(average_precision(ScoredSet(booster.predict(X[val]), y[val])))
    return float(np.mean(scores))
