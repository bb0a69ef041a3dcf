"""
Logistic regression references.

Training drops every knee with a missing predictor; at prediction time
missing values are replaced by the training means. Features are standardized
for the fit and the coefficients are mapped back to the raw scale.
"""
import logging
import warnings
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel
from scipy.special import expit
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression
from sklearn.preprocessing import StandardScaler

from src.core.errors import InsufficientDataError
from src.fusion.features import LABEL_COLUMN, feature_matrix, validate_feature_subset

logger = logging.getLogger(__name__)

# standardized coefficients beyond this mean the unpenalized fit ran off towards separation
MAX_STANDARDIZED_COEF = 30.0


class LogisticModel(BaseModel):
    features: List[str]
    coefficients: List[float]
    intercept: float
    training_means: Dict[str, float]
    regularized: bool
    C: float
    converged: bool = True
    fallback: bool = False

    def predict_proba(self, frame: pd.DataFrame) -> np.ndarray:
        X = feature_matrix(frame, self.features)
        means = np.array([self.training_means[name] for name in self.features])
        X = np.where(np.isnan(X), means, X)
        return expit(X @ np.asarray(self.coefficients) + self.intercept)


def _fit(X: np.ndarray, y: np.ndarray, regularized: bool, C: float):
    scaler = StandardScaler().fit(X)
    Z = scaler.transform(X)
    model = LogisticRegression(penalty="l2" if regularized else None, C=C, solver="lbfgs", max_iter=1000, tol=1e-8)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        model.fit(Z, y)
    converged = not any(issubclass(w.category, ConvergenceWarning) for w in caught)
    scale = scaler.scale_
    coef_std = model.coef_.ravel()
    coef = coef_std / scale
    intercept = float(model.intercept_[0] - np.sum(coef_std * scaler.mean_ / scale))
    return coef, intercept, coef_std, converged


def fit_logistic_reference(
    frame: pd.DataFrame,
    feature_subset: Sequence[str],
    regularized: bool = True,
    C: float = 1.0,
) -> LogisticModel:
    features = list(validate_feature_subset(feature_subset))
    X = feature_matrix(frame, features)
    y = frame[LABEL_COLUMN].to_numpy(dtype=np.int64)
    complete = ~np.isnan(X).any(axis=1)
    X, y = X[complete], y[complete]
    dropped = int((~complete).sum())
    if dropped:
        logger.info(f"Logistic fit on {features}: dropped {dropped} knees with missing values")
    if min(int(y.sum()), int(y.size - y.sum())) < 2:
        raise InsufficientDataError(f"need 2 complete rows per class, got {int(y.sum())} positive of {y.size}")

    coef, intercept, coef_std, converged = _fit(X, y, regularized, C)
    fallback = False
    if not regularized and (not converged or np.max(np.abs(coef_std)) > MAX_STANDARDIZED_COEF):
        logger.warning("Unpenalized logistic fit did not converge (separation?); falling back to the penalized fit")
        coef, intercept, coef_std, converged = _fit(X, y, True, C)
        fallback = True

    return LogisticModel(
        features=features,
        coefficients=coef.tolist(),
        intercept=intercept,
        training_means=dict(zip(features, X.mean(axis=0).tolist())),
        regularized=regularized,
        C=C,
        converged=converged,
        fallback=fallback,
    )
