from typing import Optional, Union

import numpy as np

from src.cohort.schemas import ClinicalFeatures
from src.core.errors import SchemaError
from src.fusion.features import (
    CLINICAL_FEATURES,
    CNN_FEATURES,
    KL_FEATURE,
    FeatureRow,
    clinical_values,
    feature_frame,
)
from src.fusion.gbm import BoostedTreeModel
from src.fusion.logistic import LogisticModel
from src.inference.schemas import EnsemblePrediction

FusedModel = Union[BoostedTreeModel, LogisticModel]


def stacked_features(include_kl: bool) -> tuple:
    return CNN_FEATURES + CLINICAL_FEATURES + ((KL_FEATURE,) if include_kl else ())


def predict_fused(
    model: FusedModel,
    pred: Optional[EnsemblePrediction],
    clinical: ClinicalFeatures,
    include_kl: bool,
) -> float:
    """P(progression) for one knee from its CNN ensemble output and clinical data."""
    expected = stacked_features(include_kl)
    if tuple(model.features) != expected:
        raise SchemaError(f"model trained on {tuple(model.features)} but asked for {expected}")
    if pred is None:
        raise SchemaError("stacked models need the CNN ensemble prediction")

    values = clinical_values(clinical)
    if not include_kl:
        values.pop(KL_FEATURE)
    row = FeatureRow(
        subject_id="",
        side="",
        cnn_p_prog=pred.mean.p_prog,
        cnn_p_kl=pred.mean.p_kl,
        label_binary=0,
        **values,
    )
    probability = float(model.predict_proba(feature_frame([row]))[0])
    return float(np.clip(probability, 0.0, 1.0))
