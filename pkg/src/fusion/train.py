"""Fitting and scoring every configured model variant on the second-level features."""
import logging
from typing import Sequence

import pandas as pd

from src.core.config import FusionConfig
from src.fusion.bundle import FittedVariant, FusionBundle
from src.fusion.features import ID_COLUMNS, KL_FEATURE, LABEL_COLUMN
from src.fusion.gbm import fit_gbm
from src.fusion.logistic import fit_logistic_reference
from src.fusion.tuning import tune_gbm
from src.fusion.variants import ModelVariant, get_variant
from src.nnmodel.schemas import FoldSplit

logger = logging.getLogger(__name__)


def cnn_score(frame: pd.DataFrame) -> pd.Series:
    """The CNN on its own: P(prog) = p1 + p2."""
    return frame["cnn_p1"] + frame["cnn_p2"]


def fit_variant(
    variant: ModelVariant,
    frame: pd.DataFrame,
    splits: Sequence[FoldSplit],
    cfg: FusionConfig,
    seed: int,
) -> FittedVariant:
    if variant.kind == "cnn":
        return FittedVariant(variant.id, variant.kind)

    if variant.kind == "lr":
        penalized = fit_logistic_reference(frame, variant.features, regularized=True, C=cfg.lr_c)
        plain = fit_logistic_reference(frame, variant.features, regularized=False, C=cfg.lr_c)
        chosen, alternate = (penalized, plain) if cfg.lr_regularized else (plain, penalized)
        return FittedVariant(variant.id, variant.kind, chosen, alternate=alternate)

    best, trials = tune_gbm(frame, variant.features, splits, cfg.n_trials, seed)
    model = fit_gbm(frame, variant.features, best, splits, cfg.mode, seed)
    return FittedVariant(variant.id, variant.kind, model, trials=trials)


def train_fusion_models(
    frame: pd.DataFrame,
    splits: Sequence[FoldSplit],
    cfg: FusionConfig,
    seed: int,
    manifest_hash: str = "",
) -> FusionBundle:
    """Fit every variant in cfg.variants on the out-of-fold feature frame."""
    variants = {}
    for variant_id in sorted(set(cfg.variants)):
        variant = get_variant(variant_id)
        logger.info(f"Fitting {variant.key} ({variant.name})")
        variants[variant_id] = fit_variant(variant, frame, splits, cfg, seed)
    return FusionBundle(variants=variants, manifest_hash=manifest_hash, mode=cfg.mode)


def predict_variants(bundle: FusionBundle, frame: pd.DataFrame) -> pd.DataFrame:
    """One score column per fitted variant (`model_<id>`), plus identifiers, label and baseline KL."""
    scores = frame[[*ID_COLUMNS, LABEL_COLUMN, KL_FEATURE]].copy()
    for variant_id, fitted in sorted(bundle.variants.items()):
        key = get_variant(variant_id).key
        if fitted.kind == "cnn":
            scores[key] = cnn_score(frame).to_numpy()
        else:
            scores[key] = fitted.model.predict_proba(frame)
    return scores
