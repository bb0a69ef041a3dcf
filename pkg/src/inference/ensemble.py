from typing import Mapping, Optional, Sequence

import numpy as np

from src.core.errors import DuplicateFoldError, FoldCountError
from src.imaging.schemas import PreparedImage
from src.inference.schemas import EnsemblePrediction, HeadProbabilities
from src.inference.tta import predict_tta
from src.nnmodel.snapshots import FoldModel


def ensemble_from_probabilities(per_fold: Mapping[int, HeadProbabilities]) -> EnsemblePrediction:
    """Arithmetic mean over folds, always accumulated in ascending fold order."""
    if not per_fold:
        raise ValueError("an ensemble needs at least one fold")
    folds = tuple(sorted(per_fold))
    ordered = [per_fold[f] for f in folds]
    p_prog = np.mean([p.p_prog for p in ordered], axis=0)
    p_kl = np.mean([p.p_kl for p in ordered], axis=0)
    mean = HeadProbabilities.from_arrays(p_prog, p_kl)
    return EnsemblePrediction(
        fold_indices=folds,
        per_fold=ordered,
        mean=mean,
        p_progression_binary=mean.p_prog[1] + mean.p_prog[2],
    )


def check_fold_count(fold_models: Sequence[FoldModel], expected_folds: int) -> None:
    if len(fold_models) != expected_folds:
        raise FoldCountError(f"expected {expected_folds} fold models, got {len(fold_models)}")


def predict_ensemble(
    fold_models: Sequence[FoldModel], img: PreparedImage, expected_folds: Optional[int] = None
) -> EnsemblePrediction:
    """TTA prediction of every fold model, then the mean over folds."""
    if expected_folds is not None:
        check_fold_count(fold_models, expected_folds)
    per_fold = {}
    for fold_index, model in fold_models:
        if fold_index in per_fold:
            raise DuplicateFoldError(f"fold {fold_index} appears twice in the ensemble")
        per_fold[fold_index] = predict_tta(model, img)
    return ensemble_from_probabilities(per_fold)


def progression_probability(pred: EnsemblePrediction) -> float:
    """P(prog | x) = P(y=1 | x) + P(y=2 | x)."""
    return pred.mean.p_prog[1] + pred.mean.p_prog[2]
