"""
Subject-wise stratified K-fold splitting.

Both knees of a subject always share a fold. Subjects are assigned greedily,
heaviest first, to the fold whose progressor and knee counts are furthest
below their targets, which keeps every fold's progressor prevalence close to
the global one.
"""
import logging
from collections import defaultdict
from typing import Dict, List, Sequence

import numpy as np

from src.cohort.schemas import KneeRecord, ProgressionLabel
from src.core.errors import SplitError
from src.nnmodel.schemas import FoldSplit

logger = logging.getLogger(__name__)


def make_cv_splits(
    records: Sequence[KneeRecord],
    labels: Sequence[ProgressionLabel],
    k: int = 5,
    seed: int = 42,
) -> List[FoldSplit]:
    if len(records) != len(labels):
        raise SplitError(f"{len(records)} records but {len(labels)} labels")

    knees: Dict[str, int] = defaultdict(int)
    positives: Dict[str, int] = defaultdict(int)
    for record, label in zip(records, labels):
        knees[record.subject_id] += 1
        positives[record.subject_id] += int(label.progressed)

    subjects = sorted(knees)
    if len(subjects) < k:
        raise SplitError(f"{len(subjects)} subjects cannot fill {k} folds")

    rng = np.random.default_rng(seed)
    order = [subjects[i] for i in rng.permutation(len(subjects))]
    # stable sort keeps the shuffled order inside each (positives, knees) stratum
    order.sort(key=lambda s: (-positives[s], -knees[s]))

    target_pos = sum(positives.values()) / k
    target_neg = (sum(knees.values()) - sum(positives.values())) / k
    fold_pos = np.zeros(k)
    fold_neg = np.zeros(k)
    fold_subjects = np.zeros(k, dtype=int)
    assignment: Dict[str, int] = {}

    for subject in order:
        pos = positives[subject]
        neg = knees[subject] - pos
        # increase of squared deviation from target if the subject joined each fold
        cost = (
            (fold_pos + pos - target_pos) ** 2 - (fold_pos - target_pos) ** 2
            + (fold_neg + neg - target_neg) ** 2 - (fold_neg - target_neg) ** 2
        )
        best = min(range(k), key=lambda f: (cost[f], fold_subjects[f], f))
        assignment[subject] = best
        fold_pos[best] += pos
        fold_neg[best] += neg
        fold_subjects[best] += 1

    splits = []
    for fold in range(k):
        val = tuple(sorted(s for s in subjects if assignment[s] == fold))
        train = tuple(sorted(s for s in subjects if assignment[s] != fold))
        splits.append(FoldSplit(fold_index=fold, train_subject_ids=train, val_subject_ids=val))
        prevalence = fold_pos[fold] / max(fold_pos[fold] + fold_neg[fold], 1)
        logger.info(f"Fold {fold}: {len(val)} val subjects, prevalence {prevalence:.3f}")
    return splits


def fold_of_subject(splits: Sequence[FoldSplit]) -> Dict[str, int]:
    """subject_id -> index of the fold whose validation set holds it."""
    mapping = {}
    for split in splits:
        for subject in split.val_subject_ids:
            mapping[subject] = split.fold_index
    return mapping
