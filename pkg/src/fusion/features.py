"""
Second-level feature rows.

CNN columns hold the fold-ensemble (or, for training knees, out-of-fold)
probabilities; clinical columns come from the metadata as is, with missing
values kept as NaN.
"""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from src.cohort.schemas import ClinicalFeatures, KneeRecord, ProgressionLabel, Sex
from src.core.errors import CoverageError, SchemaError
from src.imaging.schemas import PreparedImage
from src.inference.batch import head_probabilities
from src.inference.schemas import HeadProbabilities
from src.inference.tta import predict_tta
from src.nnmodel.schemas import FoldSplit
from src.nnmodel.snapshots import FoldModel, ModelSnapshot
from src.nnmodel.splits import fold_of_subject

logger = logging.getLogger(__name__)

CNN_PROG_FEATURES = ("cnn_p0", "cnn_p1", "cnn_p2")
CNN_KL_FEATURES = tuple(f"cnn_kl{i}" for i in range(5))
CNN_FEATURES = CNN_PROG_FEATURES + CNN_KL_FEATURES
CLINICAL_FEATURES = ("age", "sex", "bmi", "injury", "surgery", "womac")
KL_FEATURE = "kl_baseline"
ALL_FEATURES = CNN_FEATURES + CLINICAL_FEATURES + (KL_FEATURE,)

LABEL_COLUMN = "label_binary"
ID_COLUMNS = ("subject_id", "side")


class FeatureRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    subject_id: str
    side: str
    cnn_p_prog: Optional[Tuple[float, float, float]] = None
    cnn_p_kl: Optional[Tuple[float, float, float, float, float]] = None
    age: Optional[float] = None
    sex: Optional[float] = None
    bmi: Optional[float] = None
    injury: Optional[float] = None
    surgery: Optional[float] = None
    womac: Optional[float] = None
    kl_baseline: Optional[float] = None
    label_binary: int = Field(ge=0, le=1)
    # fold whose snapshot produced the CNN columns
    source_fold: Optional[int] = None


def clinical_values(clinical: ClinicalFeatures) -> Dict[str, Optional[float]]:
    """Numeric encoding: sex female=0 male=1, history flags 0/1, missing as None."""

    def as_float(value):
        return None if value is None else float(value)

    sex = None if clinical.sex is None else float(clinical.sex == Sex.MALE)
    return {
        "age": as_float(clinical.age),
        "sex": sex,
        "bmi": as_float(clinical.bmi),
        "injury": as_float(clinical.injury),
        "surgery": as_float(clinical.surgery),
        "womac": as_float(clinical.womac_total),
        "kl_baseline": as_float(clinical.kl_baseline),
    }


def make_feature_row(
    record: KneeRecord,
    label: ProgressionLabel,
    probs: Optional[HeadProbabilities] = None,
    source_fold: Optional[int] = None,
) -> FeatureRow:
    return FeatureRow(
        subject_id=record.subject_id,
        side=record.side.value,
        cnn_p_prog=None if probs is None else probs.p_prog,
        cnn_p_kl=None if probs is None else probs.p_kl,
        label_binary=int(label.progressed),
        source_fold=source_fold,
        **clinical_values(record.clinical),
    )


def feature_frame(rows: Sequence[FeatureRow]) -> pd.DataFrame:
    """One row per knee sorted by (subject_id, side); every feature column present, NaN when missing."""
    data = []
    for row in rows:
        entry = {"subject_id": row.subject_id, "side": row.side, LABEL_COLUMN: row.label_binary}
        entry["source_fold"] = np.nan if row.source_fold is None else row.source_fold
        prog = row.cnn_p_prog or (np.nan,) * 3
        kl = row.cnn_p_kl or (np.nan,) * 5
        entry.update(zip(CNN_PROG_FEATURES, prog))
        entry.update(zip(CNN_KL_FEATURES, kl))
        for name in CLINICAL_FEATURES + (KL_FEATURE,):
            value = getattr(row, name)
            entry[name] = np.nan if value is None else value
        data.append(entry)
    columns = [*ID_COLUMNS, LABEL_COLUMN, "source_fold", *ALL_FEATURES]
    frame = pd.DataFrame(data, columns=columns)
    frame[list(ALL_FEATURES)] = frame[list(ALL_FEATURES)].astype(np.float64)
    return frame.sort_values(list(ID_COLUMNS), kind="mergesort").reset_index(drop=True)


def validate_feature_subset(features: Sequence[str]) -> Tuple[str, ...]:
    """Only known predictors; the label or identifiers can never be model inputs."""
    features = tuple(features)
    if not features:
        raise SchemaError("feature subset is empty")
    unknown = [name for name in features if name not in ALL_FEATURES]
    if unknown:
        raise SchemaError(f"not a fusion feature: {unknown}")
    if len(set(features)) != len(features):
        raise SchemaError(f"duplicate features in {features}")
    return features


def feature_matrix(frame: pd.DataFrame, features: Sequence[str]) -> np.ndarray:
    missing = [name for name in features if name not in frame.columns]
    if missing:
        raise SchemaError(f"feature columns missing from the frame: {missing}")
    return frame[list(features)].to_numpy(dtype=np.float64)


def collect_oof_features(
    fold_models: Sequence[FoldModel],
    splits: Sequence[FoldSplit],
    records: Sequence[KneeRecord],
    labels: Sequence[ProgressionLabel],
    images: Dict[Tuple[str, str], PreparedImage],
) -> List[FeatureRow]:
    """
    Every training knee gets CNN features from the one fold model that did not
    see its subject during training.
    """
    models = {fold_index: model for fold_index, model in fold_models}
    val_fold = fold_of_subject(splits)
    rows, seen = [], set()
    for record, label in zip(records, labels):
        if record.key in seen:
            raise CoverageError(f"knee {record.key} appears twice")
        seen.add(record.key)
        fold = val_fold.get(record.subject_id)
        if fold is None or fold not in models:
            raise CoverageError(f"subject {record.subject_id} is in no validation fold with a model")
        probs = predict_tta(models[fold], images[record.key])
        rows.append(make_feature_row(record, label, probs, source_fold=fold))
    logger.info(f"Collected out-of-fold CNN features for {len(rows)} knees")
    return rows


def check_oof_discipline(frame: pd.DataFrame, snapshots: Sequence[ModelSnapshot]) -> int:
    """Number of rows whose producing snapshot trained on the row's subject (0 when clean)."""
    trained_on = {
        s.fold_index: set(s.info.split.train_subject_ids) if s.info.split is not None else set()
        for s in snapshots
    }
    violations = 0
    for subject_id, fold in zip(frame["subject_id"], frame["source_fold"]):
        if pd.isna(fold) or subject_id in trained_on.get(int(fold), set()):
            violations += 1
    return violations


def rows_from_predictions(
    records: Sequence[KneeRecord],
    labels: Sequence[ProgressionLabel],
    predictions: pd.DataFrame,
) -> List[FeatureRow]:
    """Join a per-knee prediction table (see inference.batch) onto the cohort."""
    indexed = predictions.set_index(["subject_id", "side"])
    rows = []
    for record, label in zip(records, labels):
        key = (record.subject_id, record.side.value)
        if key not in indexed.index:
            raise CoverageError(f"no CNN prediction for knee {key}")
        row = indexed.loc[key]
        source_fold = row.get("source_fold")
        source_fold = None if source_fold is None or pd.isna(source_fold) else int(source_fold)
        rows.append(make_feature_row(record, label, head_probabilities(row), source_fold))
    return rows


def write_feature_frame(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def read_feature_frame(path: Path) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"subject_id": str, "side": str}, float_precision="round_trip")
    frame[list(ALL_FEATURES)] = frame[list(ALL_FEATURES)].astype(np.float64)
    return frame
