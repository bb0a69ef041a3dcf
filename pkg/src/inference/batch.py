"""Per-knee prediction tables."""
import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import pandas as pd

from src.cohort.schemas import KneeRecord
from src.imaging.schemas import PreparedImage
from src.inference.ensemble import predict_ensemble, progression_probability
from src.inference.schemas import EnsemblePrediction, HeadProbabilities
from src.nnmodel.snapshots import FoldModel

logger = logging.getLogger(__name__)

PROG_COLUMNS = ["p0", "p1", "p2"]
KL_COLUMNS = [f"pkl{i}" for i in range(5)]
PREDICTION_COLUMNS = ["subject_id", "side", *PROG_COLUMNS, *KL_COLUMNS, "p_progression_binary"]


def prediction_row(subject_id: str, side: str, pred: EnsemblePrediction) -> dict:
    row = {"subject_id": subject_id, "side": side}
    row.update(zip(PROG_COLUMNS, pred.mean.p_prog))
    row.update(zip(KL_COLUMNS, pred.mean.p_kl))
    row["p_progression_binary"] = progression_probability(pred)
    return row


def predict_records(
    fold_models: Sequence[FoldModel],
    records: Sequence[KneeRecord],
    images: Dict[Tuple[str, str], PreparedImage],
    expected_folds: Optional[int] = None,
) -> pd.DataFrame:
    rows = []
    for record in records:
        pred = predict_ensemble(fold_models, images[record.key], expected_folds)
        rows.append(prediction_row(record.subject_id, record.side.value, pred))
    logger.info(f"Predicted {len(rows)} knees with a {len(fold_models)}-fold ensemble")
    return sort_predictions(pd.DataFrame(rows, columns=PREDICTION_COLUMNS))


def sort_predictions(frame: pd.DataFrame) -> pd.DataFrame:
    return frame.sort_values(["subject_id", "side"], kind="mergesort").reset_index(drop=True)


def head_probabilities(row: pd.Series) -> HeadProbabilities:
    return HeadProbabilities.from_arrays(row[PROG_COLUMNS].to_numpy(float), row[KL_COLUMNS].to_numpy(float))


def write_predictions(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def read_predictions(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"subject_id": str, "side": str}, float_precision="round_trip")
