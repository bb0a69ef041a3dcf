"""
Reading and writing the longitudinal metadata table.

One row per (subject, side, visit). Missing cells stay missing: they are
mapped to None, never to sentinel numbers.
"""
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from src.cohort.schemas import (
    ClinicalFeatures,
    KneeRecord,
    ProgressionLabel,
    ProgressionReason,
    Sex,
    Side,
    VisitObservation,
)
from src.core.errors import IntegrityError, ParseError

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = (
    "subject_id", "side", "visit_month", "kl", "tkr", "examined", "died",
    "age", "sex", "bmi", "injury", "surgery", "womac",
    "image_path", "landmarks_path", "beam_angle",
)
OPTIONAL_COLUMNS = ("pixel_spacing",)
LABEL_COLUMNS = ("y", "progression_month", "progression_reason")


def _blank(value: str) -> bool:
    return value is None or str(value).strip() == ""


def _int(value: str, row: int, column: str, allowed: Optional[set] = None) -> Optional[int]:
    if _blank(value):
        return None
    try:
        number = float(value)
    except ValueError:
        raise ParseError(row, f"column '{column}' is not numeric: {value!r}")
    if not number.is_integer():
        raise ParseError(row, f"column '{column}' must be an integer: {value!r}")
    number = int(number)
    if allowed is not None and number not in allowed:
        raise ParseError(row, f"column '{column}' value {number} not in {sorted(allowed)}")
    return number


def _required_int(value: str, row: int, column: str, allowed: Optional[set] = None) -> int:
    number = _int(value, row, column, allowed)
    if number is None:
        raise ParseError(row, f"column '{column}' is required")
    return number


def _float(value: str, row: int, column: str) -> Optional[float]:
    if _blank(value):
        return None
    try:
        return float(value)
    except ValueError:
        raise ParseError(row, f"column '{column}' is not numeric: {value!r}")


def _flag(value: str, row: int, column: str) -> Optional[bool]:
    number = _int(value, row, column, allowed={0, 1})
    return None if number is None else bool(number)


def read_table(path: Path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"metadata file not found: {path}")
    # sep=None sniffs the delimiter; everything stays text until validated
    frame = pd.read_csv(path, sep=None, engine="python", dtype=str, keep_default_na=False)
    missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
    if missing:
        raise ParseError(0, f"missing required columns: {missing}")
    return frame


def parse_metadata(metadata_file: Path, images_dir: Path) -> List[KneeRecord]:
    """Group metadata rows into one KneeRecord per (subject_id, side)."""
    frame = read_table(metadata_file)
    images_dir = Path(images_dir)

    grouped: Dict[Tuple[str, str], Dict[int, Tuple[int, dict]]] = defaultdict(dict)
    for index, raw in enumerate(frame.to_dict(orient="records")):
        row = index + 1
        subject_id = str(raw["subject_id"]).strip()
        if not subject_id:
            raise ParseError(row, "subject_id is empty")
        side_code = str(raw["side"]).strip().upper()
        if side_code not in ("L", "R"):
            raise ParseError(row, f"side must be L or R, got {raw['side']!r}")
        month = _required_int(raw["visit_month"], row, "visit_month")
        if month < 0:
            raise ParseError(row, f"visit_month must be >= 0, got {month}")
        visits = grouped[(subject_id, side_code)]
        if month in visits:
            raise IntegrityError(
                f"duplicate visit ({subject_id}, {side_code}, {month}) at rows {visits[month][0]} and {row}"
            )
        visits[month] = (row, raw)

    records = []
    for (subject_id, side_code), visits in grouped.items():
        if 0 not in visits:
            raise IntegrityError(f"knee ({subject_id}, {side_code}) has no baseline visit")
        observations = []
        died = False
        for month in sorted(visits):
            row, raw = visits[month]
            observations.append(
                VisitObservation(
                    visit_month=month,
                    kl_grade=_int(raw["kl"], row, "kl", allowed={0, 1, 2, 3, 4}),
                    tkr_flag=bool(_flag(raw["tkr"], row, "tkr")),
                    examined=bool(_flag(raw["examined"], row, "examined")),
                )
            )
            died = died or bool(_flag(raw["died"], row, "died"))

        row, base = visits[0]
        sex = str(base["sex"]).strip().upper()
        if sex not in ("", "F", "M"):
            raise ParseError(row, f"sex must be F or M, got {base['sex']!r}")
        clinical = ClinicalFeatures(
            age=_float(base["age"], row, "age"),
            sex={"F": Sex.FEMALE, "M": Sex.MALE}.get(sex),
            bmi=_float(base["bmi"], row, "bmi"),
            injury=_flag(base["injury"], row, "injury"),
            surgery=_flag(base["surgery"], row, "surgery"),
            womac_total=_float(base["womac"], row, "womac"),
            kl_baseline=observations[0].kl_grade,
        )
        records.append(
            KneeRecord(
                subject_id=subject_id,
                side=Side.from_code(side_code),
                visits=tuple(observations),
                clinical=clinical,
                image_ref=images_dir / str(base["image_path"]).strip(),
                landmarks_ref=images_dir / str(base["landmarks_path"]).strip(),
                beam_angle=_required_int(base["beam_angle"], row, "beam_angle"),
                died_during_followup=died,
                pixel_spacing=_float(base.get("pixel_spacing", ""), row, "pixel_spacing"),
            )
        )

    records.sort(key=lambda r: r.key)
    logger.info(f"Parsed {len(records)} knees from {len(frame)} rows of {metadata_file}")
    return records


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    return str(value)


def _path_cell(ref: Path, images_dir: Path) -> str:
    # paths outside images_dir stay absolute; parse_metadata joins them back unchanged
    ref = Path(ref)
    if ref.is_relative_to(images_dir):
        return ref.relative_to(images_dir).as_posix()
    return ref.as_posix()


def cohort_frame(
    records: Sequence[KneeRecord],
    labels: Sequence[ProgressionLabel],
    images_dir: Path,
) -> pd.DataFrame:
    """The metadata table again, plus y / progression_month, sorted by (subject_id, side)."""
    if len(records) != len(labels):
        raise ValueError(f"{len(records)} records but {len(labels)} labels")
    images_dir = Path(images_dir)
    rows = []
    for record, label in sorted(zip(records, labels), key=lambda pair: pair[0].key):
        c = record.clinical
        for visit in record.visits:
            rows.append({
                "subject_id": record.subject_id,
                "side": record.side.code,
                "visit_month": visit.visit_month,
                "kl": _cell(visit.kl_grade),
                "tkr": _cell(visit.tkr_flag),
                "examined": _cell(visit.examined),
                "died": _cell(record.died_during_followup),
                "age": _cell(c.age),
                "sex": {Sex.FEMALE: "F", Sex.MALE: "M"}.get(c.sex, ""),
                "bmi": _cell(c.bmi),
                "injury": _cell(c.injury),
                "surgery": _cell(c.surgery),
                "womac": _cell(c.womac_total),
                "image_path": _path_cell(record.image_ref, images_dir),
                "landmarks_path": _path_cell(record.landmarks_ref, images_dir),
                "beam_angle": record.beam_angle,
                "pixel_spacing": _cell(record.pixel_spacing),
                "y": label.y,
                "progression_month": _cell(label.progression_month),
                "progression_reason": label.reason.value,
            })
    columns = list(REQUIRED_COLUMNS) + list(OPTIONAL_COLUMNS) + list(LABEL_COLUMNS)
    return pd.DataFrame(rows, columns=columns)


def write_cohort_table(
    records: Sequence[KneeRecord],
    labels: Sequence[ProgressionLabel],
    images_dir: Path,
    path: Path,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cohort_frame(records, labels, images_dir).to_csv(path, index=False)
    return path


def read_cohort_table(path: Path, images_dir: Path) -> Tuple[List[KneeRecord], List[ProgressionLabel]]:
    """Inverse of write_cohort_table: records and their labels, aligned."""
    records = parse_metadata(path, images_dir)
    frame = read_table(path)
    missing = [c for c in LABEL_COLUMNS if c not in frame.columns]
    if missing:
        raise ParseError(0, f"cohort table lacks label columns: {missing}")
    baseline = frame[frame["visit_month"].astype(int) == 0]
    by_key = {}
    for index, raw in baseline.iterrows():
        month = _int(raw["progression_month"], index + 1, "progression_month")
        by_key[(raw["subject_id"], Side.from_code(raw["side"]).value)] = ProgressionLabel(
            y=int(raw["y"]),
            progression_month=month,
            reason=ProgressionReason(raw["progression_reason"]),
        )
    return records, [by_key[r.key] for r in records]
