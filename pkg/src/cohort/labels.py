import logging
from typing import List, Optional, Sequence, Tuple

from src.cohort.schemas import (
    FAST_PROGRESSION_MONTHS,
    KneeRecord,
    ProgressionLabel,
    ProgressionReason,
)
from src.core.errors import LabelingError

logger = logging.getLogger(__name__)


def _is_kl_progression(baseline_kl: int, kl: Optional[int]) -> bool:
    if kl is None or kl <= baseline_kl:
        return False
    # 0 -> 1 alone is not counted; 0 -> 2 and beyond is
    return not (baseline_kl == 0 and kl == 1)


def find_progression_event(record: KneeRecord) -> Optional[Tuple[int, ProgressionReason]]:
    """Earliest follow-up visit showing a KL increase or a knee replacement."""
    baseline_kl = record.clinical.kl_baseline
    if baseline_kl is None:
        raise LabelingError(f"knee {record.key} has no baseline KL grade")
    for visit in record.follow_ups:
        if visit.tkr_flag:
            return visit.visit_month, ProgressionReason.TKR
        if _is_kl_progression(baseline_kl, visit.kl_grade):
            return visit.visit_month, ProgressionReason.KL_INCREASE
    return None


def assign_progression_label(record: KneeRecord) -> ProgressionLabel:
    if not record.follow_ups:
        raise LabelingError(f"knee {record.key} has no follow-up visits; progression is undecidable")
    event = find_progression_event(record)
    if event is None:
        return ProgressionLabel(y=0)
    month, reason = event
    y = 1 if month <= FAST_PROGRESSION_MONTHS else 2
    return ProgressionLabel(y=y, progression_month=month, reason=reason)


def label_cohort(records: Sequence[KneeRecord]) -> List[ProgressionLabel]:
    labels = [assign_progression_label(record) for record in records]
    counts = {y: sum(1 for label in labels if label.y == y) for y in (0, 1, 2)}
    logger.info(f"Labelled {len(labels)} knees: {counts}")
    return labels
