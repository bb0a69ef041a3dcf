"""
Inclusion / exclusion rules, applied in flowchart order.

1. baseline KL missing
2. knee replacement at baseline
3. end-stage OA (KL-4) at baseline
4. test role only: subjects who died during follow-up
5. knees that never progressed and were not examined at the last follow-up
"""
import logging
from typing import Callable, List, Optional, Sequence, Tuple

from src.cohort.labels import find_progression_event
from src.cohort.schemas import KneeRecord, Role, SelectionStep

logger = logging.getLogger(__name__)

LAST_FOLLOWUP_MONTHS = {Role.TRAIN: 96, Role.TEST: 84}


def _examined_at(record: KneeRecord, month: int) -> bool:
    return any(v.visit_month == month and v.examined for v in record.visits)


def _rules(role: Role, last_followup: int) -> List[Tuple[str, Callable[[KneeRecord], bool]]]:
    """(step name, keep predicate) pairs."""
    rules = [
        ("baseline KL present", lambda r: r.clinical.kl_baseline is not None),
        ("no TKR at baseline", lambda r: not r.baseline.tkr_flag),
        ("baseline KL below 4", lambda r: r.clinical.kl_baseline < 4),
    ]
    if role == Role.TEST:
        rules.append(("subject alive during follow-up", lambda r: not r.died_during_followup))
    rules.append((
        f"progressed or examined at month {last_followup}",
        lambda r: find_progression_event(r) is not None or _examined_at(r, last_followup),
    ))
    return rules


def selection_flow(
    records: Sequence[KneeRecord],
    role: Role,
    last_followup: Optional[int] = None,
) -> Tuple[List[KneeRecord], List[SelectionStep]]:
    role = Role(role)
    last_followup = LAST_FOLLOWUP_MONTHS[role] if last_followup is None else last_followup

    kept = list(records)
    steps = [SelectionStep(
        step="all knees",
        knees_remaining=len(kept),
        subjects_remaining=len({r.subject_id for r in kept}),
    )]
    for name, keep in _rules(role, last_followup):
        kept = [r for r in kept if keep(r)]
        steps.append(SelectionStep(
            step=name,
            knees_remaining=len(kept),
            subjects_remaining=len({r.subject_id for r in kept}),
        ))
    return kept, steps


def select_cohort(
    records: Sequence[KneeRecord],
    role: Role,
    last_followup: Optional[int] = None,
) -> List[KneeRecord]:
    kept, steps = selection_flow(records, role, last_followup)
    for step in steps:
        logger.info(f"[{Role(role).value}] {step.step}: {step.knees_remaining} knees, {step.subjects_remaining} subjects")
    return kept
