from typing import Sequence

import numpy as np

from src.cohort.schemas import CohortSummary, KneeRecord, ProgressionLabel, Sex, Side


def _mean_sd(values):
    values = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if values.size == 0:
        return None, None
    sd = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return float(values.mean()), sd


def cohort_summary(records: Sequence[KneeRecord], labels: Sequence[ProgressionLabel]) -> CohortSummary:
    """Knee-level counts per (progressed, baseline KL) plus subject-level aggregates."""
    if len(records) != len(labels):
        raise ValueError(f"{len(records)} records but {len(labels)} labels")

    summary = CohortSummary()
    summary.n_knees = len(records)
    for record, label in zip(records, labels):
        group = "progressor" if label.progressed else "non_progressor"
        kl = record.clinical.kl_baseline
        summary.counts_by_kl[group][kl] = summary.counts_by_kl[group].get(kl, 0) + 1
        summary.counts_by_class[label.y] += 1
        if record.side == Side.LEFT:
            summary.n_left += 1
        else:
            summary.n_right += 1

    subject_level = subject_summary(records)
    for field in ("n_subjects", "age_mean", "age_sd", "bmi_mean", "bmi_sd", "n_female", "n_male"):
        setattr(summary, field, getattr(subject_level, field))
    return summary


def subject_summary(records: Sequence[KneeRecord]) -> CohortSummary:
    """Age, BMI and sex aggregated once per subject."""
    subjects = {}
    for record in records:
        subjects.setdefault(record.subject_id, record.clinical)

    summary = CohortSummary(n_subjects=len(subjects))
    summary.age_mean, summary.age_sd = _mean_sd(c.age for c in subjects.values())
    summary.bmi_mean, summary.bmi_sd = _mean_sd(c.bmi for c in subjects.values())
    summary.n_female = sum(1 for c in subjects.values() if c.sex == Sex.FEMALE)
    summary.n_male = sum(1 for c in subjects.values() if c.sex == Sex.MALE)
    return summary
