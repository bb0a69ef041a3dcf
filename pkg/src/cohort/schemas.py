from enum import Enum
from pathlib import Path
from typing import Dict, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# "within the next 60 months" is read inclusively
FAST_PROGRESSION_MONTHS = 60


class Side(str, Enum):
    LEFT = "left"
    RIGHT = "right"

    @property
    def code(self) -> str:
        return "L" if self is Side.LEFT else "R"

    @classmethod
    def from_code(cls, code: str) -> "Side":
        return {"L": cls.LEFT, "R": cls.RIGHT}[code]


class Sex(str, Enum):
    FEMALE = "female"
    MALE = "male"


class Role(str, Enum):
    TRAIN = "train"
    TEST = "test"


class VisitObservation(BaseModel):
    model_config = ConfigDict(frozen=True)

    visit_month: int = Field(ge=0)
    kl_grade: Optional[int] = Field(default=None, ge=0, le=4)
    tkr_flag: bool = False
    examined: bool = True


class ClinicalFeatures(BaseModel):
    model_config = ConfigDict(frozen=True)

    age: Optional[float] = None
    sex: Optional[Sex] = None
    bmi: Optional[float] = None
    injury: Optional[bool] = None
    surgery: Optional[bool] = None
    womac_total: Optional[float] = Field(default=None, ge=0)
    kl_baseline: Optional[int] = Field(default=None, ge=0, le=4)


class KneeRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    subject_id: str
    side: Side
    visits: Tuple[VisitObservation, ...]
    clinical: ClinicalFeatures
    image_ref: Path
    landmarks_ref: Path
    beam_angle: int = 10
    died_during_followup: bool = False
    pixel_spacing: Optional[float] = Field(default=None, gt=0)

    @field_validator("visits")
    @classmethod
    def _sorted_with_one_baseline(cls, v):
        months = [visit.visit_month for visit in v]
        if months != sorted(months) or len(set(months)) != len(months):
            raise ValueError(f"visits must be strictly sorted by month, got {months}")
        if not months or months[0] != 0:
            raise ValueError("exactly one baseline visit (month 0) is required")
        return v

    @property
    def key(self) -> Tuple[str, str]:
        return self.subject_id, self.side.value

    @property
    def baseline(self) -> VisitObservation:
        return self.visits[0]

    @property
    def follow_ups(self) -> Tuple[VisitObservation, ...]:
        return self.visits[1:]


class ProgressionReason(str, Enum):
    KL_INCREASE = "kl_increase"
    TKR = "tkr"
    NONE = "none"


class ProgressionLabel(BaseModel):
    model_config = ConfigDict(frozen=True)

    y: int = Field(ge=0, le=2)
    progression_month: Optional[int] = None
    reason: ProgressionReason = ProgressionReason.NONE

    @model_validator(mode="after")
    def _consistent(self):
        if self.y == 0:
            if self.progression_month is not None or self.reason != ProgressionReason.NONE:
                raise ValueError("non-progressors carry no progression month or reason")
            return self
        if self.progression_month is None or self.reason == ProgressionReason.NONE:
            raise ValueError("progressors need a progression month and a reason")
        fast = self.progression_month <= FAST_PROGRESSION_MONTHS
        if (self.y == 1) != fast:
            raise ValueError(f"y={self.y} inconsistent with month {self.progression_month}")
        return self

    @property
    def progressed(self) -> bool:
        return self.y > 0


class CohortSummary(BaseModel):
    n_knees: int = 0
    n_subjects: int = 0
    # "progressor" / "non_progressor" -> baseline KL -> knees
    counts_by_kl: Dict[str, Dict[int, int]] = Field(
        default_factory=lambda: {"progressor": {}, "non_progressor": {}}
    )
    counts_by_class: Dict[int, int] = Field(default_factory=lambda: {0: 0, 1: 0, 2: 0})
    age_mean: Optional[float] = None
    age_sd: Optional[float] = None
    bmi_mean: Optional[float] = None
    bmi_sd: Optional[float] = None
    n_female: int = 0
    n_male: int = 0
    n_left: int = 0
    n_right: int = 0


class SelectionStep(BaseModel):
    step: str
    knees_remaining: int
    subjects_remaining: int
