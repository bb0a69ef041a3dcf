from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

PROB_TOLERANCE = 1e-6


def _check_distribution(v: Tuple[float, ...]) -> Tuple[float, ...]:
    values = np.asarray(v, dtype=np.float64)
    if np.any(values < -PROB_TOLERANCE) or np.any(values > 1 + PROB_TOLERANCE):
        raise ValueError(f"probabilities must lie in [0, 1], got {v}")
    if abs(values.sum() - 1.0) > PROB_TOLERANCE:
        raise ValueError(f"probabilities must sum to 1, got {values.sum():.8f}")
    return v


class HeadProbabilities(BaseModel):
    model_config = ConfigDict(frozen=True)

    p_prog: Tuple[float, float, float]
    p_kl: Tuple[float, float, float, float, float]

    @field_validator("p_prog", "p_kl")
    @classmethod
    def _is_distribution(cls, v):
        return _check_distribution(v)

    @classmethod
    def from_arrays(cls, p_prog: np.ndarray, p_kl: np.ndarray) -> "HeadProbabilities":
        return cls(p_prog=tuple(float(p) for p in p_prog), p_kl=tuple(float(p) for p in p_kl))


class EnsemblePrediction(BaseModel):
    model_config = ConfigDict(frozen=True)

    fold_indices: Tuple[int, ...]
    per_fold: List[HeadProbabilities]
    mean: HeadProbabilities
    p_progression_binary: float

    @model_validator(mode="after")
    def _consistent(self):
        if len(self.fold_indices) != len(self.per_fold):
            raise ValueError("one fold index per fold prediction")
        expected = self.mean.p_prog[1] + self.mean.p_prog[2]
        if abs(self.p_progression_binary - expected) > PROB_TOLERANCE:
            raise ValueError("p_progression_binary must equal p1 + p2 of the mean")
        return self
