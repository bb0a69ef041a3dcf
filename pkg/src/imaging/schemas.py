from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.cohort.schemas import Side

ROI_SIZE_MM = 140.0
PREPARED_SIZE = 310
PREPARED_SPACING_MM = 0.45
CROP_SIZE = 300

PLATEAU_ENDPOINTS = ("tibial_plateau_left", "tibial_plateau_right")


class _ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class RawImage(_ArrayModel):
    pixels: np.ndarray
    pixel_spacing: float = Field(gt=0)

    @field_validator("pixels")
    @classmethod
    def _check_pixels(cls, v: np.ndarray) -> np.ndarray:
        if v.ndim != 2 or min(v.shape) < 1:
            raise ValueError(f"expected a non-empty 2-D image, got shape {v.shape}")
        if np.any(v < 0):
            raise ValueError("raw intensities must be non-negative")
        return v


class LandmarkSet(BaseModel):
    """Named (x, y) pixel coordinates on the femur and tibia margins."""

    model_config = ConfigDict(frozen=True)

    points: Dict[str, Tuple[float, float]]

    @field_validator("points")
    @classmethod
    def _has_plateau(cls, v):
        missing = [name for name in PLATEAU_ENDPOINTS if name not in v]
        if missing:
            raise ValueError(f"missing plateau landmarks: {missing}")
        return v

    def plateau_endpoints(self) -> Tuple[np.ndarray, np.ndarray]:
        a, b = (np.asarray(self.points[name], dtype=np.float64) for name in PLATEAU_ENDPOINTS)
        return a, b

    def femur_points(self) -> np.ndarray:
        pts = [p for name, p in self.points.items() if name.startswith("femur")]
        return np.asarray(pts, dtype=np.float64).reshape(-1, 2)


class RoiImage(_ArrayModel):
    pixels: np.ndarray
    side: Side
    pixel_spacing: float = Field(gt=0)
    physical_size_mm: float = ROI_SIZE_MM
    # landmark positions in ROI pixel coordinates, (x, y)
    landmarks: Dict[str, Tuple[float, float]] = Field(default_factory=dict)

    @field_validator("pixels")
    @classmethod
    def _square(cls, v: np.ndarray) -> np.ndarray:
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] < 1:
            raise ValueError(f"ROI must be a non-empty square, got shape {v.shape}")
        return v


class PreparedImage(_ArrayModel):
    pixels: np.ndarray
    side: Side
    flipped: bool
    pixel_spacing: float = PREPARED_SPACING_MM

    @field_validator("pixels")
    @classmethod
    def _check(cls, v: np.ndarray) -> np.ndarray:
        if v.shape != (PREPARED_SIZE, PREPARED_SIZE):
            raise ValueError(f"prepared image must be {PREPARED_SIZE}x{PREPARED_SIZE}, got {v.shape}")
        if v.dtype != np.uint8:
            raise ValueError(f"prepared image must be uint8, got {v.dtype}")
        return v

    @model_validator(mode="after")
    def _flip_matches_side(self):
        if self.flipped != (self.side == Side.LEFT):
            raise ValueError("flipped must be true exactly for left knees")
        return self


class AugmentationParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    # amplitude of additive zero-mean uniform noise, in 8-bit intensity levels
    noise_sigma: float = Field(default=5.0, ge=0)
    rotation_range: float = Field(default=5.0, ge=0)
    crop_size: int = Field(default=CROP_SIZE, gt=0, le=PREPARED_SIZE)
    gamma_range: Tuple[float, float] = (0.7, 1.5)
    fixed_crop_offset: Optional[Tuple[int, int]] = None

    @field_validator("gamma_range")
    @classmethod
    def _positive_gamma(cls, v):
        lo, hi = v
        if lo <= 0 or hi <= 0 or lo > hi:
            raise ValueError(f"gamma_range must be a positive interval, got {v}")
        return v
