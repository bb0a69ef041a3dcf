"""
GradCAM over the five-crop, multi-fold ensemble.

The target is the ensemble's binary progression probability: the mean over
folds and crops of p1 + p2. Each (fold, crop) pair contributes a map computed
from the gradient of that target w.r.t. its last conv feature maps.
"""
import logging
from dataclasses import dataclass
from typing import List, Literal, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from src.core.errors import UnsupportedArchitectureError
from src.imaging.augment import five_crop_offsets
from src.imaging.schemas import CROP_SIZE, PreparedImage
from src.inference.tta import crop_batch
from src.nnmodel.snapshots import FoldModel

logger = logging.getLogger(__name__)

Normalization = Literal["raw", "unit-max"]


@dataclass(frozen=True)
class AttentionMap:
    values: np.ndarray
    normalization: Normalization = "unit-max"

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError(f"attention map must be 2-D, got shape {self.values.shape}")
        if np.any(self.values < 0):
            raise ValueError("attention values must be non-negative")

    @property
    def argmax(self) -> Tuple[int, int]:
        """(row, col) of the strongest response."""
        row, col = np.unravel_index(int(np.argmax(self.values)), self.values.shape)
        return int(row), int(col)


def _feature_maps(model, batch: torch.Tensor) -> torch.Tensor:
    if not (hasattr(model, "features") and hasattr(model, "heads")):
        raise UnsupportedArchitectureError(f"{type(model).__name__} exposes no conv feature maps")
    maps = model.features(batch)
    if maps.ndim != 4:
        raise UnsupportedArchitectureError(f"expected B x C x h x w feature maps, got shape {tuple(maps.shape)}")
    return maps


def crop_cams(model, batch: torch.Tensor, scale: float) -> np.ndarray:
    """Rectified, upsampled CAM per crop of `batch`; `scale` weights this model's share of the target."""
    model.eval()
    maps = _feature_maps(model, batch.detach().requires_grad_(True))
    prog_logits, _ = model.heads(maps)
    probs = torch.softmax(prog_logits, dim=1)
    target = scale * (probs[:, 1] + probs[:, 2]).mean()
    grads = None
    if target.requires_grad:
        (grads,) = torch.autograd.grad(target, maps, allow_unused=True)
    if grads is None:
        grads = torch.zeros_like(maps)

    weights = grads.mean(dim=(2, 3), keepdim=True)
    cam = F.relu((weights * maps).sum(dim=1, keepdim=True))
    cam = F.interpolate(cam, size=batch.shape[-2:], mode="bilinear", align_corners=False)
    return cam[:, 0].detach().double().cpu().numpy()


def reassemble(crop_maps: Sequence[np.ndarray], offsets: Sequence[Tuple[int, int]], shape: Tuple[int, int]) -> np.ndarray:
    """Place crop maps at their offsets; pixels covered by several crops get the mean."""
    total = np.zeros(shape, dtype=np.float64)
    coverage = np.zeros(shape, dtype=np.float64)
    for cam, (top, left) in zip(crop_maps, offsets):
        height, width = cam.shape
        total[top:top + height, left:left + width] += cam
        coverage[top:top + height, left:left + width] += 1
    return np.divide(total, coverage, out=np.zeros_like(total), where=coverage > 0)


def gradcam_tta(
    fold_models: Sequence[FoldModel],
    img: PreparedImage,
    normalization: Normalization = "unit-max",
    crop: int = CROP_SIZE,
) -> AttentionMap:
    if not fold_models:
        raise ValueError("at least one fold model is required")
    batch = crop_batch(img, crop)
    offsets = five_crop_offsets(img.pixels.shape, crop)
    scale = 1.0 / len(fold_models)

    fold_maps: List[np.ndarray] = []
    for _, model in fold_models:
        device = next(model.parameters(), torch.empty(0)).device
        cams = crop_cams(model, batch.to(device), scale)
        fold_maps.append(reassemble(cams, offsets, img.pixels.shape))

    values = np.maximum(np.mean(fold_maps, axis=0), 0.0)
    if normalization == "unit-max" and values.max() > 0:
        values = values / values.max()
    return AttentionMap(values=values, normalization=normalization)
