from typing import Tuple

import torch
import torch.nn.functional as F

from src.core.errors import TargetRangeError
from src.nnmodel.model import N_KL_CLASSES, N_PROGRESSION_CLASSES


def _check_range(target: torch.Tensor, n_classes: int, name: str) -> None:
    if target.numel() and (int(target.min()) < 0 or int(target.max()) >= n_classes):
        raise TargetRangeError(f"{name} targets must lie in [0, {n_classes - 1}]")


def multitask_loss(
    prog_logits: torch.Tensor,
    kl_logits: torch.Tensor,
    y_true: torch.Tensor,
    kl_true: torch.Tensor,
    weights: Tuple[float, float] = (1.0, 1.0),
) -> torch.Tensor:
    """Weighted sum of the two heads' softmax cross-entropies (unweighted by default)."""
    _check_range(y_true, N_PROGRESSION_CLASSES, "progression")
    _check_range(kl_true, N_KL_CLASSES, "KL")
    w_prog, w_kl = weights
    return w_prog * F.cross_entropy(prog_logits, y_true) + w_kl * F.cross_entropy(kl_logits, kl_true)
