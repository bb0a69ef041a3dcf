from typing import Tuple

import numpy as np
import torch

from src.imaging.augment import five_crop
from src.imaging.schemas import CROP_SIZE, PreparedImage
from src.inference.schemas import HeadProbabilities
from src.nnmodel.dataset import to_tensor
from src.nnmodel.model import MultiTaskModel


def _device(model: MultiTaskModel) -> torch.device:
    param = next(model.parameters(), None)
    return param.device if param is not None else torch.device("cpu")


def crop_batch(img: PreparedImage, crop: int = CROP_SIZE) -> torch.Tensor:
    """5 x 1 x crop x crop batch in five_crop order."""
    return torch.stack([to_tensor(c) for c in five_crop(img, crop)])


@torch.no_grad()
def crop_probabilities(model: MultiTaskModel, img: PreparedImage, crop: int = CROP_SIZE) -> Tuple[np.ndarray, np.ndarray]:
    """Per-crop softmax outputs, shapes (5, 3) and (5, 5)."""
    model.eval()
    prog_logits, kl_logits = model(crop_batch(img, crop).to(_device(model)))
    p_prog = torch.softmax(prog_logits, dim=1).double().cpu().numpy()
    p_kl = torch.softmax(kl_logits, dim=1).double().cpu().numpy()
    return p_prog, p_kl


def predict_tta(model: MultiTaskModel, img: PreparedImage, crop: int = CROP_SIZE) -> HeadProbabilities:
    """Softmax per crop, then the arithmetic mean per head."""
    p_prog, p_kl = crop_probabilities(model, img, crop)
    return HeadProbabilities.from_arrays(p_prog.mean(axis=0), p_kl.mean(axis=0))
