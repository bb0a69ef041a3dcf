from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch.utils.data import Dataset

from src.cohort.schemas import KneeRecord, ProgressionLabel
from src.imaging.augment import augment, center_crop
from src.imaging.schemas import AugmentationParams, PreparedImage


@dataclass(frozen=True)
class TrainingSample:
    subject_id: str
    side: str
    image: PreparedImage
    y: int
    kl: int


def to_tensor(crop: np.ndarray) -> torch.Tensor:
    """H x W crop in [0, 255] -> 1 x H x W float tensor in [0, 1]."""
    return torch.from_numpy(np.ascontiguousarray(crop, dtype=np.float32) / 255.0).unsqueeze(0)


def load_training_samples(
    records: Sequence[KneeRecord],
    labels: Sequence[ProgressionLabel],
    images: Dict[Tuple[str, str], PreparedImage],
) -> List[TrainingSample]:
    samples = []
    for record, label in zip(records, labels):
        kl = record.clinical.kl_baseline
        if kl is None:
            kl = record.baseline.kl_grade
        samples.append(
            TrainingSample(
                subject_id=record.subject_id,
                side=record.side.value,
                image=images[record.key],
                y=label.y,
                kl=int(kl),
            )
        )
    return samples


class KneeDataset(Dataset):
    """
    Prepared knees with their progression class and baseline KL grade.

    With augmentation params every item is a random crop drawn from an rng
    seeded by (seed, epoch, index), so a given epoch is reproducible regardless
    of worker count. Without params the center crop is returned.
    """

    def __init__(
        self,
        samples: Sequence[TrainingSample],
        params: Optional[AugmentationParams] = None,
        seed: int = 0,
    ):
        self.samples = list(samples)
        self.params = params
        self.seed = seed
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def subset(
        self,
        subject_ids: Sequence[str],
        params: Optional[AugmentationParams] = None,
        seed: Optional[int] = None,
    ) -> "KneeDataset":
        wanted = set(subject_ids)
        samples = [s for s in self.samples if s.subject_id in wanted]
        return KneeDataset(samples, params, self.seed if seed is None else seed)

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, index: int):
        sample = self.samples[index]
        if self.params is None:
            crop = center_crop(sample.image)
        else:
            rng = np.random.default_rng([self.seed, self.epoch, index])
            crop = augment(sample.image, self.params, rng)
        return to_tensor(crop), sample.y, sample.kl
