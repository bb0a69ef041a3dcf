from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

BACKBONE_CHANNELS = {"tiny": 32, "resnet18": 512}


class BackboneSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: Literal["tiny", "resnet18"] = "tiny"
    pretrained_weights: Optional[Path] = None
    feature_channels: int = Field(default=32, gt=0)

    @model_validator(mode="after")
    def _channels_match_backbone(self):
        if self.name == "resnet18" and self.feature_channels != BACKBONE_CHANNELS["resnet18"]:
            raise ValueError("resnet18 produces 512 feature channels")
        return self


class TrainingSchedule(BaseModel):
    """
    Epochs are counted globally from 1: the first `freeze_epochs` passes train
    the heads only, followed by `train_epochs` passes over all layers.
    The learning rate is multiplied by `lr_drop_factor` for every epoch after
    `lr_drop_epoch`.
    """

    model_config = ConfigDict(frozen=True)

    freeze_epochs: int = Field(default=2, ge=0)
    train_epochs: int = Field(default=20, gt=0)
    lr: float = Field(default=1e-3, gt=0)
    lr_drop_epoch: int = Field(default=15, gt=0)
    lr_drop_factor: float = Field(default=0.1, gt=0, lt=1)
    batch_size: int = Field(default=64, gt=0)
    weight_decay: float = Field(default=1e-4, ge=0)
    optimizer: Literal["adam"] = "adam"
    loss_weights: Tuple[float, float] = (1.0, 1.0)
    num_workers: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _drop_inside_training(self):
        if self.lr_drop_epoch >= self.train_epochs:
            raise ValueError("lr_drop_epoch must be smaller than train_epochs")
        return self

    @property
    def total_epochs(self) -> int:
        return self.freeze_epochs + self.train_epochs

    def lr_at(self, epoch: int) -> float:
        if epoch > self.lr_drop_epoch:
            return self.lr * self.lr_drop_factor
        return self.lr

    def is_frozen(self, epoch: int) -> bool:
        return epoch <= self.freeze_epochs


class FoldSplit(BaseModel):
    model_config = ConfigDict(frozen=True)

    fold_index: int = Field(ge=0)
    train_subject_ids: Tuple[str, ...]
    val_subject_ids: Tuple[str, ...]

    @model_validator(mode="after")
    def _disjoint(self):
        overlap = set(self.train_subject_ids) & set(self.val_subject_ids)
        if overlap:
            raise ValueError(f"subjects on both sides of fold {self.fold_index}: {sorted(overlap)[:5]}")
        return self


class EpochRecord(BaseModel):
    epoch: int
    lr: float
    frozen: bool
    train_loss: float
    validation_ap: float


class SnapshotInfo(BaseModel):
    """Everything in a snapshot file except the weights."""

    fold_index: int
    split: Optional[FoldSplit] = None
    epoch: int
    validation_ap: float = Field(ge=0, le=1)
    seed: int
    schedule: TrainingSchedule
    backbone: BackboneSpec
    history: List[EpochRecord] = Field(default_factory=list)
    extra: Dict[str, str] = Field(default_factory=dict)
