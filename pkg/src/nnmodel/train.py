"""
Fold training.

Epochs are numbered from 1. During the frozen epochs the conv block has
requires_grad off and stays in eval mode, so neither its weights nor its
batch-norm statistics move; Adam skips parameters without gradients.
"""
import copy
import logging
import math
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
import torch
from torch.utils.data import DataLoader

from src.core.errors import TrainingDivergedError
from src.evalstats.metrics import average_precision
from src.evalstats.schemas import ScoredSet
from src.imaging.schemas import AugmentationParams
from src.nnmodel.dataset import KneeDataset
from src.nnmodel.loss import multitask_loss
from src.nnmodel.model import MultiTaskModel, build_multitask_model
from src.nnmodel.schemas import BackboneSpec, EpochRecord, FoldSplit, SnapshotInfo, TrainingSchedule
from src.nnmodel.snapshots import ModelSnapshot, save_snapshot, snapshot_filename, write_ensemble_manifest

logger = logging.getLogger(__name__)

EpochCallback = Callable[[int, MultiTaskModel], None]


@torch.no_grad()
def predict_binary(model: MultiTaskModel, dataset: KneeDataset, batch_size: int = 64, device: str = "cpu") -> np.ndarray:
    """P(y>0) = p1 + p2 for every item of `dataset`, in order."""
    model.eval()
    loader = DataLoader(dataset, batch_size=batch_size, shuffle=False)
    scores = []
    for images, _, _ in loader:
        prog_logits, _ = model(images.to(device))
        probs = torch.softmax(prog_logits, dim=1)
        scores.append((probs[:, 1] + probs[:, 2]).cpu().numpy())
    return np.concatenate(scores) if scores else np.empty(0)


def _train_one_epoch(
    model: MultiTaskModel,
    loader: DataLoader,
    optimizer: torch.optim.Optimizer,
    schedule: TrainingSchedule,
    epoch: int,
    device: str,
) -> float:
    frozen = schedule.is_frozen(epoch)
    model.set_conv_trainable(not frozen)
    model.train()
    if frozen:
        model.conv_block.eval()

    total, count = 0.0, 0
    for images, y, kl in loader:
        images, y, kl = images.to(device), y.to(device), kl.to(device)
        prog_logits, kl_logits = model(images)
        loss = multitask_loss(prog_logits, kl_logits, y, kl, schedule.loss_weights)
        if not torch.isfinite(loss):
            raise TrainingDivergedError(epoch, float(loss))
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        total += float(loss) * images.shape[0]
        count += images.shape[0]
    return total / max(count, 1)


def train_fold(
    dataset: KneeDataset,
    split: FoldSplit,
    schedule: TrainingSchedule,
    spec: BackboneSpec,
    seed: int,
    params: Optional[AugmentationParams] = None,
    device: str = "cpu",
    callback: Optional[EpochCallback] = None,
) -> ModelSnapshot:
    """
    Train on the split's training subjects and return the epoch with the best
    validation AP (single center crop). Ties keep the earliest epoch.
    `callback(epoch, model)` runs once before training (epoch 0) and after every epoch.
    """
    torch.manual_seed(seed)
    model = build_multitask_model(spec, seed=seed).to(device)
    train_set = dataset.subset(split.train_subject_ids, params or AugmentationParams(), seed=seed)
    val_set = dataset.subset(split.val_subject_ids, None)
    val_labels = np.array([int(s.y > 0) for s in val_set.samples])

    loader = DataLoader(
        train_set,
        batch_size=schedule.batch_size,
        shuffle=True,
        num_workers=schedule.num_workers,
        generator=torch.Generator().manual_seed(seed),
    )
    optimizer = torch.optim.Adam(model.parameters(), lr=schedule.lr, weight_decay=schedule.weight_decay)

    if callback is not None:
        callback(0, model)

    history: List[EpochRecord] = []
    best_ap, best_epoch, best_state = -math.inf, 0, None
    for epoch in range(1, schedule.total_epochs + 1):
        lr = schedule.lr_at(epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        train_set.set_epoch(epoch)

        train_loss = _train_one_epoch(model, loader, optimizer, schedule, epoch, device)
        val_ap = average_precision(ScoredSet(predict_binary(model, val_set, schedule.batch_size, device), val_labels))

        history.append(
            EpochRecord(epoch=epoch, lr=lr, frozen=schedule.is_frozen(epoch), train_loss=train_loss, validation_ap=val_ap)
        )
        logger.info(
            f"[Fold {split.fold_index}] epoch {epoch}/{schedule.total_epochs} "
            f"lr={lr:.2e} loss={train_loss:.4f} val_ap={val_ap:.4f}"
        )
        if val_ap > best_ap:
            best_ap, best_epoch = val_ap, epoch
            best_state = copy.deepcopy(model.state_dict())
        if callback is not None:
            callback(epoch, model)

    info = SnapshotInfo(
        fold_index=split.fold_index,
        split=split,
        epoch=best_epoch,
        validation_ap=best_ap,
        seed=seed,
        schedule=schedule,
        backbone=spec,
        history=history,
    )
    logger.info(f"[Fold {split.fold_index}] best epoch {best_epoch} with AP {best_ap:.4f}")
    return ModelSnapshot(info=info, state_dict=best_state)


def train_cv(
    dataset: KneeDataset,
    splits: Sequence[FoldSplit],
    schedule: TrainingSchedule,
    spec: BackboneSpec,
    seed: int,
    out_dir: Path,
    params: Optional[AugmentationParams] = None,
    device: str = "cpu",
) -> List[ModelSnapshot]:
    """Train every fold, write fold_<k>.pt files and the ensemble manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    snapshots = []
    for split in splits:
        snapshot = train_fold(dataset, split, schedule, spec, seed + split.fold_index, params, device)
        save_snapshot(snapshot, out_dir / snapshot_filename(split.fold_index))
        snapshots.append(snapshot)
    write_ensemble_manifest(snapshots, out_dir)
    return snapshots
