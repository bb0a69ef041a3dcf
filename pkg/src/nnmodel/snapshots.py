"""
Snapshot files and the ensemble manifest.

A snapshot is a torch.save container {"info": SnapshotInfo as JSON, "state_dict": weights};
`ensemble.json` next to the fold files lists which snapshots make up one ensemble.
"""
import logging
import pickle
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, NamedTuple, Sequence, Union

import orjson
import torch
from pydantic import ValidationError

from src.core.errors import ModelLoadError
from src.nnmodel.model import MultiTaskModel, build_multitask_model
from src.nnmodel.schemas import SnapshotInfo

logger = logging.getLogger(__name__)

ENSEMBLE_MANIFEST = "ensemble.json"


@dataclass
class ModelSnapshot:
    info: SnapshotInfo
    state_dict: Dict[str, torch.Tensor]

    @property
    def fold_index(self) -> int:
        return self.info.fold_index

    @property
    def epoch(self) -> int:
        return self.info.epoch

    @property
    def validation_ap(self) -> float:
        return self.info.validation_ap

    def to_model(self, device: Union[str, torch.device] = "cpu") -> MultiTaskModel:
        """Rebuild the network in eval mode. Pretrained backbone files are not needed again."""
        spec = self.info.backbone.model_copy(update={"pretrained_weights": None})
        model = build_multitask_model(spec)
        try:
            model.load_state_dict(self.state_dict, strict=True)
        except RuntimeError as exc:
            raise ModelLoadError(f"snapshot of fold {self.fold_index} does not fit {spec.name}: {exc}") from exc
        return model.to(device).eval()


class FoldModel(NamedTuple):
    fold_index: int
    model: MultiTaskModel


def snapshot_filename(fold_index: int) -> str:
    return f"fold_{fold_index}.pt"


def save_snapshot(snapshot: ModelSnapshot, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = {name: tensor.detach().cpu() for name, tensor in snapshot.state_dict.items()}
    torch.save({"info": snapshot.info.model_dump(mode="json"), "state_dict": state}, path)
    return path


def load_snapshot(path: Path) -> ModelSnapshot:
    path = Path(path)
    try:
        container = torch.load(path, map_location="cpu", weights_only=True)
        info = SnapshotInfo.model_validate(container["info"])
        state_dict = container["state_dict"]
    except FileNotFoundError:
        raise ModelLoadError(f"snapshot file not found: {path}")
    except (RuntimeError, KeyError, TypeError, EOFError, pickle.UnpicklingError, ValidationError) as exc:
        raise ModelLoadError(f"unreadable snapshot {path}: {exc}") from exc
    return ModelSnapshot(info=info, state_dict=state_dict)


def write_ensemble_manifest(snapshots: Sequence[ModelSnapshot], out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    entries = [
        {
            "fold_index": s.fold_index,
            "file": snapshot_filename(s.fold_index),
            "epoch": s.epoch,
            "validation_ap": s.validation_ap,
            "seed": s.info.seed,
        }
        for s in sorted(snapshots, key=lambda s: s.fold_index)
    ]
    path = out_dir / ENSEMBLE_MANIFEST
    path.write_bytes(orjson.dumps({"snapshots": entries}, option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2))
    return path


def load_ensemble(model_dir: Path) -> List[ModelSnapshot]:
    model_dir = Path(model_dir)
    manifest = model_dir / ENSEMBLE_MANIFEST
    if not manifest.exists():
        raise ModelLoadError(f"no {ENSEMBLE_MANIFEST} in {model_dir}")
    entries = orjson.loads(manifest.read_bytes())["snapshots"]
    snapshots = [load_snapshot(model_dir / entry["file"]) for entry in entries]
    logger.info(f"Loaded {len(snapshots)} fold snapshots from {model_dir}")
    return snapshots


def load_fold_models(snapshots: Sequence[ModelSnapshot], device: Union[str, torch.device] = "cpu") -> List[FoldModel]:
    return [FoldModel(s.fold_index, s.to_model(device)) for s in snapshots]
