"""
The fused-model bundle: one JSON document holding every fitted variant.

Boosters are stored twice, as LightGBM's model string (used to reload) and
as its JSON tree dump (portable, readable without LightGBM).
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import lightgbm as lgb
import orjson

from src.core.config import SOFTWARE_VERSION
from src.core.errors import ModelLoadError
from src.fusion.gbm import BoostedTreeModel, GBMParams
from src.fusion.logistic import LogisticModel
from src.fusion.predict import FusedModel
from src.fusion.tuning import TrialResult


@dataclass
class FittedVariant:
    variant_id: int
    kind: str
    model: Optional[FusedModel] = None
    # the unpenalized twin of a regularized LR reference
    alternate: Optional[LogisticModel] = None
    trials: List[TrialResult] = field(default_factory=list)


@dataclass
class FusionBundle:
    variants: Dict[int, FittedVariant]
    manifest_hash: str
    mode: str = "refit"


def _encode_variant(fitted: FittedVariant) -> dict:
    entry = {"kind": fitted.kind}
    if isinstance(fitted.model, BoostedTreeModel):
        entry.update(
            features=list(fitted.model.features),
            params=fitted.model.params.model_dump(),
            mode=fitted.model.mode,
            boosters=[
                {"model_string": booster.model_to_string(), "tree_dump": booster.dump_model()}
                for booster in fitted.model.boosters
            ],
            trials=[trial.model_dump() for trial in fitted.trials],
        )
    elif isinstance(fitted.model, LogisticModel):
        entry.update(features=fitted.model.features, logistic=fitted.model.model_dump())
        if fitted.alternate is not None:
            entry["logistic_alternate"] = fitted.alternate.model_dump()
    return entry


def _decode_variant(variant_id: int, entry: dict) -> FittedVariant:
    kind = entry["kind"]
    if kind == "gbm":
        boosters = [lgb.Booster(model_str=b["model_string"]) for b in entry["boosters"]]
        model = BoostedTreeModel(boosters, entry["features"], GBMParams(**entry["params"]), entry["mode"])
        trials = [TrialResult.model_validate(t) for t in entry.get("trials", [])]
        return FittedVariant(variant_id, kind, model, trials=trials)
    if kind == "lr":
        alternate = entry.get("logistic_alternate")
        return FittedVariant(
            variant_id,
            kind,
            LogisticModel.model_validate(entry["logistic"]),
            alternate=LogisticModel.model_validate(alternate) if alternate else None,
        )
    return FittedVariant(variant_id, kind)


def save_bundle(bundle: FusionBundle, path: Path) -> Path:
    document = {
        "software_version": SOFTWARE_VERSION,
        "manifest_hash": bundle.manifest_hash,
        "mode": bundle.mode,
        "variants": {str(vid): _encode_variant(fitted) for vid, fitted in sorted(bundle.variants.items())},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(document, option=orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY))
    return path


def load_bundle(path: Path) -> FusionBundle:
    path = Path(path)
    if not path.exists():
        raise ModelLoadError(f"fusion bundle not found: {path}")
    try:
        document = orjson.loads(path.read_bytes())
        variants = {int(vid): _decode_variant(int(vid), entry) for vid, entry in document["variants"].items()}
    except (orjson.JSONDecodeError, KeyError, lgb.basic.LightGBMError) as exc:
        raise ModelLoadError(f"unreadable fusion bundle {path}: {exc}") from exc
    return FusionBundle(variants=variants, manifest_hash=document["manifest_hash"], mode=document["mode"])
