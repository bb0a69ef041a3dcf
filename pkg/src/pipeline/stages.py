"""
Pipeline stages.

Every stage writes into a scratch directory next to its artifact and swaps it
into place only on success. A stage whose config section, inputs and outputs
all match its last successful run is skipped without touching the manifest.
"""
import logging
import os
import shutil
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import orjson
import pandas as pd
from sqlalchemy.orm import Session

from src.cohort.labels import label_cohort
from src.cohort.metadata import parse_metadata, read_cohort_table, write_cohort_table
from src.cohort.schemas import KneeRecord, ProgressionLabel, Role
from src.cohort.selection import selection_flow
from src.cohort.summary import cohort_summary
from src.core.config import SOFTWARE_VERSION, PipelineConfig, SubgroupConfig
from src.core.errors import DependencyError, IntegrityError, ProtectedDataError, SchemaError, StalenessError
from src.db.session import session_factory
from src.evalstats.metrics import average_precision, roc_auc
from src.evalstats.plots import plot_curves
from src.evalstats.report import evaluate_models, report_bytes
from src.evalstats.schemas import EvaluationReport, ScoredSet
from src.explain.overlay import explain_knees
from src.fusion.bundle import load_bundle, save_bundle
from src.fusion.features import (
    collect_oof_features,
    check_oof_discipline,
    feature_frame,
    read_feature_frame,
    rows_from_predictions,
    write_feature_frame,
)
from src.fusion.train import cnn_score, predict_variants, train_fusion_models
from src.fusion.variants import get_variant
from src.imaging.preprocess import load_prepared_images, preprocess_records
from src.inference.batch import predict_records, write_predictions, read_predictions
from src.inference.ensemble import check_fold_count
from src.models.stage_run import StageRun
from src.nnmodel.dataset import KneeDataset, load_training_samples
from src.nnmodel.schemas import FoldSplit
from src.nnmodel.snapshots import load_ensemble, load_fold_models
from src.nnmodel.splits import make_cv_splits
from src.nnmodel.train import train_cv
from src.pipeline.manifest import _utcnow, hash_path, latest_success, record_stage_run
from src.synth.generator import PARAMS_FILE, generate_dataset

logger = logging.getLogger(__name__)

JSON_OPTIONS = orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2


@dataclass(frozen=True)
class Stage:
    name: str
    artifact: str
    requires: Tuple[str, ...]
    sections: Tuple[str, ...]
    run: Callable[[PipelineConfig, Path], None]


def _write_json(path: Path, payload) -> Path:
    path.write_bytes(orjson.dumps(payload, option=JSON_OPTIONS | orjson.OPT_SERIALIZE_NUMPY))
    return path


def _artifact(cfg: PipelineConfig, stage: str) -> Path:
    if stage == "synth-data":
        return Path(cfg.paths.data_dir)
    return Path(cfg.paths.output_dir) / STAGES[stage].artifact


def _cohort(cfg: PipelineConfig, role: Role) -> Tuple[List[KneeRecord], List[ProgressionLabel]]:
    return read_cohort_table(_artifact(cfg, "prepare-cohort") / f"{role.value}_cohort.csv", cfg.paths.data_dir)


def _splits(cfg: PipelineConfig) -> List[FoldSplit]:
    document = orjson.loads((_artifact(cfg, "train-cnn") / "splits.json").read_bytes())
    return [FoldSplit.model_validate(split) for split in document]


def _fold_models(cfg: PipelineConfig):
    fold_models = load_fold_models(load_ensemble(_artifact(cfg, "train-cnn")), cfg.cv.device)
    check_fold_count(fold_models, cfg.cv.n_folds)
    return fold_models


# --- stage bodies ---------------------------------------------------------

def run_synth_data(cfg: PipelineConfig, out: Path) -> None:
    generate_dataset(cfg.synth, out, cfg.seeds.synth)


def run_prepare_cohort(cfg: PipelineConfig, out: Path) -> None:
    followups = {Role.TRAIN: cfg.cohort.train_last_followup, Role.TEST: cfg.cohort.test_last_followup}
    metadata = {Role.TRAIN: cfg.paths.train_metadata_path, Role.TEST: cfg.paths.test_metadata_path}
    report = {}
    for role in (Role.TRAIN, Role.TEST):
        records = parse_metadata(metadata[role], cfg.paths.data_dir)
        kept, steps = selection_flow(records, role, followups[role])
        for step in steps:
            logger.info(f"[{role.value}] {step.step}: {step.knees_remaining} knees, {step.subjects_remaining} subjects")
        labels = label_cohort(kept)
        write_cohort_table(kept, labels, cfg.paths.data_dir, out / f"{role.value}_cohort.csv")
        report[role.value] = {
            "selection": [step.model_dump() for step in steps],
            "summary": cohort_summary(kept, labels).model_dump(mode="json"),
        }
    _write_json(out / "cohort_summary.json", report)


def run_preprocess(cfg: PipelineConfig, out: Path) -> None:
    for role in (Role.TRAIN, Role.TEST):
        records, _ = _cohort(cfg, role)
        preprocess_records(records, out / role.value, cfg.imaging.default_raw_spacing, cfg.imaging.n_jobs)


def run_train_cnn(cfg: PipelineConfig, out: Path) -> None:
    records, labels = _cohort(cfg, Role.TRAIN)
    images = load_prepared_images(records, _artifact(cfg, "preprocess") / Role.TRAIN.value)
    splits = make_cv_splits(records, labels, cfg.cv.n_folds, cfg.seeds.splits)
    _write_json(out / "splits.json", [split.model_dump(mode="json") for split in splits])

    dataset = KneeDataset(load_training_samples(records, labels, images), seed=cfg.seeds.train)
    snapshots = train_cv(
        dataset, splits, cfg.training, cfg.backbone, cfg.seeds.train, out, cfg.augmentation, cfg.cv.device
    )
    _write_json(out / "training_summary.json", [s.info.model_dump(mode="json", exclude={"split"}) for s in snapshots])


def run_infer(cfg: PipelineConfig, out: Path) -> None:
    snapshots = load_ensemble(_artifact(cfg, "train-cnn"))
    fold_models = load_fold_models(snapshots, cfg.cv.device)
    check_fold_count(fold_models, cfg.cv.n_folds)
    prepared = _artifact(cfg, "preprocess")

    records, labels = _cohort(cfg, Role.TRAIN)
    images = load_prepared_images(records, prepared / Role.TRAIN.value)
    oof = feature_frame(collect_oof_features(fold_models, _splits(cfg), records, labels, images))
    violations = check_oof_discipline(oof, snapshots)
    if violations:
        raise IntegrityError(f"{violations} out-of-fold rows were scored by a model that trained on them")
    write_feature_frame(oof, out / "oof_features.csv")

    oof_set = ScoredSet(cnn_score(oof).to_numpy(), oof["label_binary"].to_numpy())
    _write_json(out / "oof_summary.json", {"cnn_oof_auc": roc_auc(oof_set), "cnn_oof_ap": average_precision(oof_set)})
    logger.info(f"CNN out-of-fold AUC {roc_auc(oof_set):.3f}, AP {average_precision(oof_set):.3f}")

    test_records, _ = _cohort(cfg, Role.TEST)
    test_images = load_prepared_images(test_records, prepared / Role.TEST.value)
    write_predictions(predict_records(fold_models, test_records, test_images, cfg.cv.n_folds), out / "test_predictions.csv")


def run_train_fusion(cfg: PipelineConfig, out: Path) -> None:
    oof = read_feature_frame(_artifact(cfg, "infer") / "oof_features.csv")
    bundle = train_fusion_models(
        oof, _splits(cfg), cfg.fusion, cfg.seeds.tuning, manifest_hash=hash_path(_artifact(cfg, "infer"))
    )
    save_bundle(bundle, out / "fusion_bundle.json")


def evaluate_report(
    cfg: PipelineConfig,
    scores: pd.DataFrame,
    subgroup: Optional[SubgroupConfig] = None,
) -> EvaluationReport:
    """Metric table for all knees and for one baseline-KL subgroup (cfg.subgroup by default)."""
    subgroup = subgroup or cfg.subgroup
    columns = [get_variant(model_id).key for model_id in cfg.evaluation.models]
    missing = [c for c in columns if c not in scores.columns]
    if missing:
        raise SchemaError(f"no predictions for {missing}; add them to fusion.variants")
    mask = scores["kl_baseline"].isin(subgroup.kl_baseline).to_numpy()
    return evaluate_models(
        scores,
        columns,
        n_bootstrap=cfg.evaluation.n_bootstrap,
        ci_level=cfg.evaluation.ci_level,
        seed=cfg.seeds.bootstrap,
        subgroups={subgroup.name: mask},
        config_hash=cfg.config_hash(),
    )


def run_evaluate(cfg: PipelineConfig, out: Path) -> None:
    records, labels = _cohort(cfg, Role.TEST)
    predictions = read_predictions(_artifact(cfg, "infer") / "test_predictions.csv")
    frame = feature_frame(rows_from_predictions(records, labels, predictions))
    scores = predict_variants(load_bundle(_artifact(cfg, "train-fusion") / "fusion_bundle.json"), frame)
    if "model_5" not in scores.columns:
        scores["model_5"] = cnn_score(frame).to_numpy()
    scores.to_csv(out / "test_scores.csv", index=False, float_format="%.17g")

    report = evaluate_report(cfg, scores)
    (out / "report.json").write_bytes(report_bytes(report))
    if cfg.evaluation.render_plots:
        plot_curves(report, out / "figures")


def run_explain(cfg: PipelineConfig, out: Path) -> None:
    records, labels = _cohort(cfg, Role.TEST)
    # progressors first, then the rest, each in (subject, side) order
    order = sorted(range(len(records)), key=lambda i: (not labels[i].progressed, records[i].key))
    chosen = [records[i] for i in order[: cfg.explain.n_images]]
    images = load_prepared_images(chosen, _artifact(cfg, "preprocess") / Role.TEST.value)
    explain_knees(_fold_models(cfg), chosen, images, out, cfg.explain.normalization)


STAGES: Dict[str, Stage] = {
    stage.name: stage
    for stage in (
        Stage("synth-data", "data", (), ("synth", "seeds"), run_synth_data),
        Stage("prepare-cohort", "cohort", (), ("cohort",), run_prepare_cohort),
        Stage("preprocess", "prepared", ("prepare-cohort",), ("imaging",), run_preprocess),
        Stage(
            "train-cnn", "cnn", ("prepare-cohort", "preprocess"),
            ("seeds", "cv", "training", "backbone", "augmentation"), run_train_cnn,
        ),
        Stage("infer", "predictions", ("prepare-cohort", "preprocess", "train-cnn"), ("cv",), run_infer),
        Stage("train-fusion", "fusion", ("train-cnn", "infer"), ("seeds", "fusion"), run_train_fusion),
        Stage(
            "evaluate", "evaluation", ("prepare-cohort", "infer", "train-fusion"),
            ("seeds", "evaluation", "subgroup"), run_evaluate,
        ),
        Stage("explain", "explain", ("prepare-cohort", "preprocess", "train-cnn"), ("explain",), run_explain),
    )
}

PIPELINE_ORDER = (
    "prepare-cohort", "preprocess", "train-cnn", "infer", "train-fusion", "evaluate", "explain",
)


# --- orchestration --------------------------------------------------------

def _external_inputs(cfg: PipelineConfig, stage: Stage) -> Dict[str, str]:
    if stage.name != "prepare-cohort":
        return {}
    hashes = {}
    for name, path in (("train_metadata", cfg.paths.train_metadata_path), ("test_metadata", cfg.paths.test_metadata_path)):
        if not Path(path).exists():
            raise DependencyError(stage.name, f"{name} ({path})")
        hashes[name] = hash_path(path)
    return hashes


def _input_hashes(db: Session, cfg: PipelineConfig, stage: Stage) -> Dict[str, str]:
    hashes = _external_inputs(cfg, stage)
    for required in stage.requires:
        previous = latest_success(db, required)
        artifact = _artifact(cfg, required)
        if previous is None or not artifact.exists():
            raise DependencyError(stage.name, required)
        current = hash_path(artifact)
        if previous.output_hashes.get(required) != current:
            raise StalenessError(stage.name, required)
        hashes[required] = current
    return hashes


def _is_noop(previous: Optional[StageRun], config_hash: str, inputs: Dict[str, str], artifact: Path, name: str) -> bool:
    if previous is None or not artifact.exists():
        return False
    return (
        previous.config_hash == config_hash
        and previous.input_hashes == inputs
        and previous.software_version == SOFTWARE_VERSION
        and previous.output_hashes.get(name) == hash_path(artifact)
    )


def _check_replaceable(name: str, artifact: Path) -> None:
    # only a directory the generator wrote may be swapped out for synthetic data
    if name != "synth-data" or not artifact.exists() or not any(artifact.iterdir()):
        return
    if not (artifact / PARAMS_FILE).exists():
        raise ProtectedDataError(f"{artifact} holds data without {PARAMS_FILE}; refusing to replace it")


def _swap_into_place(scratch: Path, artifact: Path) -> None:
    old = None
    if artifact.exists():
        old = artifact.with_name(f".{artifact.name}.old-{uuid.uuid4().hex[:8]}")
        os.replace(artifact, old)
    os.replace(scratch, artifact)
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)


def run_stage(name: str, cfg: PipelineConfig, db: Optional[Session] = None) -> StageRun:
    """
    Run one stage: check prerequisites, skip if nothing changed, otherwise
    build the artifact atomically and append a manifest row.
    """
    if name not in STAGES:
        raise KeyError(f"unknown stage {name!r}; choose from {sorted(STAGES)}")
    stage = STAGES[name]

    session_created = False
    if db is None:
        db = session_factory(cfg.paths.output_dir)()
        session_created = True

    try:
        config_hash = cfg.section_hash(*stage.sections)
        inputs = _input_hashes(db, cfg, stage)
        artifact = _artifact(cfg, name)
        previous = latest_success(db, name)
        if _is_noop(previous, config_hash, inputs, artifact, name):
            logger.info(f"[{name}] up to date, skipping")
            return previous

        _check_replaceable(name, artifact)
        started_at = _utcnow()
        logger.info(f"[{name}] started")
        artifact.parent.mkdir(parents=True, exist_ok=True)
        scratch = artifact.with_name(f".{artifact.name}.tmp-{uuid.uuid4().hex[:8]}")
        scratch.mkdir(parents=True)
        try:
            stage.run(cfg, scratch)
            _swap_into_place(scratch, artifact)
        except Exception as exc:
            shutil.rmtree(scratch, ignore_errors=True)
            record_stage_run(db, name, config_hash, inputs, {}, started_at, "Failure", f"{type(exc).__name__}: {exc}")
            logger.error(f"[{name}] failed: {exc}")
            raise

        run = record_stage_run(db, name, config_hash, inputs, {name: hash_path(artifact)}, started_at, "Success")
        logger.info(f"[{name}] finished")
        return run
    finally:
        if session_created:
            db.close()


def run_pipeline(cfg: PipelineConfig, stages=PIPELINE_ORDER, db: Optional[Session] = None) -> List[StageRun]:
    return [run_stage(name, cfg, db) for name in stages]
