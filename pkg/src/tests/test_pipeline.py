from dataclasses import replace
from datetime import datetime

import numpy as np
import orjson
import pandas as pd
import pytest

from src.core.config import PipelineConfig, SubgroupConfig
from src.core.errors import DependencyError, ProtectedDataError, SchemaError, StalenessError
from src.models.stage_run import StageRun
from src.pipeline import stages
from src.pipeline.manifest import (
    build_manifest,
    export_manifest,
    hash_path,
    latest_success,
    purge_failed_runs,
    record_stage_run,
)
from src.pipeline.stages import run_pipeline, run_stage


def _rows(db):
    return db.query(StageRun).count()


def test_directory_hash_tracks_content_and_names(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "a" / "x.txt").write_text("one")
    before = hash_path(tmp_path / "a")
    assert hash_path(tmp_path / "a") == before

    (tmp_path / "a" / "x.txt").write_text("two")
    assert hash_path(tmp_path / "a") != before

    (tmp_path / "a" / "x.txt").rename(tmp_path / "a" / "y.txt")
    assert hash_path(tmp_path / "a") != before
    with pytest.raises(FileNotFoundError):
        hash_path(tmp_path / "missing")


def test_manifest_rows_and_export(db_session, tmp_path):
    started = datetime(2024, 1, 1)
    record_stage_run(db_session, "preprocess", "c1", {}, {"preprocess": "h1"}, started, "Success")
    record_stage_run(db_session, "preprocess", "c2", {}, {}, started, "Failure", "boom")

    assert latest_success(db_session, "preprocess").config_hash == "c1"
    assert latest_success(db_session, "infer") is None

    path = export_manifest(db_session, tmp_path / "manifest.json", "cfg")
    document = orjson.loads(path.read_bytes())
    assert document["config_hash"] == "cfg"
    assert [row["outcome"] for row in document["stages"]] == ["Success", "Failure"]

    assert purge_failed_runs(db_session) == 1
    assert [row.outcome for row in build_manifest(db_session, "cfg").stages] == ["Success"]


def test_stage_without_prerequisites_fails_with_dependency_error(db_session, pipeline_config):
    with pytest.raises(DependencyError) as excinfo:
        run_stage("evaluate", pipeline_config, db_session)
    assert excinfo.value.exit_code == 3
    assert excinfo.value.missing == "prepare-cohort"
    assert _rows(db_session) == 0


def test_missing_metadata_is_a_dependency_error(db_session, tmp_path):
    cfg = PipelineConfig(paths={"data_dir": tmp_path / "empty", "output_dir": tmp_path / "run"})
    with pytest.raises(DependencyError):
        run_stage("prepare-cohort", cfg, db_session)


def test_unknown_stage(db_session, pipeline_config):
    with pytest.raises(KeyError):
        run_stage("deploy", pipeline_config, db_session)


def test_unchanged_stage_is_a_noop(db_session, pipeline_config):
    first = run_stage("prepare-cohort", pipeline_config, db_session)
    artifact = pipeline_config.paths.output_dir / "cohort"
    assert first.outcome == "Success"
    assert (artifact / "train_cohort.csv").exists() and (artifact / "cohort_summary.json").exists()
    assert first.output_hashes == {"prepare-cohort": hash_path(artifact)}

    second = run_stage("prepare-cohort", pipeline_config, db_session)
    assert second.id == first.id
    assert _rows(db_session) == 1

    changed = pipeline_config.model_copy(update={"cohort": pipeline_config.cohort.model_copy(update={"train_last_followup": 72})})
    third = run_stage("prepare-cohort", changed, db_session)
    assert third.id != first.id and third.config_hash != first.config_hash
    assert _rows(db_session) == 2


def test_unrelated_config_change_keeps_the_stage_up_to_date(db_session, pipeline_config):
    first = run_stage("prepare-cohort", pipeline_config, db_session)
    changed = pipeline_config.model_copy(update={"fusion": pipeline_config.fusion.model_copy(update={"n_trials": 9})})
    assert run_stage("prepare-cohort", changed, db_session).id == first.id


def test_tampered_artifact_is_stale(db_session, pipeline_config):
    run_stage("prepare-cohort", pipeline_config, db_session)
    table = pipeline_config.paths.output_dir / "cohort" / "train_cohort.csv"
    original = table.read_bytes()
    table.write_bytes(original + b"\n")

    with pytest.raises(StalenessError) as excinfo:
        run_stage("preprocess", pipeline_config, db_session)
    assert excinfo.value.artifact == "prepare-cohort"

    # rerunning the producer restores the artifact
    run_stage("prepare-cohort", pipeline_config, db_session)
    assert table.read_bytes() == original
    assert _rows(db_session) == 2


def test_failed_stage_leaves_no_partial_output(db_session, pipeline_config, mocker):
    def boom(cfg, out):
        (out / "half_written.csv").write_text("x")
        raise RuntimeError("boom")

    mocker.patch.dict(stages.STAGES, {"prepare-cohort": replace(stages.STAGES["prepare-cohort"], run=boom)})
    with pytest.raises(RuntimeError):
        run_stage("prepare-cohort", pipeline_config, db_session)

    out_dir = pipeline_config.paths.output_dir
    assert not (out_dir / "cohort").exists()
    assert not list(out_dir.glob(".cohort.tmp-*"))
    failure = db_session.query(StageRun).one()
    assert failure.outcome == "Failure"
    assert failure.error == "RuntimeError: boom"
    assert failure.output_hashes == {}


def test_synth_data_never_replaces_real_data(db_session, tmp_path):
    data_dir = tmp_path / "data"
    data_dir.mkdir()
    (data_dir / "train_metadata.csv").write_text("subject_id,side\n")
    cfg = PipelineConfig(
        paths={"data_dir": data_dir, "output_dir": tmp_path / "run"},
        synth={"n_train_subjects": 2, "n_test_subjects": 2},
    )

    with pytest.raises(ProtectedDataError) as excinfo:
        run_stage("synth-data", cfg, db_session)
    assert excinfo.value.exit_code == 2
    assert (data_dir / "train_metadata.csv").read_text() == "subject_id,side\n"
    assert _rows(db_session) == 0


def test_synth_data_regenerates_its_own_output(db_session, tmp_path):
    cfg = PipelineConfig(
        paths={"data_dir": tmp_path / "data", "output_dir": tmp_path / "run"},
        synth={"n_train_subjects": 2, "n_test_subjects": 2},
    )
    run_stage("synth-data", cfg, db_session)
    assert (tmp_path / "data" / "synth_params.json").exists()

    reseeded = cfg.model_copy(update={"seeds": cfg.seeds.model_copy(update={"synth": 1})})
    assert run_stage("synth-data", reseeded, db_session).outcome == "Success"
    assert _rows(db_session) == 2


def test_prepare_and_preprocess_on_synthetic_data(db_session, pipeline_config):
    run_pipeline(pipeline_config, ("prepare-cohort", "preprocess"), db_session)
    out_dir = pipeline_config.paths.output_dir

    table = pd.read_csv(out_dir / "cohort" / "train_cohort.csv", dtype={"subject_id": str})
    # one row per visit
    train = table[table["visit_month"] == 0]
    pngs = sorted((out_dir / "prepared" / "train").glob("*.png"))
    assert len(pngs) == len(train)

    summary = orjson.loads((out_dir / "cohort" / "cohort_summary.json").read_bytes())
    assert set(summary) == {"train", "test"}
    assert summary["train"]["selection"][-1]["knees_remaining"] == len(train)

    preprocess = latest_success(db_session, "preprocess")
    assert preprocess.input_hashes == {"prepare-cohort": hash_path(out_dir / "cohort")}


def test_evaluate_report_uses_the_configured_models_and_subgroup():
    rng = np.random.default_rng(0)
    n = 120
    labels = np.r_[np.zeros(n - 40, int), np.ones(40, int)]
    scores = pd.DataFrame(
        {
            "subject_id": [f"S{i:03d}" for i in range(n)],
            "side": "R",
            "label_binary": labels,
            "kl_baseline": np.tile([0.0, 1.0, 2.0, 3.0], n // 4),
            "model_6": rng.normal(size=n) + labels,
            "model_7": rng.normal(size=n) + 2 * labels,
        }
    )
    cfg = PipelineConfig(evaluation={"models": [6, 7], "n_bootstrap": 10})

    report = stages.evaluate_report(cfg, scores)
    assert set(report.subgroups) == {"all", cfg.subgroup.name}
    assert report.subgroups[cfg.subgroup.name].models["model_6"].n_knees == n // 2
    assert report.config_hash == cfg.config_hash()

    late = stages.evaluate_report(cfg, scores, SubgroupConfig(name="kl_3", kl_baseline=[3]))
    assert late.subgroups["kl_3"].models["model_7"].n_knees == n // 4

    with pytest.raises(SchemaError):
        stages.evaluate_report(cfg, scores.drop(columns=["model_7"]))


@pytest.mark.slow
def test_full_pipeline_on_synthetic_data(db_session, pipeline_config):
    runs = run_pipeline(pipeline_config, db=db_session)
    assert [run.stage for run in runs] == list(stages.PIPELINE_ORDER)
    assert all(run.outcome == "Success" for run in runs)

    out_dir = pipeline_config.paths.output_dir
    report = orjson.loads((out_dir / "evaluation" / "report.json").read_bytes())
    assert set(report["subgroups"]["all"]["models"]) == {"model_2", "model_4", "model_5", "model_6", "model_7"}
    oof = pd.read_csv(out_dir / "predictions" / "oof_features.csv")
    assert oof["source_fold"].notna().all()
    assert len(list((out_dir / "explain").glob("*_gcam.png"))) == 2

    # a second run changes nothing
    again = run_pipeline(pipeline_config, db=db_session)
    assert [run.id for run in again] == [run.id for run in runs]
