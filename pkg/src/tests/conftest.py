from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pytest
import torch
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

from src.cohort.schemas import ClinicalFeatures, KneeRecord, Sex, Side, VisitObservation
from src.core.config import PipelineConfig, SynthConfig
from src.imaging.schemas import PreparedImage
from src.nnmodel.model import MultiTaskModel
from src.nnmodel.schemas import BackboneSpec, TrainingSchedule


@pytest.fixture()
def db_session():
    """A fresh in-memory manifest database per test."""
    from src.db.session import Base
    # models must be registered on Base before create_all
    from src.models.stage_run import StageRun  # noqa: F401

    engine = create_engine("sqlite://", connect_args={"check_same_thread": False}, poolclass=StaticPool)
    Base.metadata.create_all(bind=engine)
    session = sessionmaker(autocommit=False, autoflush=False, bind=engine)()
    yield session
    session.close()
    Base.metadata.drop_all(bind=engine)


def make_record(
    subject_id: str = "S1",
    side: Side = Side.RIGHT,
    grades: Sequence = ((0, 1), (30, 2)),
    tkr_months: Sequence[int] = (),
    unexamined_months: Sequence[int] = (),
    died: bool = False,
    age: Optional[float] = 60.0,
    sex: Optional[Sex] = Sex.FEMALE,
    bmi: Optional[float] = 27.0,
) -> KneeRecord:
    """Knee with visits given as (month, kl) pairs; the first pair is the baseline."""
    visits = tuple(
        VisitObservation(
            visit_month=month,
            kl_grade=kl,
            tkr_flag=month in tkr_months,
            examined=month not in unexamined_months,
        )
        for month, kl in grades
    )
    return KneeRecord(
        subject_id=subject_id,
        side=side,
        visits=visits,
        clinical=ClinicalFeatures(age=age, sex=sex, bmi=bmi, kl_baseline=visits[0].kl_grade),
        image_ref=Path(f"images/{subject_id}_{side.code}.png"),
        landmarks_ref=Path(f"landmarks/{subject_id}_{side.code}.txt"),
        died_during_followup=died,
    )


@pytest.fixture()
def record_factory():
    return make_record


def make_prepared(seed: int = 0, side: Side = Side.RIGHT) -> PreparedImage:
    pixels = np.random.default_rng(seed).integers(0, 256, size=(310, 310), dtype=np.uint8)
    return PreparedImage(pixels=pixels, side=side, flipped=side == Side.LEFT)


@pytest.fixture()
def prepared_factory():
    return make_prepared


@pytest.fixture()
def tiny_spec() -> BackboneSpec:
    return BackboneSpec(name="tiny", feature_channels=8)


@pytest.fixture()
def short_schedule() -> TrainingSchedule:
    return TrainingSchedule(freeze_epochs=1, train_epochs=2, lr_drop_epoch=1, batch_size=8)


class ConstantModel(MultiTaskModel):
    """Parameter-free model whose heads ignore the input."""

    def __init__(self, p_prog, p_kl):
        torch.nn.Module.__init__(self)
        self.in_channels = 1
        self.prog_logits = torch.log(torch.tensor(p_prog, dtype=torch.float64)).float()
        self.kl_logits = torch.log(torch.tensor(p_kl, dtype=torch.float64)).float()

    def features(self, x):
        return x[:, :1, ::16, ::16] * 0.0

    def heads(self, feature_maps):
        batch = feature_maps.shape[0]
        zero = feature_maps.sum(dim=(1, 2, 3))[:, None]
        return self.prog_logits.expand(batch, -1) + zero, self.kl_logits.expand(batch, -1) + zero


@pytest.fixture()
def constant_model_factory():
    return ConstantModel


@pytest.fixture(scope="session")
def synth_config() -> SynthConfig:
    return SynthConfig(n_train_subjects=30, n_test_subjects=20, progression_rate=0.4)


@pytest.fixture(scope="session")
def synth_data_dir(tmp_path_factory, synth_config) -> Path:
    """A small planted-signal dataset shared by the slower tests."""
    from src.synth.generator import generate_dataset

    data_dir = tmp_path_factory.mktemp("synth")
    generate_dataset(synth_config, data_dir, seed=3)
    return data_dir


@pytest.fixture()
def pipeline_config(tmp_path, synth_data_dir) -> PipelineConfig:
    """Desk-sized config pointing at the shared synthetic data."""
    return PipelineConfig(
        paths={"data_dir": synth_data_dir, "output_dir": tmp_path / "run"},
        backbone={"name": "tiny", "feature_channels": 8},
        training={"freeze_epochs": 1, "train_epochs": 2, "lr_drop_epoch": 1, "batch_size": 8},
        cv={"n_folds": 3},
        fusion={"n_trials": 2, "variants": [2, 4, 5, 6, 7]},
        evaluation={"n_bootstrap": 20, "render_plots": False},
        explain={"n_images": 2},
    )
