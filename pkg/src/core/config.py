"""
Pipeline configuration.

Values come, highest priority first, from explicit keyword overrides (CLI
flags), OAPROG_* environment variables (``__`` separates nested keys, e.g.
``OAPROG_TRAINING__TRAIN_EPOCHS=3``), a ``.env`` file, and finally the YAML
document passed with ``--config``.
"""
import hashlib
from contextvars import ContextVar
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Type

import orjson
from pydantic import BaseModel, Field
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    YamlConfigSettingsSource,
)

from src.imaging.schemas import AugmentationParams
from src.nnmodel.schemas import BackboneSpec, TrainingSchedule

SOFTWARE_VERSION = "0.1.0"

_yaml_file: ContextVar[Optional[Path]] = ContextVar("oaprog_yaml_file", default=None)


class PathsConfig(BaseModel):
    data_dir: Path = Path("data")
    train_metadata: str = "train_metadata.csv"
    test_metadata: str = "test_metadata.csv"
    output_dir: Path = Path("runs/default")

    @property
    def train_metadata_path(self) -> Path:
        return self.data_dir / self.train_metadata

    @property
    def test_metadata_path(self) -> Path:
        return self.data_dir / self.test_metadata


class SeedsConfig(BaseModel):
    synth: int = 0
    splits: int = 42
    train: int = 42
    tuning: int = 42
    bootstrap: int = 42

    def all_set_to(self, seed: int) -> "SeedsConfig":
        return SeedsConfig(synth=seed, splits=seed, train=seed, tuning=seed, bootstrap=seed)


class CohortConfig(BaseModel):
    train_last_followup: int = 96
    test_last_followup: int = 84


class ImagingConfig(BaseModel):
    # used when a metadata row has no pixel_spacing column
    default_raw_spacing: float = Field(default=0.35, gt=0)
    n_jobs: int = 1


class CVConfig(BaseModel):
    n_folds: int = Field(default=5, ge=2)
    device: str = "cpu"


class FusionConfig(BaseModel):
    variants: List[int] = Field(default_factory=lambda: [1, 2, 3, 4, 6, 7])
    n_trials: int = Field(default=500, ge=1)
    mode: Literal["refit", "cv_ensemble"] = "refit"
    lr_regularized: bool = True
    lr_c: float = Field(default=1.0, gt=0)


class EvaluationConfig(BaseModel):
    models: List[int] = Field(default_factory=lambda: [2, 4, 5, 6, 7])
    n_bootstrap: int = Field(default=2000, ge=1)
    ci_level: float = Field(default=0.95, gt=0, lt=1)
    render_plots: bool = True


class SubgroupConfig(BaseModel):
    name: str = "kl01"
    kl_baseline: List[int] = Field(default_factory=lambda: [0, 1])


class ExplainConfig(BaseModel):
    n_images: int = Field(default=8, ge=1)
    normalization: Literal["raw", "unit-max"] = "unit-max"


class SynthConfig(BaseModel):
    n_train_subjects: int = Field(default=500, ge=1)
    n_test_subjects: int = Field(default=200, ge=1)
    progression_rate: float = Field(default=0.3, gt=0, lt=1)
    # per-signal separation in units of its noise sd
    gap_effect: float = 1.28
    blob_effect: float = 1.28
    missing_rate: float = Field(default=0.1, ge=0, lt=1)


class PipelineConfig(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="OAPROG_",
        env_nested_delimiter="__",
        env_file=".env",
        extra="ignore",
    )

    paths: PathsConfig = Field(default_factory=PathsConfig)
    seeds: SeedsConfig = Field(default_factory=SeedsConfig)
    cohort: CohortConfig = Field(default_factory=CohortConfig)
    imaging: ImagingConfig = Field(default_factory=ImagingConfig)
    augmentation: AugmentationParams = Field(default_factory=AugmentationParams)
    backbone: BackboneSpec = Field(default_factory=BackboneSpec)
    training: TrainingSchedule = Field(default_factory=TrainingSchedule)
    cv: CVConfig = Field(default_factory=CVConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    subgroup: SubgroupConfig = Field(default_factory=SubgroupConfig)
    explain: ExplainConfig = Field(default_factory=ExplainConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)
    log_level: str = "INFO"

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        sources = [init_settings, env_settings, dotenv_settings]
        yaml_file = _yaml_file.get()
        if yaml_file is not None:
            sources.append(YamlConfigSettingsSource(settings_cls, yaml_file=yaml_file))
        return tuple(sources)

    def section_hash(self, *sections: str) -> str:
        """SHA-256 over the canonical JSON of the named sections (all but paths/log_level if none)."""
        dumped = self.model_dump(mode="json", exclude={"paths", "log_level"})
        if sections:
            dumped = {name: dumped[name] for name in sections}
        return hashlib.sha256(orjson.dumps(dumped, option=orjson.OPT_SORT_KEYS)).hexdigest()

    def config_hash(self) -> str:
        return self.section_hash()


def load_config(path: Optional[Path] = None, **overrides) -> PipelineConfig:
    """Build a PipelineConfig from an optional YAML file plus keyword overrides."""
    if path is not None and not Path(path).exists():
        raise FileNotFoundError(f"config file not found: {path}")
    token = _yaml_file.set(Path(path) if path is not None else None)
    try:
        return PipelineConfig(**overrides)
    finally:
        _yaml_file.reset(token)
