import logging
from pathlib import Path
from typing import Optional

import typer
from pydantic import ValidationError
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from src.core.config import PipelineConfig, load_config
from src.core.errors import OAProgError
from src.core.logging import setup_logging
from src.db.session import session_factory
from src.pipeline.manifest import export_manifest, latest_success, purge_failed_runs, stage_history
from src.pipeline.stages import PIPELINE_ORDER, STAGES, run_stage

logger = logging.getLogger(__name__)

app = typer.Typer(name="oaprog", help="Knee OA progression pipeline.", add_completion=False)
console = Console()

ConfigOption = typer.Option(None, "--config", "-c", help="YAML config file.")
SeedOption = typer.Option(None, "--seed", help="Override every seed in the config.")
OutOption = typer.Option(None, "--out", help="Output directory (overrides paths.output_dir).")


def _load(config: Optional[Path], seed: Optional[int], out: Optional[Path]) -> PipelineConfig:
    cfg = load_config(config)
    updates = {}
    if seed is not None:
        updates["seeds"] = cfg.seeds.all_set_to(seed)
    if out is not None:
        updates["paths"] = cfg.paths.model_copy(update={"output_dir": out})
    if updates:
        cfg = cfg.model_copy(update=updates)
    setup_logging(cfg.log_level)
    return cfg


def _fail(exc: Exception, code: int) -> None:
    console.print(f"[bold red]error:[/bold red] {escape(str(exc))}")
    raise typer.Exit(code=code)


def _when(moment) -> str:
    return moment.strftime("%Y-%m-%d %H:%M:%S") if moment else "-"


def _run(stages, config: Optional[Path], seed: Optional[int], out: Optional[Path]) -> None:
    try:
        cfg = _load(config, seed, out)
        for name in stages:
            run_stage(name, cfg)
    except ValidationError as exc:
        _fail(exc, 2)
    except FileNotFoundError as exc:
        _fail(exc, 2)
    except OAProgError as exc:
        _fail(exc, exc.exit_code)


def _register(name: str, doc: str) -> None:
    def command(
        config: Optional[Path] = ConfigOption,
        seed: Optional[int] = SeedOption,
        out: Optional[Path] = OutOption,
    ) -> None:
        _run([name], config, seed, out)

    command.__doc__ = doc
    app.command(name)(command)


_register("synth-data", "Generate a synthetic cohort with known signal into paths.data_dir.")
_register("prepare-cohort", "Parse metadata, select knees and assign progression labels.")
_register("preprocess", "Extract, resample and normalize knee ROIs.")
_register("train-cnn", "Train the multi-task CNN with subject-level cross-validation.")
_register("infer", "Out-of-fold features for the training set and ensemble predictions for the test set.")
_register("train-fusion", "Fit the clinical, KL and stacked models on out-of-fold features.")
_register("evaluate", "Score the test set and write the metric report.")
_register("explain", "Write GradCAM attention overlays for test knees.")


@app.command("run-all")
def run_all(
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Optional[Path] = OutOption,
    synth: bool = typer.Option(False, "--synth", help="Generate synthetic data first."),
) -> None:
    """Run every stage in order; unchanged stages are skipped."""
    stages = ("synth-data", *PIPELINE_ORDER) if synth else PIPELINE_ORDER
    _run(stages, config, seed, out)


@app.command()
def status(
    config: Optional[Path] = ConfigOption,
    out: Optional[Path] = OutOption,
    export: Optional[Path] = typer.Option(None, "--export", help="Write the run manifest as JSON."),
    purge_failures: bool = typer.Option(False, "--purge-failures", help="Delete failed runs from the manifest."),
) -> None:
    """Show the latest run of every stage."""
    try:
        cfg = _load(config, None, out)
    except (ValidationError, FileNotFoundError) as exc:
        _fail(exc, 2)

    db = session_factory(cfg.paths.output_dir)()
    try:
        if purge_failures:
            console.print(f"Purged {purge_failed_runs(db)} failed run(s)")

        table = Table(title=f"Stages in {cfg.paths.output_dir}")
        table.add_column("Stage")
        table.add_column("Last outcome")
        table.add_column("Finished")
        table.add_column("Last success")
        for name in STAGES:
            history = stage_history(db, name, limit=1)
            success = latest_success(db, name)
            table.add_row(
                name,
                history[0].outcome if history else "-",
                _when(history[0].finished_at) if history else "-",
                _when(success.finished_at) if success else "-",
            )
        console.print(table)

        if export is not None:
            path = export_manifest(db, export, cfg.config_hash())
            console.print(f"Manifest written to {path}")
    finally:
        db.close()


if __name__ == "__main__":
    app()
