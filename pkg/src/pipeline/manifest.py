"""
The run manifest: one StageRun row per executed stage, with the hashes of
everything the stage read and wrote.
"""
import hashlib
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional

import orjson
from sqlalchemy.orm import Session

from src.core.config import SOFTWARE_VERSION
from src.models.stage_run import StageRun
from src.pipeline.schemas import RunManifest, StageRunOut

logger = logging.getLogger(__name__)

CHUNK_SIZE = 1 << 20


def _utcnow() -> datetime:
    return datetime.now(timezone.utc).replace(tzinfo=None)


def hash_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(CHUNK_SIZE), b""):
            digest.update(chunk)
    return digest.hexdigest()


def hash_path(path: Path) -> str:
    """SHA-256 of a file, or of a directory's sorted (relative path, file hash) pairs."""
    path = Path(path)
    if path.is_file():
        return hash_file(path)
    if not path.is_dir():
        raise FileNotFoundError(f"artifact not found: {path}")
    digest = hashlib.sha256()
    for child in sorted(p for p in path.rglob("*") if p.is_file()):
        digest.update(child.relative_to(path).as_posix().encode())
        digest.update(hash_file(child).encode())
    return digest.hexdigest()


def record_stage_run(
    db: Session,
    stage: str,
    config_hash: str,
    input_hashes: Dict[str, str],
    output_hashes: Dict[str, str],
    started_at: datetime,
    outcome: str,
    error: Optional[str] = None,
) -> StageRun:
    run = StageRun(
        stage=stage,
        config_hash=config_hash,
        input_hashes=input_hashes,
        output_hashes=output_hashes,
        software_version=SOFTWARE_VERSION,
        started_at=started_at,
        finished_at=_utcnow(),
        outcome=outcome,
        error=error,
    )
    db.add(run)
    db.commit()
    db.refresh(run)
    return run


def latest_success(db: Session, stage: str) -> Optional[StageRun]:
    return (
        db.query(StageRun)
          .filter(StageRun.stage == stage, StageRun.outcome == "Success")
          .order_by(StageRun.finished_at.desc())
          .first()
    )


def stage_history(db: Session, stage: Optional[str] = None, limit: int = 50) -> List[StageRun]:
    query = db.query(StageRun)
    if stage is not None:
        query = query.filter(StageRun.stage == stage)
    return query.order_by(StageRun.finished_at.desc()).limit(limit).all()


def build_manifest(db: Session, config_hash: str) -> RunManifest:
    runs = db.query(StageRun).order_by(StageRun.started_at, StageRun.finished_at).all()
    return RunManifest(
        config_hash=config_hash,
        software_version=SOFTWARE_VERSION,
        stages=[StageRunOut.model_validate(run) for run in runs],
    )


def export_manifest(db: Session, path: Path, config_hash: str) -> Path:
    manifest = build_manifest(db, config_hash)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(manifest.model_dump(mode="json"), option=orjson.OPT_INDENT_2))
    return path


def purge_failed_runs(db: Session) -> int:
    """Delete Failure rows; successful runs are what the no-op and staleness checks rely on."""
    deleted = (
        db.query(StageRun)
          .filter(StageRun.outcome == "Failure")
          .delete(synchronize_session=False)
    )
    db.commit()
    logger.info(f"Purged {deleted} failed stage run(s)")
    return deleted
