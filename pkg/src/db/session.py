import os
from functools import lru_cache
from pathlib import Path

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import declarative_base, sessionmaker

MANIFEST_FILENAME = "manifest.db"

Base = declarative_base()


def manifest_url(output_dir: Path) -> str:
    url = os.getenv("OAPROG_MANIFEST_URL")
    if url:
        return url
    return f"sqlite:///{Path(output_dir).resolve() / MANIFEST_FILENAME}"


@lru_cache(maxsize=None)
def get_engine(url: str) -> Engine:
    engine = create_engine(url, echo=False)
    # models must be registered on Base before create_all
    from src.models.stage_run import StageRun  # noqa: F401

    Base.metadata.create_all(bind=engine)
    return engine


def session_factory(output_dir: Path) -> sessionmaker:
    Path(output_dir).mkdir(parents=True, exist_ok=True)
    engine = get_engine(manifest_url(output_dir))
    return sessionmaker(autocommit=False, autoflush=False, bind=engine)
