import uuid
from datetime import datetime, timezone

from sqlalchemy import JSON, Column, DateTime, Text, Uuid

from src.db.session import Base


def _utcnow() -> datetime:
    return datetime.now(timezone.utc).replace(tzinfo=None)


class StageRun(Base):
    __tablename__ = "stage_runs"

    id = Column(Uuid(as_uuid=True), primary_key=True, default=uuid.uuid4)
    stage = Column(Text, nullable=False, index=True)
    config_hash = Column(Text, nullable=False)
    # artifact name -> sha256
    input_hashes = Column(JSON, nullable=False, default=dict)
    output_hashes = Column(JSON, nullable=False, default=dict)
    software_version = Column(Text, nullable=False)
    started_at = Column(DateTime(timezone=False), default=_utcnow, nullable=False)
    finished_at = Column(DateTime(timezone=False), nullable=True)
    # "Success", "Failure"
    outcome = Column(Text, nullable=False)
    error = Column(Text, nullable=True)
