from datetime import datetime
from typing import Dict, List, Optional
from uuid import UUID

from pydantic import BaseModel


class StageRunOut(BaseModel):
    id: UUID
    stage: str
    config_hash: str
    input_hashes: Dict[str, str]
    output_hashes: Dict[str, str]
    software_version: str
    started_at: datetime
    finished_at: Optional[datetime] = None
    outcome: str
    error: Optional[str] = None

    class Config:
        from_attributes = True


class RunManifest(BaseModel):
    config_hash: str
    software_version: str
    stages: List[StageRunOut]
