"""
Run manifest models.

A manifest lists every artifact a run wrote, with content hashes, plus the
timing of each engine stage. It is the last file written by a run.
"""

from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class StageStatus(str, Enum):
    """Status of one engine stage."""
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


class StageRecord(BaseModel):
    """One stage of a run."""

    stage_name: str = Field(..., description="Name of the stage")
    status: StageStatus = Field(default=StageStatus.RUNNING, description="Status of this stage")
    started_at: Optional[datetime] = Field(None, description="When this stage started")
    completed_at: Optional[datetime] = Field(None, description="When this stage completed")
    duration_seconds: Optional[float] = Field(None, description="Wall time in seconds")
    error_message: Optional[str] = Field(None, description="Error message if the stage failed")
    details: Dict[str, Any] = Field(default_factory=dict, description="Stage summary values")


class ArtifactFile(BaseModel):
    """A file written by a run."""

    path: str = Field(..., description="Path relative to the output directory")
    sha256: str = Field(..., description="Hex digest of the file content")
    bytes: int = Field(..., ge=0, description="File size")
    kind: str = Field(default="csv", description="csv, json or svg")
    description: str = Field(default="", description="What the file holds")


class ArtifactManifest(BaseModel):
    """Everything needed to audit and reproduce a run."""

    run_id: str = Field(..., description="Unique run identifier")
    experiment: str = Field(..., description="Experiment or command id")
    seed: int = Field(..., ge=0, description="Seed of the run")
    replications: int = Field(default=1, ge=1, description="Replication count R")
    config_hash: str = Field(..., description="sha256 of the canonical configuration")
    package_version: str = Field(..., description="statistical_jko version")
    created_at: datetime = Field(..., description="When the run started")
    wall_time_seconds: float = Field(default=0.0, ge=0, description="Total wall time")
    files: List[ArtifactFile] = Field(default_factory=list, description="Emitted files in write order")
    stages: List[StageRecord] = Field(default_factory=list, description="Engine stages in execution order")
    summary: Dict[str, Any] = Field(default_factory=dict, description="Headline numbers of the run")
