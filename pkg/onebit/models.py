"""
Data models for the 1-bit CI precoding toolkit.

This module contains:
1. Enums for modulation kinds, experiment kinds and run status
2. Pydantic models for simulation configuration, result records and the
   HTTP request/response schemas
3. SQLAlchemy models for persisting simulation runs

Result records are flat so that a list of them maps directly to CSV rows.
"""

import math
from datetime import datetime, timezone
from enum import Enum
from typing import Any, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text
from sqlalchemy.orm import declarative_base

Base = declarative_base()


def utcnow() -> datetime:
    return datetime.now(timezone.utc).replace(tzinfo=None)


# =============================================================================
# Enums
# =============================================================================

class ModulationKind(str, Enum):
    """
    Constellation family.

    PSK: unit-modulus M-PSK, every coordinate can exploit CI
    QAM: square M-QAM, only outer coordinates can exploit CI
    """
    PSK = "PSK"
    QAM = "QAM"


class RunKind(str, Enum):
    """Experiment executed by a simulation run."""
    BER_SWEEP = "ber-sweep"
    NODE_COUNT = "node-count"
    CONVERGENCE = "convergence"
    PROP1_AUDIT = "prop1-audit"


class RunStatus(str, Enum):
    """
    Lifecycle of a persisted simulation run.

    PENDING: accepted, waiting for a worker
    RUNNING: experiment in progress
    COMPLETED: rows stored
    FAILED: experiment raised; message holds the reason
    """
    PENDING = "PENDING"
    RUNNING = "RUNNING"
    COMPLETED = "COMPLETED"
    FAILED = "FAILED"


DEFAULT_PRECODERS = ["zf-1bit", "ci-1bit", "opsu", "pbb"]


# =============================================================================
# Pydantic Schemas (Simulation Layer)
# =============================================================================

class SimConfig(BaseModel):
    """
    Monte Carlo experiment configuration.

    Loaded from a JSON file and/or CLI overrides. Unknown keys are rejected.
    A fixed seed makes every experiment fully reproducible regardless of the
    worker count.
    """
    model_config = ConfigDict(extra="forbid")

    nt: int = Field(default=8, ge=1, description="Transmit antennas")
    k: int = Field(default=2, ge=1, description="Single-antenna users")
    modulation: str = Field(default="qpsk", description="qpsk, 8psk, 16psk, 16qam or 64qam")
    snr_db: List[float] = Field(
        default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0],
        min_length=1,
        description="Transmit SNR grid in dB (rho = 1/sigma^2, unit transmit power)",
    )
    trials: int = Field(default=1000, ge=1, description="Frames (channel realisations) per SNR point or seeds per experiment")
    precoders: List[str] = Field(default_factory=lambda: list(DEFAULT_PRECODERS), min_length=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    epsilon0: float = Field(default=1e-3, gt=0, description="Alternating-optimisation stopping threshold")
    out: Optional[str] = Field(default=None, description="CSV output path")
    k_values: List[int] = Field(default_factory=list, description="User counts swept by node-count / prop1-audit")
    duplicate_users: int = Field(default=0, ge=0, description="Users 2..1+d copy user 1 (rank-deficient audit)")
    workers: int = Field(default=1, ge=1)
    record_timing: bool = Field(default=True, description="False writes wall_ms = 0 for byte-identical CSVs")

    @field_validator("modulation")
    @classmethod
    def _known_modulation(cls, value: str) -> str:
        from onebit.services.constellations import parse_modulation

        return parse_modulation(value).name

    @field_validator("snr_db")
    @classmethod
    def _finite_snr(cls, value: List[float]) -> List[float]:
        if not all(math.isfinite(v) for v in value):
            raise ValueError("SNR grid must be finite")
        return value

    @field_validator("precoders")
    @classmethod
    def _normalise_precoders(cls, value: List[str]) -> List[str]:
        return [name.strip().lower() for name in value]

    @model_validator(mode="after")
    def _check_dimensions(self) -> "SimConfig":
        if self.k > self.nt:
            raise ValueError(f"K = {self.k} exceeds Nt = {self.nt}")
        for k in self.k_values:
            if not 1 <= k <= self.nt:
                raise ValueError(f"k_values entry {k} outside 1..Nt")
        if self.duplicate_users and self.duplicate_users > min(self.user_counts) - 1:
            raise ValueError("duplicate_users must leave at least one original user")
        return self

    @property
    def user_counts(self) -> List[int]:
        return list(self.k_values) if self.k_values else [self.k]


class BERRecord(BaseModel):
    """One (precoder, SNR) point of a bit-error-rate sweep."""
    precoder: str
    snr_db: float
    bits: int = Field(ge=0)
    errors: int = Field(ge=0)
    ber: float = Field(ge=0, le=1)
    ber_stderr: float = Field(ge=0)
    mean_nodes: float
    mean_iters: float
    wall_ms: float


class NodeCountRecord(BaseModel):
    """Mean visited BB nodes for one (K, method) cell."""
    nt: int
    k: int
    modulation: str
    method: str
    trials: int
    mean_nodes: float
    mean_depth: float
    max_depth: int


class ConvergenceRecord(BaseModel):
    """
    One point of a bound trace.

    value is UB0 for PSK (minimisation sense, UB0 = -min(Lambda) of the
    incumbent) and the MSE for QAM.
    """
    method: str
    trial: int
    iteration: int
    value: float


class AuditRecord(BaseModel):
    """Boundary-count audit of one relaxed solution."""
    nt: int
    k: int
    modulation: str
    trial: int
    rank_h: int
    rank_m: int
    count: int
    bound: int
    passed: bool
    kkt_max: float


# =============================================================================
# Pydantic Schemas (API Layer)
# =============================================================================

class PrecodeRequest(BaseModel):
    """A single precoding call over HTTP."""
    channel_real: List[List[float]] = Field(description="Re(H), K rows of Nt entries")
    channel_imag: List[List[float]] = Field(description="Im(H), same shape as channel_real")
    symbol_indices: List[int] = Field(min_length=1, description="Alphabet index per user")
    modulation: str = Field(default="qpsk")
    precoder: str = Field(default="pbb")
    snr_db: float = Field(default=10.0, description="Used for the QAM precoding factor")

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "channel_real": [[0.3, -1.1, 0.7, 0.2]],
                "channel_imag": [[0.9, 0.4, -0.5, 1.3]],
                "symbol_indices": [0],
                "modulation": "qpsk",
                "precoder": "pbb",
                "snr_db": 10.0,
            }
        }
    )


class PrecodeResponse(BaseModel):
    x_real: List[float]
    x_imag: List[float]
    beta: float
    objective: float
    nodes_visited: int = 0
    depth_iterations: int = 0
    alt_rounds: int = 0


class RunRequest(BaseModel):
    """Request to execute an experiment in the background."""
    kind: RunKind
    config: SimConfig


class RunResponse(BaseModel):
    id: int
    kind: RunKind
    status: RunStatus
    message: Optional[str] = None
    row_count: int = 0
    wall_ms: Optional[float] = None
    created_at: datetime
    updated_at: datetime
    rows: Optional[List[dict[str, Any]]] = None


# =============================================================================
# SQLAlchemy Models (Database Layer)
# =============================================================================

class SimulationRun(Base):
    """
    Database model for one experiment run.

    The full SimConfig is stored as JSON so that a run can be replayed.
    """
    __tablename__ = "simulation_runs"

    id = Column(Integer, primary_key=True, autoincrement=True)
    kind = Column(String(32), nullable=False, index=True)
    status = Column(String(16), default=RunStatus.PENDING.value, index=True)
    config_json = Column(Text, nullable=False)

    message = Column(Text, nullable=True)
    row_count = Column(Integer, default=0)
    wall_ms = Column(Float, nullable=True)

    created_at = Column(DateTime, default=utcnow)
    updated_at = Column(DateTime, default=utcnow, onupdate=utcnow)


class RunRow(Base):
    """One result record (BER point, node count, trace point or audit row) of a run."""
    __tablename__ = "run_rows"

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey("simulation_runs.id"), nullable=False, index=True)
    row_index = Column(Integer, nullable=False)
    payload_json = Column(Text, nullable=False)
