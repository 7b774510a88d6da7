"""Pydantic request/response models for the HTTP service."""
from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str
    live_run: bool


class GenerateRequest(BaseModel):
    filename: str = Field(description="output file, relative to the service workdir")
    seed: int = 0
    duration_s: float = 600.0
    onsets_s: list[float] = [420.0]
    horizon_s: float = 300.0
    eeg_channels: int = 2
    snr_db: float = 6.0
    theta_ramp_gain: float = 1.0
    rr_shortening_fraction: float = 0.2
    sample_rate_hz: float = 256.0


class GenerateResponse(BaseModel):
    path: str
    duration_s: float
    channels: list[str]
    n_samples: int
    annotations: list[tuple[float, float]]


class TrainRequest(BaseModel):
    recordings: list[str] = Field(description="recording files under the workdir")
    kind: str = Field(pattern="^(eeg|ecg)$")
    filename: str
    seed: int = 0
    window_s: float = 4.0
    stride_s: float = 2.0
    horizon_s: float = 300.0
    hidden: list[int] = [16]
    lr: float = 0.1
    epochs: int = 200


class TrainResponse(BaseModel):
    path: str
    layer_sizes: list[int]
    n_params: int
    serialized_bytes: int
    budget_bytes: int
    version: str


class SimulateRequest(BaseModel):
    scenario: dict[str, Any] = Field(
        default_factory=dict,
        description="same structure as the scenario TOML, as JSON",
    )
    seed: Optional[int] = None
    report_filename: Optional[str] = None


class SimulateResponse(BaseModel):
    report: dict[str, Any]
    report_path: Optional[str] = None


class EvaluateRequest(BaseModel):
    report: Optional[dict[str, Any]] = None
    report_path: Optional[str] = None


class EvaluateResponse(BaseModel):
    metrics: dict[str, Any]
    confusion: dict[str, Any]
    event_scoring: dict[str, Any]


class ErrorResponse(BaseModel):
    detail: str
    errors: list[str] = []
