"""Request/response models of the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field

from ..config import RunConfig
from ..metrics import MetricsReport


class SynthRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: RunConfig = RunConfig()
    out_dir: str


class SynthResponse(BaseModel):
    dataset_dir: str
    manifest_path: str
    n_frames: int
    n_real: int
    n_fake: int
    digest: str


class TrainRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: RunConfig = RunConfig()
    data_dir: str
    out_dir: str


class TrainResponse(BaseModel):
    checkpoint_dir: str
    best_val_auc: float
    best_epoch: int
    epochs_run: int
    metrics_log: str
    config_echo: str
    history_digest: str
    train_families: list[str]


class EvalRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    checkpoint_dir: str
    data_dirs: list[str] = Field(min_length=1)
    out_dir: str
    split: str = "test"
    max_fpr: float = 0.1


class EvalResponse(BaseModel):
    train_families: str
    reports: dict[str, MetricsReport]
    report_paths: list[str]


class GradCamRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    checkpoint_dir: str
    data_dir: str
    out_dir: str
    split: str = "test"
    max_images: int = Field(default=8, ge=1)
    target_class: int = 1
    block_index: int = -1
    alpha: float = 0.5


class GradCamResponse(BaseModel):
    n_images: int
    mean_region_mass: float | None
    overlay_dir: str
    stats_path: str


class HealthResponse(BaseModel):
    status: str
    version: str
