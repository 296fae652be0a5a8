"""End-to-end training and evaluation: optimizer setup, the epoch loop
with temperature decay and early stopping on validation AUC, loss
reporting, checkpointing, and frame-level scoring.
"""

from __future__ import annotations

import copy
import hashlib
import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Literal

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field

from . import __version__
from .detector import ModelConfig, build_model
from .errors import CheckpointError, ProtocolError
from .metrics import MetricsReport, roc_auc, score_report
from .refinement import TemperatureSchedule, TotalLossWeights, temperature_at, total_loss
from .suppression import BsLossWeights, bs_total_loss

OPTIMIZER_DEFAULTS = {
    # (learning rate, weight decay)
    "adaptive_moment": (0.001, 1e-6),
    "sgd_cosine": (0.0001, 0.0003),
}


class ModuleToggles(BaseModel):
    model_config = ConfigDict(extra="forbid")

    bs: bool = True
    refinement: bool = True


class TrainConfig(BaseModel):
    """Optimization and stopping hyperparameters."""

    model_config = ConfigDict(extra="forbid")

    optimizer: Literal["adaptive_moment", "sgd_cosine"] = "adaptive_moment"
    optimizer_b: Literal["adaptive_moment", "sgd_cosine"] | None = None  # hybrid branch b
    learning_rate: float | None = None
    weight_decay: float | None = None
    batch_size: int = Field(default=64, ge=1)
    max_epochs: int = Field(default=30, ge=1)
    early_stop_patience: int = Field(default=5, ge=1)
    seed: int = 0
    toggles: ModuleToggles = ModuleToggles()
    bs_weights: BsLossWeights = BsLossWeights()
    total_weights: TotalLossWeights = TotalLossWeights()
    schedule: TemperatureSchedule = TemperatureSchedule()
    deterministic: bool = True  # pin math to one thread for bitwise repeatability

    def resolved_lr(self, optimizer: str | None = None) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return OPTIMIZER_DEFAULTS[optimizer or self.optimizer][0]

    def resolved_weight_decay(self, optimizer: str | None = None) -> float:
        if self.weight_decay is not None:
            return self.weight_decay
        return OPTIMIZER_DEFAULTS[optimizer or self.optimizer][1]


@dataclass
class LossReport:
    """Named loss components of one training step, with the weighted sums
    recomputed in double precision so the Eq-level identities hold on the
    logged values."""

    epoch: int
    step: int
    temperature: float
    loss_m: float
    loss_d: float
    loss_l: float
    loss_bs: float
    loss_r: float
    loss_total: float

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["kind"] = "step"
        return rec


@dataclass
class TrainResult:
    model: torch.nn.Module
    history: list[dict]
    best_val_auc: float
    best_epoch: int
    epochs_run: int


def _check_dataset(name: str, labels: np.ndarray) -> None:
    if labels.size == 0:
        raise ProtocolError(f"{name} set is empty")
    classes = set(np.unique(labels).tolist())
    if not {0, 1} <= classes:
        raise ProtocolError(f"{name} set must contain both classes, has labels {sorted(classes)}")


def _make_optimizers(model, cfg: TrainConfig):
    optimizers = []
    schedulers = []

    def add(kind: str, params):
        params = [p for p in params if p.requires_grad]
        if not params:
            return
        lr = cfg.resolved_lr(kind)
        wd = cfg.resolved_weight_decay(kind)
        if kind == "adaptive_moment":
            opt = torch.optim.Adam(params, lr=lr, weight_decay=wd)
            sched = None
        else:
            opt = torch.optim.SGD(params, lr=lr, momentum=0.9, weight_decay=wd)
            sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.max_epochs)
        optimizers.append(opt)
        schedulers.append(sched)

    if cfg.optimizer_b is not None and hasattr(model, "branch_b"):
        branch_b_ids = {id(p) for p in model.branch_b.parameters()}
        add(cfg.optimizer, (p for p in model.parameters() if id(p) not in branch_b_ids))
        add(cfg.optimizer_b, model.branch_b.parameters())
    else:
        add(cfg.optimizer, model.parameters())
    return optimizers, schedulers


def score_frames(
    model: torch.nn.Module,
    images: np.ndarray | torch.Tensor,
    toggles: ModuleToggles,
    batch_size: int = 64,
) -> np.ndarray:
    """Fake-class softmax probability per frame, from the decision logits."""
    x = torch.as_tensor(images)
    dtype = next(model.parameters()).dtype
    model.eval()
    scores = []
    with torch.no_grad():
        for start in range(0, x.shape[0], batch_size):
            batch = x[start : start + batch_size].to(dtype)
            out = model(batch, bs=toggles.bs, refinement=toggles.refinement)
            probs = torch.softmax(out.decision_logits, dim=-1)
            scores.append(probs[:, 1].double().cpu().numpy())
    return np.concatenate(scores)


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_data: tuple[np.ndarray, np.ndarray],
    val_data: tuple[np.ndarray, np.ndarray],
    log_path: Path | str | None = None,
    val_scorer: Callable[[torch.nn.Module, int], float] | None = None,
) -> TrainResult:
    """Fit the configured detector with early stopping on validation AUC.

    Returns the model restored to its best-validation-AUC state plus the
    full step/epoch history. `val_scorer` can replace the default
    validation AUC computation (used by tests to script stop decisions).
    """
    x_train, y_train = train_data
    x_val, y_val = val_data
    _check_dataset("train", np.asarray(y_train))
    if val_scorer is None:
        _check_dataset("validation", np.asarray(y_val))

    prev_threads = torch.get_num_threads()
    if train_cfg.deterministic:
        torch.set_num_threads(1)
    try:
        torch.manual_seed(train_cfg.seed)
        toggles = train_cfg.toggles
        model = build_model(model_cfg, seed=train_cfg.seed, bs_enabled=toggles.bs)
        dtype = next(model.parameters()).dtype
        xt = torch.as_tensor(x_train, dtype=dtype)
        yt = torch.as_tensor(np.asarray(y_train), dtype=torch.long)
        optimizers, schedulers = _make_optimizers(model, train_cfg)

        shuffler = torch.Generator().manual_seed(train_cfg.seed + 0x5EED)
        history: list[dict] = []
        log_fh = Path(log_path).open("w") if log_path is not None else None

        def emit(record: dict) -> None:
            history.append(record)
            if log_fh is not None:
                log_fh.write(json.dumps(record) + "\n")

        best_auc = float("-inf")
        best_epoch = -1
        best_state = None
        stale = 0
        step = 0
        epochs_run = 0
        n = xt.shape[0]
        w = train_cfg.bs_weights
        tw = train_cfg.total_weights

        try:
            for epoch in range(train_cfg.max_epochs):
                epochs_run = epoch + 1
                t_e = temperature_at(train_cfg.schedule, epoch)
                model.train()
                perm = torch.randperm(n, generator=shuffler)
                for start in range(0, n, train_cfg.batch_size):
                    idx = perm[start : start + train_cfg.batch_size]
                    if model_cfg.hybrid and idx.shape[0] == 1:
                        # BatchNorm in the hybrid head cannot normalize one sample
                        warnings.warn("skipping size-1 batch in hybrid mode", stacklevel=2)
                        continue
                    batch_x, batch_y = xt[idx], yt[idx]
                    out = model(batch_x, bs=toggles.bs, refinement=toggles.refinement)
                    comps = model.loss_components(
                        out,
                        batch_y,
                        bs=toggles.bs,
                        refinement=toggles.refinement,
                        temperature=t_e,
                        dropped_reduction=model_cfg.dropped_reduction,
                        detach_teacher=model_cfg.detach_teacher,
                    )
                    loss_bs = bs_total_loss(comps["merged"], comps["dropped"], comps["layer"], w)
                    loss = total_loss(loss_bs, comps["refinement"], tw)
                    if not torch.isfinite(loss.detach()):
                        raise ProtocolError(
                            f"training diverged at epoch {epoch} step {step}: "
                            f"total={loss.detach().item()} components="
                            f"{ {k: v.detach().item() for k, v in comps.items()} }"
                        )
                    for opt in optimizers:
                        opt.zero_grad(set_to_none=True)
                    loss.backward()
                    for opt in optimizers:
                        opt.step()

                    m, d, l, r = (
                        float(comps["merged"].detach()),
                        float(comps["dropped"].detach()),
                        float(comps["layer"].detach()),
                        float(comps["refinement"].detach()),
                    )
                    bs_val = w.merged * m + w.dropped * d + w.layer * l
                    report = LossReport(
                        epoch=epoch,
                        step=step,
                        temperature=t_e,
                        loss_m=m,
                        loss_d=d,
                        loss_l=l,
                        loss_bs=bs_val,
                        loss_r=r,
                        loss_total=bs_val + tw.refinement * r,
                    )
                    emit(report.to_record())
                    step += 1

                for sched in schedulers:
                    if sched is not None:
                        sched.step()

                if val_scorer is not None:
                    val_auc = float(val_scorer(model, epoch))
                else:
                    scores = score_frames(model, x_val, toggles, train_cfg.batch_size)
                    val_auc = roc_auc(scores, y_val)
                emit({"kind": "epoch", "epoch": epoch, "val_auc": val_auc, "temperature": t_e})

                if val_auc > best_auc:
                    best_auc = val_auc
                    best_epoch = epoch
                    best_state = copy.deepcopy(model.state_dict())
                    stale = 0
                else:
                    stale += 1
                    if stale >= train_cfg.early_stop_patience:
                        break
        finally:
            if log_fh is not None:
                log_fh.close()

        if best_state is not None:
            model.load_state_dict(best_state)
        return TrainResult(
            model=model,
            history=history,
            best_val_auc=best_auc,
            best_epoch=best_epoch,
            epochs_run=epochs_run,
        )
    finally:
        torch.set_num_threads(prev_threads)


def evaluate(
    model: torch.nn.Module,
    data: tuple[np.ndarray, np.ndarray],
    toggles: ModuleToggles,
    batch_size: int = 64,
    max_fpr: float = 0.1,
) -> tuple[MetricsReport, np.ndarray]:
    """Frame-level metrics over one scored set."""
    x, y = data
    _check_dataset("evaluation", np.asarray(y))
    scores = score_frames(model, x, toggles, batch_size)
    return score_report(scores, y, max_fpr=max_fpr), scores


def history_digest(history: list[dict]) -> str:
    """Order- and value-exact hash of a training history."""
    digest = hashlib.sha256()
    for record in history:
        canon = {
            k: (v.hex() if isinstance(v, float) else v) for k, v in sorted(record.items())
        }
        digest.update(json.dumps(canon, sort_keys=True).encode())
    return digest.hexdigest()


def save_checkpoint(
    out_dir: Path | str,
    model: torch.nn.Module,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    extra: dict | None = None,
) -> Path:
    """Parameter blob plus a sidecar metadata record (configs, seed,
    parameter count) sufficient to rebuild the model."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), out_dir / "model.pt")
    meta = {
        "package_version": __version__,
        "model_config": model_cfg.model_dump(),
        "train_config": train_cfg.model_dump(),
        "seed": train_cfg.seed,
        "parameter_count": sum(p.numel() for p in model.parameters()),
    }
    meta.update(extra or {})
    (out_dir / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return out_dir


def load_checkpoint(ckpt_dir: Path | str) -> tuple[torch.nn.Module, dict]:
    """Rebuild the model recorded in a checkpoint directory."""
    ckpt_dir = Path(ckpt_dir)
    meta_path = ckpt_dir / "metadata.json"
    blob_path = ckpt_dir / "model.pt"
    if not meta_path.is_file() or not blob_path.is_file():
        raise CheckpointError(f"{ckpt_dir} is not a checkpoint directory")
    try:
        meta = json.loads(meta_path.read_text())
        model_cfg = ModelConfig(**meta["model_config"])
        train_cfg = TrainConfig(**meta["train_config"])
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"unreadable checkpoint metadata in {ckpt_dir}: {exc}") from exc
    model = build_model(model_cfg, seed=meta["seed"], bs_enabled=train_cfg.toggles.bs)
    try:
        state = torch.load(blob_path, weights_only=True)
        model.load_state_dict(state)
    except (RuntimeError, KeyError) as exc:
        raise CheckpointError(f"parameter blob incompatible with config: {exc}") from exc
    model.eval()
    return model, meta
