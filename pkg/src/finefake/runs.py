"""Orchestration of whole runs: synthesize a dataset, train a detector,
evaluate checkpoints across manipulation families, and emit Grad-CAM
overlays. These functions take the service request models and return
response models; the HTTP layer and CLI are thin wrappers around them.

Relative run directories resolve against $FINEFAKE_RUN_ROOT (default:
the current working directory).
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import RunConfig, echo_config
from .data import (
    DatasetManifest,
    dataset_digest,
    generate_synthetic,
    load_annotations,
    load_manifest,
    load_split_arrays,
    sample_frames,
)
from .errors import CheckpointError, DataError
from .explain import grad_cam, overlay, region_mass_fraction
from .metrics import MetricsReport
from .service.schemas import (
    EvalRequest,
    EvalResponse,
    GradCamRequest,
    GradCamResponse,
    SynthRequest,
    SynthResponse,
    TrainRequest,
    TrainResponse,
)
from .trainer import (
    ModuleToggles,
    evaluate,
    history_digest,
    load_checkpoint,
    save_checkpoint,
    train,
)


def resolve_dir(path: str | Path) -> Path:
    p = Path(path)
    if p.is_absolute():
        return p
    root = os.environ.get("FINEFAKE_RUN_ROOT", ".")
    return Path(root) / p


def run_synth(request: SynthRequest) -> SynthResponse:
    out_dir = resolve_dir(request.out_dir)
    cfg = request.config
    manifest = generate_synthetic(cfg.synth, out_dir)
    echo_config(cfg, out_dir / "config.yaml")
    labels = [r.label for r in manifest.records]
    return SynthResponse(
        dataset_dir=str(out_dir),
        manifest_path=str(out_dir / "manifest.csv"),
        n_frames=len(labels),
        n_real=labels.count(0),
        n_fake=labels.count(1),
        digest=dataset_digest(out_dir),
    )


def _load_arrays(manifest, split: str, data_cfg):
    return load_split_arrays(
        manifest, split, data_cfg.image_size, tuple(data_cfg.mean), tuple(data_cfg.std)
    )


def run_train(request: TrainRequest) -> TrainResponse:
    cfg = request.config
    data_dir = resolve_dir(request.data_dir)
    out_dir = resolve_dir(request.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(data_dir / "manifest.csv")
    if cfg.data.per_video_counts is not None:
        manifest = sample_frames(
            manifest, cfg.data.per_video_counts.as_dict(), cfg.data.sampling_seed
        )
    x_train, y_train, _ = _load_arrays(manifest, "train", cfg.data)
    x_val, y_val, _ = _load_arrays(manifest, "val", cfg.data)
    result = train(
        cfg.model,
        cfg.train,
        (x_train, y_train),
        (x_val, y_val),
        log_path=out_dir / "metrics.jsonl",
    )
    families = manifest.families()
    ckpt_dir = save_checkpoint(
        out_dir / "checkpoint",
        result.model,
        cfg.model,
        cfg.train,
        extra={
            "best_epoch": result.best_epoch,
            "val_auc": result.best_val_auc,
            "train_families": families,
            "run_config": cfg.model_dump(mode="json"),
        },
    )
    echo_config(cfg, out_dir / "config.yaml")
    return TrainResponse(
        checkpoint_dir=str(ckpt_dir),
        best_val_auc=result.best_val_auc,
        best_epoch=result.best_epoch,
        epochs_run=result.epochs_run,
        metrics_log=str(out_dir / "metrics.jsonl"),
        config_echo=str(out_dir / "config.yaml"),
        history_digest=history_digest(result.history),
        train_families=families,
    )


def _eval_toggles(meta: dict) -> ModuleToggles:
    return ModuleToggles(**meta["train_config"]["toggles"])


def run_eval(request: EvalRequest) -> EvalResponse:
    ckpt_dir = resolve_dir(request.checkpoint_dir)
    out_dir = resolve_dir(request.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, meta = load_checkpoint(ckpt_dir)
    run_cfg = meta.get("run_config")
    if run_cfg is None:
        raise CheckpointError(f"{ckpt_dir} lacks the embedded run config")
    cfg = RunConfig(**run_cfg)
    toggles = _eval_toggles(meta)
    train_tag = "+".join(meta.get("train_families") or ["unknown"])
    reports: dict[str, MetricsReport] = {}
    report_paths: list[str] = []
    for data_dir in request.data_dirs:
        data_dir = resolve_dir(data_dir)
        manifest = load_manifest(Path(data_dir) / "manifest.csv")
        x, y, _ = _load_arrays(manifest, request.split, cfg.data)
        report, _scores = evaluate(
            model, (x, y), toggles, cfg.train.batch_size, max_fpr=request.max_fpr
        )
        test_tag = "+".join(manifest.families() or [Path(data_dir).name])
        reports[test_tag] = report
        path = out_dir / f"report_{train_tag}_{test_tag}.json"
        path.write_text(json.dumps(report.model_dump(), indent=2, sort_keys=True))
        report_paths.append(str(path))
    return EvalResponse(
        train_families=train_tag, reports=reports, report_paths=report_paths
    )


def run_gradcam(request: GradCamRequest) -> GradCamResponse:
    ckpt_dir = resolve_dir(request.checkpoint_dir)
    data_dir = resolve_dir(request.data_dir)
    out_dir = resolve_dir(request.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, meta = load_checkpoint(ckpt_dir)
    run_cfg = meta.get("run_config")
    if run_cfg is None:
        raise CheckpointError(f"{ckpt_dir} lacks the embedded run config")
    cfg = RunConfig(**run_cfg)
    toggles = _eval_toggles(meta)
    manifest = load_manifest(data_dir / "manifest.csv")
    annotations = {}
    ann_path = data_dir / "annotations.csv"
    if ann_path.is_file():
        annotations = load_annotations(ann_path)
    records = [r for r in manifest.for_split(request.split) if r.label == 1]
    if not records:
        raise DataError(f"no fake frames in split {request.split!r} of {data_dir}")
    records = records[: request.max_images]
    size = cfg.data.image_size
    stats: list[tuple[str, float | None]] = []
    fractions: list[float] = []
    for record in records:
        x, _, _ = _load_arrays(
            DatasetManifest(root=manifest.root, records=[record]), request.split, cfg.data
        )
        heatmap = grad_cam(
            model,
            torch.as_tensor(x[0]),
            target_class=request.target_class,
            block_index=request.block_index,
            bs=toggles.bs,
            refinement=toggles.refinement,
        )
        with Image.open(manifest.resolve(record)) as img:
            raw = np.asarray(img.convert("RGB").resize((size, size), Image.BILINEAR))
        name = Path(record.frame_path).stem
        overlay(heatmap, raw, out_dir / f"cam_{name}.png", alpha=request.alpha)
        region = annotations.get(record.frame_path)
        if region is not None:
            frac = region_mass_fraction(heatmap, region)
            fractions.append(frac)
            stats.append((record.frame_path, frac))
        else:
            stats.append((record.frame_path, None))
    stats_path = out_dir / "cam_stats.csv"
    with stats_path.open("w") as fh:
        fh.write("frame_path,region_mass_fraction\n")
        for path_str, frac in stats:
            fh.write(f"{path_str},{'' if frac is None else repr(frac)}\n")
    return GradCamResponse(
        n_images=len(records),
        mean_region_mass=float(np.mean(fractions)) if fractions else None,
        overlay_dir=str(out_dir),
        stats_path=str(stats_path),
    )
