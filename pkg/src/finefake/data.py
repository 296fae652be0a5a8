"""Dataset manifests, frame sampling, preprocessing, and a synthetic
forgery generator for desk-scale cross-manipulation experiments.

The generator composes "real" frames from a textured face-like ellipse
over a cluttered background, with appearance shared per video and small
per-frame jitter. "Fake" frames take the identically rendered clean
frame and apply one local artifact family inside a recorded rectangle:

  blur   - gaussian-blurred patch (texture suppressed locally)
  seam   - blending-boundary ring with a slight interior shift
  color  - channel offset inside the patch

Different families stand in for different manipulation pipelines: the
shared signal is a local statistics anomaly, the appearance differs.
"""

from __future__ import annotations

import csv
import hashlib
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from PIL import Image
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import DataError

MANIFEST_HEADER = ["frame_path", "label", "video_id", "split", "manipulation"]
SPLITS = ("train", "val", "test")
FAMILIES = ("blur", "seam", "color")


@dataclass
class FrameRecord:
    frame_path: str  # relative to the manifest directory
    label: int  # 0 real, 1 fake
    video_id: str
    split: str
    manipulation: str


@dataclass
class DatasetManifest:
    root: Path
    records: list[FrameRecord]

    def for_split(self, split: str) -> list[FrameRecord]:
        return [r for r in self.records if r.split == split]

    def families(self) -> list[str]:
        return sorted({r.manipulation for r in self.records if r.manipulation})

    def videos(self) -> dict[str, list[FrameRecord]]:
        by_video: dict[str, list[FrameRecord]] = {}
        for r in self.records:
            by_video.setdefault(r.video_id, []).append(r)
        return by_video

    def resolve(self, record: FrameRecord) -> Path:
        return self.root / record.frame_path


def save_manifest(manifest: DatasetManifest, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for r in manifest.records:
            writer.writerow([r.frame_path, r.label, r.video_id, r.split, r.manipulation])
    return path


def load_manifest(path: Path | str) -> DatasetManifest:
    """Read and validate a manifest CSV.

    Rejects duplicate frame paths and videos that span labels or splits,
    naming the offending line. Missing image files are only detected when
    frames are read.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty manifest") from None
        if header != MANIFEST_HEADER:
            raise DataError(
                f"{path}: header {header} does not match {MANIFEST_HEADER}"
            )
        records: list[FrameRecord] = []
        seen_paths: dict[str, int] = {}
        video_label: dict[str, tuple[int, int]] = {}
        video_split: dict[str, tuple[str, int]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise DataError(f"{path}:{lineno}: expected {len(MANIFEST_HEADER)} fields, got {len(row)}")
            frame_path, label_s, video_id, split, manipulation = row
            try:
                label = int(label_s)
            except ValueError:
                raise DataError(f"{path}:{lineno}: label {label_s!r} is not an integer") from None
            if label not in (0, 1):
                raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {label}")
            if split not in SPLITS:
                raise DataError(f"{path}:{lineno}: unknown split {split!r}")
            if frame_path in seen_paths:
                raise DataError(
                    f"{path}:{lineno}: duplicate frame_path {frame_path!r} "
                    f"(first seen on line {seen_paths[frame_path]})"
                )
            seen_paths[frame_path] = lineno
            if video_id in video_label and video_label[video_id][0] != label:
                raise DataError(
                    f"{path}:{lineno}: video {video_id!r} has label {label} but line "
                    f"{video_label[video_id][1]} gave it {video_label[video_id][0]}"
                )
            video_label.setdefault(video_id, (label, lineno))
            if video_id in video_split and video_split[video_id][0] != split:
                raise DataError(
                    f"{path}:{lineno}: video {video_id!r} has split {split!r} but line "
                    f"{video_split[video_id][1]} gave it {video_split[video_id][0]!r}"
                )
            video_split.setdefault(video_id, (split, lineno))
            records.append(FrameRecord(frame_path, label, video_id, split, manipulation))
    return DatasetManifest(root=path.parent, records=records)


def _video_rng(seed: int, video_id: str) -> np.random.Generator:
    key = int.from_bytes(hashlib.sha256(video_id.encode()).digest()[:8], "little")
    return np.random.default_rng([seed, key])


def sample_frames(
    manifest: DatasetManifest, per_video_counts: dict[str, int], seed: int = 0
) -> DatasetManifest:
    """Evenly spaced per-video frame subset, up to the split's count.

    The seed only picks the stride phase; videos with fewer frames than
    the count keep everything (with a warning).
    """
    for split, count in per_video_counts.items():
        if count < 1:
            raise DataError(f"per-video count for {split!r} must be >= 1, got {count}")
    kept: list[FrameRecord] = []
    for video_id, frames in manifest.videos().items():
        count = per_video_counts.get(frames[0].split)
        if count is None:
            kept.extend(frames)
            continue
        n = len(frames)
        if n <= count:
            if n < count:
                warnings.warn(
                    f"video {video_id}: only {n} frames for requested {count}, taking all",
                    stacklevel=2,
                )
            kept.extend(frames)
            continue
        base = np.floor(np.arange(count) * n / count).astype(int)
        max_offset = n - 1 - int(base[-1])
        offset = int(_video_rng(seed, video_id).integers(0, max_offset + 1))
        kept.extend(frames[i] for i in base + offset)
    order = {id(r): i for i, r in enumerate(manifest.records)}
    kept.sort(key=lambda r: order[id(r)])
    return DatasetManifest(root=manifest.root, records=kept)


DEFAULT_MEAN = (0.5, 0.5, 0.5)
DEFAULT_STD = (0.25, 0.25, 0.25)


def preprocess(
    image_path: Path | str,
    image_size: int = 256,
    mean: tuple[float, float, float] = DEFAULT_MEAN,
    std: tuple[float, float, float] = DEFAULT_STD,
) -> np.ndarray:
    """Decode, bilinear-resize to (size, size), scale to [0,1], and
    standardize per channel. Returns (3, S, S) float32."""
    try:
        with Image.open(image_path) as img:
            img = img.convert("RGB")
            if img.size != (image_size, image_size):
                img = img.resize((image_size, image_size), Image.BILINEAR)
            arr = np.asarray(img, dtype=np.float32) / 255.0
    except (OSError, SyntaxError) as exc:
        raise DataError(f"cannot decode image {image_path}: {exc}") from exc
    arr = (arr - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    return arr.transpose(2, 0, 1)


def load_split_arrays(
    manifest: DatasetManifest,
    split: str,
    image_size: int,
    mean: tuple[float, float, float] = DEFAULT_MEAN,
    std: tuple[float, float, float] = DEFAULT_STD,
) -> tuple[np.ndarray, np.ndarray, list[FrameRecord]]:
    """Materialize one split as (N,3,S,S) float32 images and (N,) labels."""
    records = manifest.for_split(split)
    if not records:
        return (
            np.zeros((0, 3, image_size, image_size), dtype=np.float32),
            np.zeros((0,), dtype=np.int64),
            [],
        )
    images = np.stack([preprocess(manifest.resolve(r), image_size, mean, std) for r in records])
    labels = np.array([r.label for r in records], dtype=np.int64)
    return images, labels, records


# ---------------------------------------------------------------------------
# Synthetic forgery generator
# ---------------------------------------------------------------------------


class SyntheticConfig(BaseModel):
    """Controls for one generated dataset of a single artifact family."""

    model_config = ConfigDict(extra="forbid")

    family: Literal["blur", "seam", "color"] = "blur"
    num_videos_per_class: int = Field(default=10, ge=1)
    frames_per_video: int = Field(default=20, ge=1)
    image_size: int = Field(default=64, ge=16)
    artifact_region_size: float = Field(default=0.04)
    background_clutter_level: float = Field(default=0.6, ge=0.0, le=1.0)
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> "SyntheticConfig":
        if not 0.0 < self.artifact_region_size <= 0.5:
            raise ValueError(
                f"artifact_region_size must be in (0, 0.5], got {self.artifact_region_size}"
            )
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {self.split_fractions}")
        return self


@dataclass
class Region:
    """Artifact rectangle, half-open pixel coordinates."""

    x0: int
    y0: int
    x1: int
    y1: int

    def mask(self, size: int) -> np.ndarray:
        m = np.zeros((size, size), dtype=bool)
        m[self.y0 : self.y1, self.x0 : self.x1] = True
        return m


def _gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable gaussian blur over (H, W, 3) with edge replication."""
    radius = max(1, int(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    kernel /= kernel.sum()
    padded = np.pad(img, ((radius, radius), (0, 0), (0, 0)), mode="edge")
    out = np.zeros_like(img)
    for k, w in enumerate(kernel):
        out += w * padded[k : k + img.shape[0]]
    padded = np.pad(out, ((0, 0), (radius, radius), (0, 0)), mode="edge")
    out = np.zeros_like(img)
    for k, w in enumerate(kernel):
        out += w * padded[:, k : k + img.shape[1]]
    return out


@dataclass
class _VideoStyle:
    """Per-video appearance parameters, drawn once per video id."""

    bg_color: np.ndarray
    clutter: list[tuple[int, int, int, int, np.ndarray]]
    stripe_angle: float
    stripe_freq: float
    stripe_amp: float
    face_center: np.ndarray
    face_axes: np.ndarray
    skin: np.ndarray
    texture_freq: np.ndarray
    texture_angle: float
    texture_amp: float
    seam_tone: float
    color_shift: np.ndarray


def _draw_style(cfg: SyntheticConfig, rng: np.random.Generator) -> _VideoStyle:
    s = cfg.image_size
    n_clutter = 2 + int(round(cfg.background_clutter_level * 14))
    clutter = []
    for _ in range(n_clutter):
        w = int(rng.integers(s // 10, s // 3))
        h = int(rng.integers(s // 10, s // 3))
        x = int(rng.integers(0, s - w))
        y = int(rng.integers(0, s - h))
        clutter.append((x, y, w, h, rng.uniform(0.1, 0.9, size=3)))
    return _VideoStyle(
        bg_color=rng.uniform(0.2, 0.6, size=3),
        clutter=clutter,
        stripe_angle=float(rng.uniform(0, np.pi)),
        stripe_freq=float(rng.uniform(2, 6)),
        stripe_amp=float(0.12 * cfg.background_clutter_level),
        face_center=rng.uniform(0.42, 0.58, size=2) * s,
        face_axes=rng.uniform(0.26, 0.34, size=2) * s,
        skin=np.array([rng.uniform(0.6, 0.8), rng.uniform(0.45, 0.6), rng.uniform(0.35, 0.5)]),
        texture_freq=rng.uniform(4, 9, size=2),
        texture_angle=float(rng.uniform(0, np.pi)),
        texture_amp=float(rng.uniform(0.06, 0.12)),
        seam_tone=float(rng.choice([0.15, 0.9])),
        color_shift=rng.permutation([1.0, -0.6, 0.0]) * rng.uniform(0.12, 0.2),
    )


def _render_clean(cfg: SyntheticConfig, style: _VideoStyle, frame_rng: np.random.Generator) -> np.ndarray:
    """One clean frame in [0,1] float64, (S, S, 3)."""
    s = cfg.image_size
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    img = np.broadcast_to(style.bg_color, (s, s, 3)).copy()
    # background stripes + clutter shapes
    phase = (xx * np.cos(style.stripe_angle) + yy * np.sin(style.stripe_angle)) / s
    img += style.stripe_amp * np.sin(2 * np.pi * style.stripe_freq * phase)[..., None]
    for x, y, w, h, color in style.clutter:
        img[y : y + h, x : x + w] = 0.65 * img[y : y + h, x : x + w] + 0.35 * color
    # face ellipse with shading and texture, jittered per frame
    center = style.face_center + frame_rng.uniform(-2.0, 2.0, size=2)
    dx = (xx - center[0]) / style.face_axes[0]
    dy = (yy - center[1]) / style.face_axes[1]
    rad = dx**2 + dy**2
    face = rad <= 1.0
    shading = np.clip(1.0 - 0.35 * rad, 0.0, 1.0)
    u = xx * np.cos(style.texture_angle) + yy * np.sin(style.texture_angle)
    v = -xx * np.sin(style.texture_angle) + yy * np.cos(style.texture_angle)
    texture = style.texture_amp * (
        np.sin(2 * np.pi * style.texture_freq[0] * u / s)
        * np.sin(2 * np.pi * style.texture_freq[1] * v / s)
    )
    face_img = (style.skin[None, None, :] * shading[..., None]) + texture[..., None]
    img = np.where(face[..., None], face_img, img)
    # eyes and mouth for a face-like layout
    for ex in (-0.35, 0.35):
        eye = ((xx - (center[0] + ex * style.face_axes[0])) ** 2 + (yy - (center[1] - 0.3 * style.face_axes[1])) ** 2) <= (0.06 * s) ** 2
        img = np.where(eye[..., None], 0.12, img)
    mouth = (np.abs(yy - (center[1] + 0.45 * style.face_axes[1])) <= 0.025 * s) & (
        np.abs(xx - center[0]) <= 0.3 * style.face_axes[0]
    )
    img = np.where(mouth[..., None], 0.2, img)
    img += 0.35 * (frame_rng.uniform(0, 1) - 0.5) * 0.1  # brightness jitter
    img += frame_rng.normal(0.0, 0.02, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _artifact_region(cfg: SyntheticConfig, style: _VideoStyle, frame_rng: np.random.Generator) -> Region:
    s = cfg.image_size
    side = max(3, int(round(s * np.sqrt(cfg.artifact_region_size))))
    cx, cy = style.face_center
    ax, ay = style.face_axes
    x_lo = int(max(0, cx - 0.7 * ax))
    x_hi = int(min(s - side, cx + 0.7 * ax - side))
    y_lo = int(max(0, cy - 0.7 * ay))
    y_hi = int(min(s - side, cy + 0.7 * ay - side))
    x0 = int(frame_rng.integers(x_lo, max(x_lo + 1, x_hi + 1)))
    y0 = int(frame_rng.integers(y_lo, max(y_lo + 1, y_hi + 1)))
    return Region(x0=x0, y0=y0, x1=x0 + side, y1=y0 + side)


def _apply_artifact(img: np.ndarray, family: str, region: Region, style: _VideoStyle) -> np.ndarray:
    out = img.copy()
    sl = (slice(region.y0, region.y1), slice(region.x0, region.x1))
    if family == "blur":
        out[sl] = _gaussian_blur(img, sigma=2.0)[sl]
    elif family == "seam":
        patch = out[sl]
        ring = np.zeros(patch.shape[:2], dtype=bool)
        ring[:2, :] = ring[-2:, :] = True
        ring[:, :2] = ring[:, -2:] = True
        patch[ring] = 0.45 * patch[ring] + 0.55 * style.seam_tone
        patch[~ring] = 0.88 * patch[~ring] + 0.12 * style.seam_tone
        out[sl] = patch
    elif family == "color":
        out[sl] = out[sl] + style.color_shift[None, None, :]
    else:
        raise DataError(f"unknown artifact family {family!r}")
    return np.clip(out, 0.0, 1.0)


def render_frame(
    cfg: SyntheticConfig, video_id: str, frame_index: int, fake: bool
) -> tuple[np.ndarray, Region | None]:
    """Deterministic uint8 frame for (config, video, frame index)."""
    style = _draw_style(cfg, _video_rng(cfg.seed, video_id))
    frame_rng = _video_rng(cfg.seed, f"{video_id}/f{frame_index}")
    clean = _render_clean(cfg, style, frame_rng)
    region = None
    if fake:
        region = _artifact_region(cfg, style, frame_rng)
        clean = _apply_artifact(clean, cfg.family, region, style)
    return (clean * 255.0).round().astype(np.uint8), region


def render_frame_pair(
    cfg: SyntheticConfig, video_id: str, frame_index: int
) -> tuple[np.ndarray, np.ndarray, Region]:
    """The clean frame, its forged counterpart, and the artifact region."""
    style = _draw_style(cfg, _video_rng(cfg.seed, video_id))
    frame_rng = _video_rng(cfg.seed, f"{video_id}/f{frame_index}")
    clean = _render_clean(cfg, style, frame_rng)
    region = _artifact_region(cfg, style, frame_rng)
    forged = _apply_artifact(clean, cfg.family, region, style)
    to_u8 = lambda a: (a * 255.0).round().astype(np.uint8)
    return to_u8(clean), to_u8(forged), region


def _split_for_video(index: int, total: int, fractions: tuple[float, float, float]) -> str:
    n_train = int(round(total * fractions[0]))
    n_val = int(round(total * fractions[1]))
    if index < n_train:
        return "train"
    if index < n_train + n_val:
        return "val"
    return "test"


def generate_synthetic(cfg: SyntheticConfig, out_dir: Path | str) -> DatasetManifest:
    """Write images, manifest.csv, and annotations.csv for one family.

    Fully deterministic from the config seed; fake frames record their
    artifact rectangle in the annotations file.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    records: list[FrameRecord] = []
    annotations: list[tuple[str, Region]] = []
    for label, kind in ((0, "real"), (1, "fake")):
        for v in range(cfg.num_videos_per_class):
            video_id = f"{cfg.family}_{kind}_{v:03d}"
            split = _split_for_video(v, cfg.num_videos_per_class, cfg.split_fractions)
            for f in range(cfg.frames_per_video):
                arr, region = render_frame(cfg, video_id, f, fake=label == 1)
                rel = f"images/{video_id}_f{f:04d}.png"
                Image.fromarray(arr).save(out_dir / rel)
                records.append(FrameRecord(rel, label, video_id, split, cfg.family))
                if region is not None:
                    annotations.append((rel, region))
    manifest = DatasetManifest(root=out_dir, records=records)
    save_manifest(manifest, out_dir / "manifest.csv")
    with (out_dir / "annotations.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_path", "x0", "y0", "x1", "y1"])
        for rel, region in annotations:
            writer.writerow([rel, region.x0, region.y0, region.x1, region.y1])
    return manifest


def load_annotations(path: Path | str) -> dict[str, Region]:
    """Artifact rectangles keyed by frame path."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"annotations not found: {path}")
    regions: dict[str, Region] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            regions[row["frame_path"]] = Region(
                x0=int(row["x0"]), y0=int(row["y0"]), x1=int(row["x1"]), y1=int(row["y1"])
            )
    return regions


def dataset_digest(out_dir: Path | str) -> str:
    """SHA-256 over every generated file (sorted), for determinism checks."""
    out_dir = Path(out_dir)
    digest = hashlib.sha256()
    for p in sorted(out_dir.rglob("*")):
        if p.is_file():
            digest.update(str(p.relative_to(out_dir)).encode())
            digest.update(p.read_bytes())
    return digest.hexdigest()
