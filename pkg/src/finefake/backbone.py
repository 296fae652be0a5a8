"""Multi-block feature extractor contract and a tiny reference backbone.

The pipeline only assumes a backbone yields one activation volume per
block with known channel widths and a fixed stride schedule; any CNN or
transformer satisfying that contract can be dropped in. The reference
backbone shipped here is a small convolutional pyramid so the whole
method trains in seconds on a CPU.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from .errors import ShapeError


class BackboneSpec(BaseModel):
    """Shape contract of a feature extractor: block count, per-block
    channel widths, and per-block spatial downsampling factors."""

    model_config = ConfigDict(extra="forbid")

    n_blocks: int = Field(default=4, ge=2)
    channels: list[int] = Field(default=[16, 32, 64, 128])
    strides: list[int] | None = None
    trainable: bool = True

    @model_validator(mode="after")
    def _check(self) -> "BackboneSpec":
        if self.strides is None:
            self.strides = [2] * self.n_blocks
        if len(self.channels) != self.n_blocks:
            raise ValueError(
                f"channels has {len(self.channels)} entries, expected n_blocks={self.n_blocks}"
            )
        if len(self.strides) != self.n_blocks:
            raise ValueError(
                f"strides has {len(self.strides)} entries, expected n_blocks={self.n_blocks}"
            )
        if any(c <= 0 for c in self.channels):
            raise ValueError(f"channels must be strictly positive, got {self.channels}")
        if any(s < 1 for s in self.strides):
            raise ValueError(f"strides must be >= 1, got {self.strides}")
        return self

    @property
    def total_stride(self) -> int:
        stride = 1
        for s in self.strides:
            stride *= s
        return stride


@dataclass
class FeatureMapSet:
    """Per-block activation volumes, map i shaped (B, C_i, H_i, W_i)."""

    maps: list[torch.Tensor]

    def __post_init__(self) -> None:
        if not self.maps:
            raise ShapeError("FeatureMapSet needs at least one map")
        if any(m.dim() != 4 for m in self.maps):
            raise ShapeError("every feature map must be 4-D (B, C, H, W)")
        batches = {m.shape[0] for m in self.maps}
        if len(batches) != 1:
            raise ShapeError(f"feature maps disagree on batch size: {sorted(batches)}")

    @property
    def n_blocks(self) -> int:
        return len(self.maps)

    @property
    def batch_size(self) -> int:
        return self.maps[0].shape[0]

    @property
    def channels(self) -> list[int]:
        return [m.shape[1] for m in self.maps]

    def shapes(self) -> list[tuple[int, ...]]:
        return [tuple(m.shape) for m in self.maps]

    def __iter__(self):
        return iter(self.maps)

    def __getitem__(self, i: int) -> torch.Tensor:
        return self.maps[i]


def seeded_init_(module: nn.Module, generator: torch.Generator) -> None:
    """Re-initialize conv/linear weights from a dedicated generator.

    Kaiming-normal weights, zero biases; norm layers keep their (1, 0)
    affine init. Deterministic given the generator state and independent
    of the global RNG.
    """
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight.shape[1:].numel()
            std = (2.0 / fan_in) ** 0.5
            with torch.no_grad():
                noise = torch.randn(m.weight.shape, generator=generator, dtype=torch.float64)
                m.weight.copy_((noise * std).to(m.weight.dtype))
                if m.bias is not None:
                    m.bias.zero_()


def parameter_checksum(module: nn.Module) -> str:
    """SHA-256 over all parameter bytes, in registration order."""
    digest = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(p.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def _norm(channels: int) -> nn.Module:
    # per-sample normalization keeps extraction a pure function of
    # (parameters, input); groups=8 where divisible, else layer-norm style
    groups = 8 if channels % 8 == 0 else 1
    return nn.GroupNorm(groups, channels)


class TinyBackbone(nn.Module):
    """Reference backbone: n_blocks stages of [conv3x3(stride), norm, ReLU,
    conv3x3, norm, ReLU]. All conv biases start at zero, so an all-zero
    input propagates to all-zero feature maps."""

    def __init__(self, spec: BackboneSpec, seed: int):
        super().__init__()
        self.spec = spec
        self.seed = seed
        stages = []
        in_ch = 3
        for ch, stride in zip(spec.channels, spec.strides):
            stages.append(
                nn.Sequential(
                    nn.Conv2d(in_ch, ch, 3, stride=stride, padding=1),
                    _norm(ch),
                    nn.ReLU(inplace=True),
                    nn.Conv2d(ch, ch, 3, padding=1),
                    _norm(ch),
                    nn.ReLU(inplace=True),
                )
            )
            in_ch = ch
        self.stages = nn.ModuleList(stages)
        gen = torch.Generator().manual_seed(seed)
        seeded_init_(self, gen)
        if not spec.trainable:
            for p in self.parameters():
                p.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        outputs = []
        for stage in self.stages:
            x = stage(x)
            outputs.append(x)
        return outputs


def build_reference_backbone(
    spec: BackboneSpec, seed: int, dtype: torch.dtype = torch.float32
) -> TinyBackbone:
    """Construct the reference backbone with deterministic seeded init."""
    model = TinyBackbone(spec, seed)
    return model.to(dtype)


def extract_features(backbone: TinyBackbone, images: torch.Tensor) -> FeatureMapSet:
    """Run the backbone over a (B, 3, H, W) batch.

    H and W must be divisible by the cumulative stride at every stage so
    each block halves (by default) cleanly.
    """
    if images.dim() != 4 or images.shape[1] != 3:
        raise ShapeError(f"expected (B, 3, H, W) input, got {tuple(images.shape)}")
    if images.shape[0] == 0:
        raise ShapeError("empty batch: B must be >= 1")
    spec = backbone.spec
    h, w = images.shape[2], images.shape[3]
    stride = spec.total_stride
    if h % stride != 0 or w % stride != 0:
        raise ShapeError(
            f"input {h}x{w} not divisible by cumulative stride {stride}"
        )
    return FeatureMapSet(backbone(images))
