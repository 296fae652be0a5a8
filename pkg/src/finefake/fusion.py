"""Top-down and bottom-up multi-scale feature fusion (path-aggregation neck).

Every backbone block is laterally projected to a common channel width;
the top-down pass then accumulates coarse context downward via nearest
upsampling, the bottom-up pass accumulates fine detail upward via
stride-2 convolutions. Each path applies one 3x3 smoothing conv per
block. The incoming cross-path term always goes through its own conv, so
zeroing those weights makes either path an identity over the laterals.
"""

from __future__ import annotations

from typing import Literal

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field
from torch import nn

from .backbone import FeatureMapSet, seeded_init_
from .errors import ShapeError


class FusionConfig(BaseModel):
    """Hyperparameters of the path-aggregation neck."""

    model_config = ConfigDict(extra="forbid")

    common_dim: int = Field(default=64, gt=0)
    merge_op: Literal["add"] = "add"
    upsample: Literal["nearest_up"] = "nearest_up"
    downsample: Literal["stride2_down"] = "stride2_down"


class TopDownFusion(nn.Module):
    """map_i = smooth_i( project_i(fs_i) + cross_i(upsample(out_{i+1})) );
    the top block has no incoming term."""

    def __init__(self, in_channels: list[int], cfg: FusionConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        d = cfg.common_dim
        n = len(in_channels)
        self.lateral = nn.ModuleList(nn.Conv2d(c, d, 1) for c in in_channels)
        # cross[i] feeds block i from block i+1; none for the top block
        self.cross = nn.ModuleList(nn.Conv2d(d, d, 1) for _ in range(n - 1))
        self.smooth = nn.ModuleList(nn.Conv2d(d, d, 3, padding=1) for _ in range(n))
        seeded_init_(self, torch.Generator().manual_seed(seed))

    def forward(self, features: FeatureMapSet) -> FeatureMapSet:
        n = features.n_blocks
        if n != len(self.smooth):
            raise ShapeError(f"fusion built for {len(self.smooth)} blocks, got {n}")
        outputs: list[torch.Tensor | None] = [None] * n
        carry = None
        for i in range(n - 1, -1, -1):
            x = self.lateral[i](features[i])
            if carry is not None:
                up = F.interpolate(carry, size=x.shape[2:], mode="nearest")
                x = x + self.cross[i](up)
            carry = self.smooth[i](x)
            outputs[i] = carry
        return FeatureMapSet(outputs)  # type: ignore[arg-type]


class BottomUpFusion(nn.Module):
    """Mirror of the top-down path: accumulation runs from block 1 upward
    and the cross-path term is a strided 3x3 conv."""

    def __init__(
        self,
        in_channels: list[int],
        cfg: FusionConfig,
        down_ratios: list[int] | None = None,
        seed: int = 0,
    ):
        super().__init__()
        self.cfg = cfg
        d = cfg.common_dim
        n = len(in_channels)
        if down_ratios is None:
            down_ratios = [2] * (n - 1)
        if len(down_ratios) != n - 1:
            raise ShapeError(f"need {n - 1} down ratios, got {len(down_ratios)}")
        self.lateral = nn.ModuleList(nn.Conv2d(c, d, 1) for c in in_channels)
        # cross[i] feeds block i+1 from block i
        self.cross = nn.ModuleList(
            nn.Conv2d(d, d, 3, stride=r, padding=1) for r in down_ratios
        )
        self.smooth = nn.ModuleList(nn.Conv2d(d, d, 3, padding=1) for _ in range(n))
        seeded_init_(self, torch.Generator().manual_seed(seed))

    def forward(self, features: FeatureMapSet) -> FeatureMapSet:
        n = features.n_blocks
        if n != len(self.smooth):
            raise ShapeError(f"fusion built for {len(self.smooth)} blocks, got {n}")
        outputs: list[torch.Tensor] = []
        carry = None
        for i in range(n):
            x = self.lateral[i](features[i])
            if carry is not None:
                down = self.cross[i - 1](carry)
                if down.shape[2:] != x.shape[2:]:
                    raise ShapeError(
                        f"downsampled block {i - 1} is {tuple(down.shape[2:])}, "
                        f"block {i} is {tuple(x.shape[2:])}"
                    )
                x = x + down
            carry = self.smooth[i](x)
            outputs.append(carry)
        return FeatureMapSet(outputs)
