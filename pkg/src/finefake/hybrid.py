"""Two-branch hybrid head: concatenated branch embeddings through a
normalization layer, a wide fully connected layer, and the output layer.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field
from torch import nn

from .backbone import seeded_init_
from .errors import ShapeError


class HybridConfig(BaseModel):
    """Widths of the two branch embeddings and the classification head."""

    model_config = ConfigDict(extra="forbid")

    branch_embed_dims: tuple[int, int] = (128, 128)
    fc_width: int = Field(default=1024, gt=0)
    num_classes: int = Field(default=2, gt=0)

    @property
    def concat_dim(self) -> int:
        return sum(self.branch_embed_dims)


def concat_features(emb_a: torch.Tensor, emb_b: torch.Tensor) -> torch.Tensor:
    """Order-preserving concatenation, branch a first; an empty branch b
    degrades to single-branch mode."""
    if emb_b.numel() == 0:
        return emb_a
    if emb_a.shape[0] != emb_b.shape[0]:
        raise ShapeError(
            f"branch batch sizes differ: {emb_a.shape[0]} vs {emb_b.shape[0]}"
        )
    return torch.cat([emb_a, emb_b], dim=1)


class HybridHead(nn.Module):
    """BatchNorm -> FC(fc_width) -> ReLU -> FC(num_classes)."""

    def __init__(self, cfg: HybridConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.norm = nn.BatchNorm1d(cfg.concat_dim)
        self.fc = nn.Linear(cfg.concat_dim, cfg.fc_width)
        self.out = nn.Linear(cfg.fc_width, cfg.num_classes)
        seeded_init_(self, torch.Generator().manual_seed(seed))

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        if v.shape[1] != self.cfg.concat_dim:
            raise ShapeError(
                f"head expects width {self.cfg.concat_dim}, got {v.shape[1]}"
            )
        return self.out(F.relu(self.fc(self.norm(v))))
