"""Background suppression: per-block classification maps, max-score
foreground selection, a graph-convolution combiner over the selected
tokens, and the merged/dropped/layer losses.

Each fused block gets one linear classifier that is applied both
per-location (to produce the classification map the selector keys on)
and on the spatially pooled feature (for the layer loss), so both losses
share the same weights. Locations whose maximum softmax score lands in
the per-block top-D are the foreground; everything else is "dropped" and
its logits are pushed toward tanh -1.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, field_validator
from torch import nn

from .backbone import FeatureMapSet, seeded_init_
from .errors import ConfigurationError, ProtocolError, SelectionError, ShapeError


class SelectorConfig(BaseModel):
    """Per-block foreground selection counts, largest first: earlier
    blocks keep more locations so they cannot starve later ones."""

    model_config = ConfigDict(extra="forbid")

    top_d: list[int] = Field(default=[256, 128, 64, 32])

    @field_validator("top_d")
    @classmethod
    def _decreasing(cls, v: list[int]) -> list[int]:
        if any(d < 1 for d in v):
            raise ValueError(f"selection counts must be >= 1, got {v}")
        if any(a <= b for a, b in zip(v, v[1:])):
            raise ValueError(f"selection counts must strictly decrease, got {v}")
        return v


class BsLossWeights(BaseModel):
    """Weights of the merged/dropped/layer terms in the BS objective."""

    model_config = ConfigDict(extra="forbid")

    merged: float = Field(default=1.0, ge=0)
    dropped: float = Field(default=5.0, ge=0)
    layer: float = Field(default=0.3, ge=0)


class BlockClassifiers(nn.Module):
    """One linear classifier per fused block, shared between the
    per-location classification maps and the pooled layer loss."""

    def __init__(self, n_blocks: int, in_dim: int, num_classes: int, seed: int = 0):
        super().__init__()
        self.in_dim = in_dim
        self.num_classes = num_classes
        self.heads = nn.ModuleList(
            nn.Linear(in_dim, num_classes) for _ in range(n_blocks)
        )
        seeded_init_(self, torch.Generator().manual_seed(seed))

    def __len__(self) -> int:
        return len(self.heads)

    def classify_map(self, i: int, fmap: torch.Tensor) -> torch.Tensor:
        """Apply classifier i at every spatial location: (B,C,H,W) -> (B,K,H,W)."""
        if fmap.shape[1] != self.in_dim:
            raise ShapeError(
                f"classifier expects width {self.in_dim}, feature map has {fmap.shape[1]}"
            )
        logits = self.heads[i](fmap.permute(0, 2, 3, 1))
        return logits.permute(0, 3, 1, 2)

    def classify_pooled(self, i: int, fmap: torch.Tensor) -> torch.Tensor:
        """Classifier i on the spatially averaged feature: (B,C,H,W) -> (B,K)."""
        if fmap.shape[1] != self.in_dim:
            raise ShapeError(
                f"classifier expects width {self.in_dim}, feature map has {fmap.shape[1]}"
            )
        return self.heads[i](fmap.mean(dim=(2, 3)))


def classify_blocks(fused: FeatureMapSet, classifiers: BlockClassifiers) -> list[torch.Tensor]:
    """Per-location class logits for every fused block."""
    if fused.n_blocks != len(classifiers):
        raise ShapeError(
            f"{len(classifiers)} classifiers for {fused.n_blocks} fused blocks"
        )
    return [classifiers.classify_map(i, fmap) for i, fmap in enumerate(fused)]


def max_score_map(cmap: torch.Tensor) -> torch.Tensor:
    """Per-location maximum softmax probability: (B,K,H,W) -> (B,H,W)."""
    return F.softmax(cmap, dim=1).max(dim=1).values


@dataclass
class BlockSelection:
    """Foreground/background split of one block's locations."""

    block_index: int
    selected_indices: torch.Tensor  # (B, D') flattened spatial indices
    selected_logits: torch.Tensor  # (B, D', K)
    dropped_indices: torch.Tensor  # (B, HW - D')
    dropped_logits: torch.Tensor  # (B, HW - D', K)


def select_top_d(
    cmap: torch.Tensor, scores: torch.Tensor, top_d: int, block_index: int = 0
) -> BlockSelection:
    """Split locations into the top-D foreground and the dropped rest.

    Ordering is by descending score with ties broken by ascending
    flattened spatial index; D is clamped to the number of locations.
    """
    if top_d <= 0:
        raise ConfigurationError(f"selection count must be >= 1, got {top_d}")
    b, k, h, w = cmap.shape
    n_loc = h * w
    if scores.shape != (b, h, w):
        raise ShapeError(f"score map {tuple(scores.shape)} does not match {(b, h, w)}")
    if top_d > n_loc:
        warnings.warn(
            f"block {block_index}: top_d={top_d} exceeds {n_loc} locations, selecting all",
            stacklevel=2,
        )
        top_d = n_loc
    flat_scores = scores.reshape(b, n_loc)
    flat_logits = cmap.reshape(b, k, n_loc).permute(0, 2, 1)  # (B, HW, K)
    # stable argsort on negated scores keeps ascending index among ties
    order = torch.argsort(-flat_scores, dim=1, stable=True)
    sel_idx, _ = order[:, :top_d].sort(dim=1)
    drop_idx, _ = order[:, top_d:].sort(dim=1)
    gather = lambda idx: flat_logits.gather(
        1, idx.unsqueeze(-1).expand(b, idx.shape[1], k)
    )
    return BlockSelection(
        block_index=block_index,
        selected_indices=sel_idx,
        selected_logits=gather(sel_idx),
        dropped_indices=drop_idx,
        dropped_logits=gather(drop_idx),
    )


def gather_tokens(fmap: torch.Tensor, indices: torch.Tensor) -> torch.Tensor:
    """Pick feature vectors at flattened spatial indices: (B,C,H,W) -> (B,D,C)."""
    b, c = fmap.shape[:2]
    flat = fmap.reshape(b, c, -1).permute(0, 2, 1)
    return flat.gather(1, indices.unsqueeze(-1).expand(b, indices.shape[1], c))


@dataclass
class SelectionOutcome:
    """Selection across all blocks plus the combiner outputs."""

    blocks: list[BlockSelection]
    tokens: torch.Tensor  # (B, T_tot, C) selected feature vectors, all blocks
    merged_logits: torch.Tensor | None = None  # (B, K)
    embedding: torch.Tensor | None = None  # (B, E)

    @property
    def dropped_logits(self) -> list[torch.Tensor]:
        return [blk.dropped_logits for blk in self.blocks]


class GraphCombiner(nn.Module):
    """Fully connected graph over the selected tokens: row-softmax
    dot-product adjacency, one residual graph-conv layer, mean pooling,
    then a linear projection to the pooled embedding and a linear head."""

    def __init__(self, token_dim: int, embed_dim: int = 128, num_classes: int = 2, seed: int = 0):
        super().__init__()
        self.token_dim = token_dim
        self.graph_weight = nn.Linear(token_dim, token_dim, bias=False)
        self.project = nn.Linear(token_dim, embed_dim)
        self.head = nn.Linear(embed_dim, num_classes)
        seeded_init_(self, torch.Generator().manual_seed(seed))

    def forward(self, tokens: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, T, C) tokens -> (merged logits (B, K), pooled embedding (B, E))."""
        if tokens.dim() != 3 or tokens.shape[1] == 0:
            raise SelectionError("combiner needs at least one selected token")
        if tokens.shape[2] != self.token_dim:
            raise ShapeError(
                f"combiner expects token width {self.token_dim}, got {tokens.shape[2]}"
            )
        adjacency = F.softmax(tokens @ tokens.transpose(1, 2), dim=-1)
        mixed = F.relu(self.graph_weight(adjacency @ tokens)) + tokens
        embedding = self.project(mixed.mean(dim=1))
        return self.head(embedding), embedding


def merged_loss(merged_logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Cross-entropy of the combiner prediction, mean over the batch."""
    if merged_logits.shape[0] != labels.shape[0]:
        raise ShapeError(
            f"{merged_logits.shape[0]} predictions for {labels.shape[0]} labels"
        )
    return F.cross_entropy(merged_logits, labels)


def dropped_loss(
    dropped: list[torch.Tensor] | torch.Tensor, reduction: str = "mean"
) -> torch.Tensor:
    """Push dropped-location logits toward tanh -1.

    `mean` (default) averages the per-class-summed penalty over batch and
    dropped locations pooled across blocks, keeping the magnitude
    comparable across block sizes; `sum` is the literal class-sum-only
    form with no normalization.
    """
    if isinstance(dropped, torch.Tensor):
        dropped = [dropped]
    nonempty = [d for d in dropped if d.shape[1] > 0]
    if not nonempty:
        warnings.warn("no dropped locations (all selected); dropped loss is 0", stacklevel=2)
        ref = dropped[0] if dropped else torch.zeros(())
        return torch.zeros((), dtype=ref.dtype)
    flat = torch.cat(nonempty, dim=1)  # (B, N_tot, K)
    penalty = (torch.tanh(flat) + 1.0) ** 2
    per_location = penalty.sum(dim=-1)
    if reduction == "mean":
        return per_location.mean()
    if reduction == "sum":
        return per_location.sum()
    raise ConfigurationError(f"unknown dropped-loss reduction {reduction!r}")


def layer_loss(
    fused: FeatureMapSet, classifiers: BlockClassifiers, labels: torch.Tensor
) -> torch.Tensor:
    """Sum over blocks of the pooled-classifier cross-entropy (batch mean),
    with the same weights the classification maps use."""
    if fused.n_blocks != len(classifiers):
        raise ShapeError(
            f"{len(classifiers)} classifiers for {fused.n_blocks} fused blocks"
        )
    total = None
    for i, fmap in enumerate(fused):
        term = F.cross_entropy(classifiers.classify_pooled(i, fmap), labels)
        total = term if total is None else total + term
    return total


def scalar_value(v: torch.Tensor | float) -> float:
    return float(v.detach() if isinstance(v, torch.Tensor) else v)


def bs_total_loss(
    loss_m: torch.Tensor | float,
    loss_d: torch.Tensor | float,
    loss_l: torch.Tensor | float,
    weights: BsLossWeights,
) -> torch.Tensor:
    """Weighted sum of the merged, dropped, and layer losses."""
    parts = (loss_m, loss_d, loss_l)
    for name, v in zip(("merged", "dropped", "layer"), parts):
        value = scalar_value(v)
        if not math.isfinite(value) or value < 0:
            raise ProtocolError(f"{name} loss must be finite and nonnegative, got {value}")
    return (
        weights.merged * torch.as_tensor(loss_m)
        + weights.dropped * torch.as_tensor(loss_d)
        + weights.layer * torch.as_tensor(loss_l)
    )
