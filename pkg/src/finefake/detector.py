"""Full detector assembly: backbone -> path-aggregation neck -> block
classifiers on both paths -> foreground selection and graph combiner on
the top-down pyramid -> refinement pairs across paths.

Selection and the merged/dropped losses attach to the top-down pyramid;
the bottom-up classifiers act as the refinement teachers and are
supervised through the layer loss, which covers the pooled classifiers
of both paths. With background suppression toggled off the decision
variable degrades to the final-block pooled classifier and the training
signal to its plain cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from .backbone import BackboneSpec, FeatureMapSet, TinyBackbone, extract_features
from .errors import ConfigurationError
from .fusion import BottomUpFusion, FusionConfig, TopDownFusion
from .hybrid import HybridConfig, HybridHead, concat_features
from .refinement import RefinementPair, refinement_loss
from .suppression import (
    BlockClassifiers,
    GraphCombiner,
    SelectionOutcome,
    classify_blocks,
    dropped_loss,
    gather_tokens,
    layer_loss,
    max_score_map,
    merged_loss,
    select_top_d,
    SelectorConfig,
)


class ModelConfig(BaseModel):
    """Architecture of a single- or two-branch detector."""

    model_config = ConfigDict(extra="forbid")

    backbone: BackboneSpec = BackboneSpec()
    backbone_b: BackboneSpec | None = None  # second branch (hybrid); defaults to `backbone`
    fusion: FusionConfig = FusionConfig()
    selector: SelectorConfig = SelectorConfig()
    embed_dim: int = Field(default=128, gt=0)
    num_classes: int = Field(default=2, ge=2)
    hybrid: bool = False
    head_fc_width: int = Field(default=1024, gt=0)
    freeze_branches: bool = False
    detach_teacher: bool = True
    dropped_reduction: str = "mean"

    @model_validator(mode="after")
    def _check(self) -> "ModelConfig":
        if len(self.selector.top_d) != self.backbone.n_blocks:
            raise ValueError(
                f"{len(self.selector.top_d)} selection counts for "
                f"{self.backbone.n_blocks} backbone blocks"
            )
        if self.backbone_b is not None and self.backbone_b.n_blocks != self.backbone.n_blocks:
            raise ValueError("hybrid branches must have the same block count")
        return self


@dataclass
class DetectorOutput:
    """Everything one forward pass produces, kept in the autograd graph."""

    features: FeatureMapSet
    td: FeatureMapSet
    bu: FeatureMapSet
    td_class_maps: list[torch.Tensor]
    bu_class_maps: list[torch.Tensor]
    student_logits: list[torch.Tensor]  # pooled top-down logits per block
    teacher_logits: list[torch.Tensor]  # pooled bottom-up logits per block
    selection: SelectionOutcome | None
    embedding: torch.Tensor
    decision_logits: torch.Tensor


class FineGrainedDetector(nn.Module):
    """One branch: tiny backbone, PA neck, block classifiers and combiner."""

    def __init__(
        self,
        backbone_spec: BackboneSpec,
        fusion_cfg: FusionConfig,
        selector_cfg: SelectorConfig,
        embed_dim: int = 128,
        num_classes: int = 2,
        seed: int = 0,
    ):
        super().__init__()
        n = backbone_spec.n_blocks
        d = fusion_cfg.common_dim
        self.selector_cfg = selector_cfg
        self.num_classes = num_classes
        self.embed_dim = embed_dim
        self.backbone = TinyBackbone(backbone_spec, seed)
        self.top_down = TopDownFusion(backbone_spec.channels, fusion_cfg, seed + 1)
        self.bottom_up = BottomUpFusion(
            [d] * n, fusion_cfg, down_ratios=backbone_spec.strides[1:], seed=seed + 2
        )
        self.td_classifiers = BlockClassifiers(n, d, num_classes, seed + 3)
        self.bu_classifiers = BlockClassifiers(n, d, num_classes, seed + 4)
        self.combiner = GraphCombiner(d, embed_dim, num_classes, seed + 5)

    def forward(
        self, images: torch.Tensor, bs: bool = True, refinement: bool = True
    ) -> DetectorOutput:
        features = extract_features(self.backbone, images)
        td = self.top_down(features)
        bu = self.bottom_up(td)
        td_maps = classify_blocks(td, self.td_classifiers)
        bu_maps = classify_blocks(bu, self.bu_classifiers)
        # pooling the map equals classifying the pooled feature (affine)
        student = [m.mean(dim=(2, 3)) for m in td_maps]
        teacher = [m.mean(dim=(2, 3)) for m in bu_maps]

        selection = None
        if bs:
            blocks = []
            tokens = []
            for i, cmap in enumerate(td_maps):
                sel = select_top_d(
                    cmap, max_score_map(cmap), self.selector_cfg.top_d[i], block_index=i
                )
                blocks.append(sel)
                tokens.append(gather_tokens(td[i], sel.selected_indices))
            all_tokens = torch.cat(tokens, dim=1)
            merged, embedding = self.combiner(all_tokens)
            selection = SelectionOutcome(
                blocks=blocks, tokens=all_tokens, merged_logits=merged, embedding=embedding
            )
            decision = merged
        else:
            embedding = td[-1].mean(dim=(2, 3))
            decision = student[-1]

        return DetectorOutput(
            features=features,
            td=td,
            bu=bu,
            td_class_maps=td_maps,
            bu_class_maps=bu_maps,
            student_logits=student,
            teacher_logits=teacher,
            selection=selection,
            embedding=embedding,
            decision_logits=decision,
        )

    def loss_components(
        self,
        output: DetectorOutput,
        labels: torch.Tensor,
        bs: bool = True,
        refinement: bool = True,
        temperature: float = 64.0,
        dropped_reduction: str = "mean",
        detach_teacher: bool = True,
    ) -> dict[str, torch.Tensor]:
        """Raw merged/dropped/layer/refinement terms for one batch."""
        zero = torch.zeros((), dtype=output.decision_logits.dtype)
        if bs:
            assert output.selection is not None
            comp_m = merged_loss(output.selection.merged_logits, labels)
            comp_d = dropped_loss(output.selection.dropped_logits, dropped_reduction)
            comp_l = layer_loss(output.td, self.td_classifiers, labels) + layer_loss(
                output.bu, self.bu_classifiers, labels
            )
        else:
            comp_m = F.cross_entropy(output.student_logits[-1], labels)
            comp_d = zero
            # keep the teacher supervised when it still has a student
            comp_l = (
                F.cross_entropy(output.teacher_logits[-1], labels) if refinement else zero
            )
        if refinement:
            pair_losses = [
                refinement_loss(
                    RefinementPair(i, s, t), temperature, detach_teacher=detach_teacher
                )
                for i, (s, t) in enumerate(zip(output.student_logits, output.teacher_logits))
            ]
            comp_r = torch.stack(pair_losses).mean()
        else:
            comp_r = zero
        return {"merged": comp_m, "dropped": comp_d, "layer": comp_l, "refinement": comp_r}


@dataclass
class HybridOutput:
    branch_a: DetectorOutput
    branch_b: DetectorOutput
    head_logits: torch.Tensor
    decision_logits: torch.Tensor


class HybridDetector(nn.Module):
    """Two branches with concatenated embeddings and a shared head.

    The head width depends on whether background suppression is active
    (combiner embedding vs pooled fused map), so the toggle is fixed at
    construction time.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0, bs_enabled: bool = True):
        super().__init__()
        self.cfg = cfg
        self.bs_enabled = bs_enabled
        spec_b = cfg.backbone_b if cfg.backbone_b is not None else cfg.backbone
        self.branch_a = FineGrainedDetector(
            cfg.backbone, cfg.fusion, cfg.selector, cfg.embed_dim, cfg.num_classes, seed
        )
        self.branch_b = FineGrainedDetector(
            spec_b, cfg.fusion, cfg.selector, cfg.embed_dim, cfg.num_classes, seed + 1000
        )
        branch_dim = cfg.embed_dim if bs_enabled else cfg.fusion.common_dim
        self.head = HybridHead(
            HybridConfig(
                branch_embed_dims=(branch_dim, branch_dim),
                fc_width=cfg.head_fc_width,
                num_classes=cfg.num_classes,
            ),
            seed + 2000,
        )
        if cfg.freeze_branches:
            for p in self.branch_a.parameters():
                p.requires_grad_(False)
            for p in self.branch_b.parameters():
                p.requires_grad_(False)

    def forward(
        self, images: torch.Tensor, bs: bool = True, refinement: bool = True
    ) -> HybridOutput:
        if bs != self.bs_enabled:
            raise ConfigurationError(
                f"hybrid head was built with bs={self.bs_enabled}, cannot run bs={bs}"
            )
        out_a = self.branch_a(images, bs=bs, refinement=refinement)
        out_b = self.branch_b(images, bs=bs, refinement=refinement)
        head_logits = self.head(concat_features(out_a.embedding, out_b.embedding))
        return HybridOutput(
            branch_a=out_a, branch_b=out_b, head_logits=head_logits, decision_logits=head_logits
        )

    def loss_components(
        self,
        output: HybridOutput,
        labels: torch.Tensor,
        bs: bool = True,
        refinement: bool = True,
        temperature: float = 64.0,
        dropped_reduction: str = "mean",
        detach_teacher: bool = True,
    ) -> dict[str, torch.Tensor]:
        """Branch terms summed, with the head cross-entropy folded into the
        merged term (the head is the hybrid model's decision variable)."""
        kw = dict(
            bs=bs,
            refinement=refinement,
            temperature=temperature,
            dropped_reduction=dropped_reduction,
            detach_teacher=detach_teacher,
        )
        comp_a = self.branch_a.loss_components(output.branch_a, labels, **kw)
        comp_b = self.branch_b.loss_components(output.branch_b, labels, **kw)
        merged = F.cross_entropy(output.head_logits, labels)
        if not self.cfg.freeze_branches:
            merged = merged + comp_a["merged"] + comp_b["merged"]
        return {
            "merged": merged,
            "dropped": comp_a["dropped"] + comp_b["dropped"],
            "layer": comp_a["layer"] + comp_b["layer"],
            "refinement": (comp_a["refinement"] + comp_b["refinement"]) / 2,
        }


def build_model(
    cfg: ModelConfig, seed: int, bs_enabled: bool = True
) -> FineGrainedDetector | HybridDetector:
    """Instantiate the configured detector with deterministic seeded init."""
    if cfg.hybrid:
        return HybridDetector(cfg, seed=seed, bs_enabled=bs_enabled)
    return FineGrainedDetector(
        cfg.backbone, cfg.fusion, cfg.selector, cfg.embed_dim, cfg.num_classes, seed=seed
    )
