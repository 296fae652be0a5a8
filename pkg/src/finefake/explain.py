"""Gradient-weighted class activation maps over the fused pyramids.

The CAM differentiates the model's decision logit for a target class
with respect to one fused top-down feature map, weights channels by the
spatial mean of those gradients, rectifies the weighted sum, upsamples
to the input size, and min-max normalizes. A constant raw CAM yields the
all-zero heatmap rather than dividing by zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib
import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .data import Region
from .detector import FineGrainedDetector, HybridDetector
from .errors import ConfigurationError, DataError


@dataclass
class Heatmap:
    values: np.ndarray  # (H, W) in [0, 1]
    source_block: int
    target_class: int


def grad_cam(
    model: FineGrainedDetector | HybridDetector,
    image: torch.Tensor,
    target_class: int = 1,
    block_index: int = -1,
    bs: bool = True,
    refinement: bool = True,
) -> Heatmap:
    """Heatmap of the decision logit for `target_class` over one image.

    `image` is (3, H, W) or (1, 3, H, W); the CAM comes from the last
    fused top-down block by default (branch a of a hybrid model).
    """
    if image.dim() == 3:
        image = image.unsqueeze(0)
    if image.shape[0] != 1:
        raise ConfigurationError("grad_cam works on a single image")
    dtype = next(model.parameters()).dtype
    image = image.to(dtype)
    was_training = model.training
    model.eval()
    try:
        output = model(image, bs=bs, refinement=refinement)
        branch = output.branch_a if isinstance(model, HybridDetector) else output
        n = branch.td.n_blocks
        if not -n <= block_index < n:
            raise ConfigurationError(f"block index {block_index} out of range for {n} blocks")
        fmap = branch.td[block_index]
        logits = output.decision_logits
        if not 0 <= target_class < logits.shape[1]:
            raise ConfigurationError(f"target class {target_class} out of range")
        (grad,) = torch.autograd.grad(logits[0, target_class], fmap)
    finally:
        model.train(was_training)
    weights = grad.mean(dim=(2, 3), keepdim=True)
    cam = F.relu((weights * fmap.detach()).sum(dim=1, keepdim=True))
    cam = F.interpolate(cam, size=image.shape[2:], mode="bilinear", align_corners=False)
    values = cam[0, 0].double().cpu().numpy()
    spread = values.max() - values.min()
    if spread > 0:
        values = (values - values.min()) / spread
    else:
        values = np.zeros_like(values)
    return Heatmap(
        values=values,
        source_block=block_index % n,
        target_class=target_class,
    )


def region_mass_fraction(heatmap: Heatmap, region: Region) -> float:
    """Share of heatmap mass inside the annotated rectangle; 0 for an
    all-zero map."""
    total = float(heatmap.values.sum())
    if total == 0.0:
        return 0.0
    mask = region.mask(heatmap.values.shape[0])
    return float(heatmap.values[mask].sum() / total)


def overlay(
    heatmap: Heatmap, image: np.ndarray, out_path: Path | str, alpha: float = 0.5
) -> Path:
    """Alpha-blend the colormapped heatmap over an (H, W, 3) uint8 image
    and write it as a PNG."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha must be in [0, 1], got {alpha}")
    if image.shape[:2] != heatmap.values.shape:
        raise DataError(
            f"image {image.shape[:2]} does not match heatmap {heatmap.values.shape}"
        )
    cmap = matplotlib.colormaps["jet"]
    colored = (cmap(heatmap.values)[..., :3] * 255.0).astype(np.float64)
    base = image.astype(np.float64)
    blended = ((1.0 - alpha) * base + alpha * colored).round().clip(0, 255).astype(np.uint8)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    try:
        Image.fromarray(blended).save(out_path)
    except OSError as exc:
        raise DataError(f"cannot write overlay to {out_path}: {exc}") from exc
    return out_path
