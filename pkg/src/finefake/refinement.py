"""High-temperature refinement: temperature-scaled self-distillation
between the top-down and bottom-up classifier pairs.

The bottom-up classifier (teacher, fine detail) supervises the top-down
classifier (student, broad context) through a forward KL divergence at a
temperature that decays over epochs, so early training explores soft
targets and late training sharpens onto the label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .errors import ConfigurationError, ShapeError


class TemperatureSchedule(BaseModel):
    """Epoch-indexed temperature decay.

    The printed decay rule 0.5^(e / (4 + log2 T)) starts at 1 regardless
    of T; `multiplicative` (default) multiplies it by T so the schedule
    actually starts at T and reaches 0.0625 at epoch (4 + log2 T)^2.
    `literal` keeps the rule exactly as printed.
    """

    model_config = ConfigDict(extra="forbid")

    initial: float = Field(default=64.0)
    mode: Literal["multiplicative", "literal"] = "multiplicative"

    @field_validator("initial")
    @classmethod
    def _above_floor(cls, v: float) -> float:
        if v <= 0.0625:
            raise ValueError(
                f"initial temperature must exceed 0.0625 (decay denominator), got {v}"
            )
        return v

    @property
    def decay_epochs(self) -> float:
        """Epochs per halving: -log2(0.0625 / T) = 4 + log2 T."""
        return 4.0 + math.log2(self.initial)


def temperature_at(schedule: TemperatureSchedule, epoch: int) -> float:
    """Temperature for a given 0-based epoch; strictly decreasing in e."""
    if epoch < 0:
        raise ConfigurationError(f"epoch must be nonnegative, got {epoch}")
    decayed = 0.5 ** (epoch / schedule.decay_epochs)
    if schedule.mode == "multiplicative":
        return schedule.initial * decayed
    return decayed


@dataclass
class RefinementPair:
    """Pooled logits of one block's classifier pair, (B, K) each."""

    block_index: int
    student_logits: torch.Tensor  # top-down path (n1)
    teacher_logits: torch.Tensor  # bottom-up path (n2)

    def __post_init__(self) -> None:
        if self.student_logits.shape != self.teacher_logits.shape:
            raise ShapeError(
                f"refinement pair shapes differ: {tuple(self.student_logits.shape)} "
                f"vs {tuple(self.teacher_logits.shape)}"
            )


def refinement_loss(
    pair: RefinementPair, temperature: float, detach_teacher: bool = True
) -> torch.Tensor:
    """Forward KL from the teacher distribution to the student at the
    given temperature, mean over the batch.

    With the default detachment the gradient reaches the student logits
    only; 0*log(0/..) counts as 0.
    """
    if temperature <= 0:
        raise ConfigurationError(f"temperature must be positive, got {temperature}")
    teacher = pair.teacher_logits.detach() if detach_teacher else pair.teacher_logits
    log_p_student = F.log_softmax(pair.student_logits / temperature, dim=-1)
    log_p_teacher = F.log_softmax(teacher / temperature, dim=-1)
    p_teacher = log_p_teacher.exp()
    kl = (p_teacher * (log_p_teacher - log_p_student)).sum(dim=-1)
    return kl.mean()


class TotalLossWeights(BaseModel):
    """Weight of the refinement term in the total objective."""

    model_config = ConfigDict(extra="forbid")

    refinement: float = Field(default=1.0, ge=0)


def total_loss(
    loss_bs: torch.Tensor | float,
    loss_r: torch.Tensor | float,
    weights: TotalLossWeights,
) -> torch.Tensor:
    """loss_bs + lambda_r * loss_r.

    Assumes finite nonnegative components (the KL term may carry float
    noise of either sign near zero); callers guard divergence.
    """
    return torch.as_tensor(loss_bs) + weights.refinement * torch.as_tensor(loss_r)
