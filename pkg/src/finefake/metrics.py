"""Frame-level ROC metrics: AUC, partial AUC at a capped FPR, and EER.

AUC is the pairwise concordance probability with ties counted 0.5
(Mann-Whitney); pAUC is the trapezoidal area under the empirical ROC
restricted to FPR <= max_fpr, normalized by max_fpr; EER linearly
interpolates the FPR = FNR crossing on the ROC polyline. Everything is
computed in double precision from first principles so the test oracles
can check it exactly.
"""

from __future__ import annotations

import numpy as np
from pydantic import BaseModel, ConfigDict

from .errors import ConfigurationError, ProtocolError


class MetricsReport(BaseModel):
    """Frame-level evaluation summary."""

    model_config = ConfigDict(extra="forbid")

    auc: float
    pauc: float
    pauc_max_fpr: float = 0.1
    eer: float
    n_real: int
    n_fake: int


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ProtocolError(f"{s.size} scores for {y.size} labels")
    if s.size < 2:
        raise ProtocolError("need at least 2 scored frames")
    if not np.isin(y, (0, 1)).all():
        raise ProtocolError("labels must be 0 (real) or 1 (fake)")
    if not (np.any(y == 0) and np.any(y == 1)):
        raise ProtocolError("both classes must be present for ROC metrics")
    return s, y.astype(np.int64)


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """Empirical ROC vertices from (0,0) to (1,1), one per distinct score.

    Tied scores collapse into a single vertex, which makes the trapezoid
    over the polyline match the tie-0.5 pairwise AUC exactly.
    """
    s, y = _validate(scores, labels)
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    distinct = np.where(np.diff(s_sorted))[0]
    boundaries = np.r_[distinct, s.size - 1]
    tp = np.cumsum(y_sorted)[boundaries]
    fp = np.cumsum(1 - y_sorted)[boundaries]
    tpr = np.r_[0.0, tp / tp[-1]]
    fpr = np.r_[0.0, fp / fp[-1]]
    return fpr, tpr


def roc_auc(scores, labels) -> float:
    """Pairwise concordance AUC, ties counted 0.5 (rank form)."""
    s, y = _validate(scores, labels)
    order = np.argsort(s, kind="stable")
    ranks = np.empty(s.size, dtype=np.float64)
    ranks[order] = np.arange(1, s.size + 1)
    # average ranks within tie groups
    sorted_s = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + 1 + j + 1)
        i = j + 1
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    pos_rank_sum = ranks[y == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def partial_auc(scores, labels, max_fpr: float = 0.1) -> float:
    """Trapezoidal ROC area over FPR in [0, max_fpr], scaled to [0, 1]."""
    if not 0.0 < max_fpr <= 1.0:
        raise ConfigurationError(f"max_fpr must be in (0, 1], got {max_fpr}")
    fpr, tpr = roc_curve(scores, labels)
    if max_fpr < 1.0:
        stop = int(np.searchsorted(fpr, max_fpr, side="right"))
        tpr_at = np.interp(max_fpr, fpr, tpr)
        fpr = np.r_[fpr[:stop], max_fpr]
        tpr = np.r_[tpr[:stop], tpr_at]
    area = np.trapezoid(tpr, fpr)
    return float(area / max_fpr)


def eer(scores, labels) -> float:
    """FPR at the ROC point where FPR = FNR, linearly interpolated."""
    fpr, tpr = roc_curve(scores, labels)
    # diff = FPR - FNR rises monotonically from -1 to +1 along the curve
    diff = fpr - (1.0 - tpr)
    idx = int(np.searchsorted(diff, 0.0, side="left"))
    if idx == 0:
        return float(fpr[0])
    f1, f2 = fpr[idx - 1], fpr[idx]
    t1, t2 = tpr[idx - 1], tpr[idx]
    denom = (f2 - f1) + (t2 - t1)
    alpha = (1.0 - t1 - f1) / denom
    return float(f1 + alpha * (f2 - f1))


def score_report(scores, labels, max_fpr: float = 0.1) -> MetricsReport:
    """All three metrics plus class counts."""
    s, y = _validate(scores, labels)
    return MetricsReport(
        auc=roc_auc(s, y),
        pauc=partial_auc(s, y, max_fpr),
        pauc_max_fpr=max_fpr,
        eer=eer(s, y),
        n_real=int((y == 0).sum()),
        n_fake=int((y == 1).sum()),
    )
