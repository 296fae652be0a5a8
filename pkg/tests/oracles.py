"""Independent reference implementations used as test oracles.

Everything here is deliberately written with plain math/list loops (or
tiny numpy where unavoidable), never by calling the code under test, so
each check runs along a second route.
"""

from __future__ import annotations

import math


def softmax_list(logits: list[float]) -> list[float]:
    peak = max(logits)
    exps = [math.exp(v - peak) for v in logits]
    total = sum(exps)
    return [e / total for e in exps]


def cross_entropy_scalar(logits: list[float], label: int) -> float:
    return -math.log(softmax_list(logits)[label])


def cross_entropy_batch(logit_rows: list[list[float]], labels: list[int]) -> float:
    return sum(cross_entropy_scalar(r, y) for r, y in zip(logit_rows, labels)) / len(labels)


def dropped_penalty_mean(rows: list[list[float]]) -> float:
    """Mean over rows (batch x locations flattened) of the class-summed
    tanh target penalty."""
    total = 0.0
    for row in rows:
        total += sum((math.tanh(v) + 1.0) ** 2 for v in row)
    return total / len(rows)


def dropped_penalty_sum(rows: list[list[float]]) -> float:
    return sum(sum((math.tanh(v) + 1.0) ** 2 for v in row) for row in rows)


def layer_loss_scalar(
    pooled_features: list[list[list[float]]],
    weights: list[list[list[float]]],
    biases: list[list[float]],
    labels: list[int],
) -> float:
    """Sum over blocks of batch-mean CE of W_i x + b_i on pooled features.

    pooled_features[block][sample][channel]; weights[block][class][channel].
    """
    total = 0.0
    for feats, w, b in zip(pooled_features, weights, biases):
        rows = []
        for x in feats:
            rows.append([sum(wc * xc for wc, xc in zip(w_row, x)) + bc for w_row, bc in zip(w, b)])
        total += cross_entropy_batch(rows, labels)
    return total


def kl_scalar(p: list[float], q: list[float]) -> float:
    """KL(p || q) with 0*log(0/x) = 0."""
    total = 0.0
    for pi, qi in zip(p, q):
        if pi > 0.0:
            total += pi * math.log(pi / qi)
    return total


def refinement_kl_batch(
    student_rows: list[list[float]], teacher_rows: list[list[float]], temperature: float
) -> float:
    total = 0.0
    for s, t in zip(student_rows, teacher_rows):
        p_teacher = softmax_list([v / temperature for v in t])
        p_student = softmax_list([v / temperature for v in s])
        total += kl_scalar(p_teacher, p_student)
    return total / len(student_rows)


def pairwise_auc(scores: list[float], labels: list[int]) -> float:
    """Exhaustive pairwise concordance, ties counted 0.5."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                total += 1.0
            elif sp == sn:
                total += 0.5
    return total / (len(pos) * len(neg))


def roc_points_bruteforce(scores: list[float], labels: list[int]) -> list[tuple[float, float]]:
    """(FPR, TPR) vertices from confusion counts at every distinct score,
    predictions positive when score >= threshold, plus the (0, 0) origin."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    points = [(0.0, 0.0)]
    for threshold in sorted(set(scores), reverse=True):
        tpr = sum(1 for s in pos if s >= threshold) / len(pos)
        fpr = sum(1 for s in neg if s >= threshold) / len(neg)
        points.append((fpr, tpr))
    return points


def pauc_trapezoid(scores: list[float], labels: list[int], max_fpr: float) -> float:
    """Trapezoid over the brute-force ROC, linearly interpolated at the
    max_fpr boundary, normalized by max_fpr."""
    points = roc_points_bruteforce(scores, labels)
    area = 0.0
    prev_f, prev_t = points[0]
    for f, t in points[1:]:
        if f >= max_fpr:
            if f > prev_f:
                t = prev_t + (t - prev_t) * (max_fpr - prev_f) / (f - prev_f)
            f = max_fpr
            area += 0.5 * (prev_t + t) * (f - prev_f)
            return area / max_fpr
        area += 0.5 * (prev_t + t) * (f - prev_f)
        prev_f, prev_t = f, t
    return area / max_fpr


def eer_threshold_sweep(scores: list[float], labels: list[int]) -> float:
    """Walk ROC segments until FPR >= FNR and interpolate the crossing."""
    points = roc_points_bruteforce(scores, labels)
    prev_f, prev_t = points[0]
    for f, t in points[1:]:
        if f >= 1.0 - t:
            denom = (f - prev_f) + (t - prev_t)
            alpha = (1.0 - prev_t - prev_f) / denom
            return prev_f + alpha * (f - prev_f)
        prev_f, prev_t = f, t
    return 1.0


def finite_difference_grad(fn, values: list[float], eps: float = 1e-6) -> list[float]:
    """Central differences of a scalar function of a flat list."""
    grads = []
    for i in range(len(values)):
        up = list(values)
        down = list(values)
        up[i] += eps
        down[i] -= eps
        grads.append((fn(up) - fn(down)) / (2.0 * eps))
    return grads
