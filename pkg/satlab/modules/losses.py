"""
Loss functions on softmax probabilities, each paired with its gradient with
respect to the logits that produced them.

All logs use a probability floor of 1e-12; entries at or below the floor are
constant in the loss and contribute no gradient. Targets and weights are
treated as constants.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from satlab.errors import DivergenceError, InvalidInputError

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
SCE_TARGET_FLOOR = 1e-4


@dataclass(frozen=True)
class SceWeights:
    """Forward and reverse cross-entropy coefficients."""

    w1: float = 1.0
    w2: float = 0.1

    def validate(self) -> list[str]:
        errors = []
        if self.w1 < 0 or self.w2 < 0:
            errors.append(f"sce weights must be >= 0, got w1={self.w1}, w2={self.w2}")
        return errors


def _finite(value: float, name: str) -> float:
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite {name} loss {value}")
    return float(value)


def _check_pair(probs: np.ndarray, targets: np.ndarray) -> None:
    if probs.shape != targets.shape:
        raise InvalidInputError(f"probabilities {probs.shape} and targets {targets.shape} differ in shape")


def soft_ce_rows(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """-sum_j t_ij log max(p_ij, floor) for every row."""
    return -(targets * np.log(np.maximum(probs, PROB_FLOOR))).sum(axis=1)


def soft_ce_logit_grad_rows(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-row d/dlogits of soft_ce_rows."""
    tm = targets * (probs > PROB_FLOOR)
    return probs * tm.sum(axis=1, keepdims=True) - tm


def normalized_weights(weights: np.ndarray, reweight: bool = True) -> np.ndarray:
    """w_i / sum_j w_j, or 1/|B| for every sample when `reweight` is off."""
    if not reweight and len(weights):
        return np.full(len(weights), 1.0 / len(weights))
    total = weights.sum()
    if not total > 0:
        raise DivergenceError(f"sample weights sum to {total}")
    return weights / total


def weighted_soft_ce(
    probs: np.ndarray, targets: np.ndarray, weights: np.ndarray, reweight: bool = True
) -> float:
    _check_pair(probs, targets)
    value = float(normalized_weights(weights, reweight) @ soft_ce_rows(probs, targets))
    return _finite(value, "weighted cross-entropy")


def weighted_soft_ce_logit_grad(
    probs: np.ndarray, targets: np.ndarray, weights: np.ndarray, reweight: bool = True
) -> np.ndarray:
    _check_pair(probs, targets)
    return normalized_weights(weights, reweight)[:, None] * soft_ce_logit_grad_rows(probs, targets)


# -----------------------------------------------------------------------------
# Self-adaptive loss and the ERM baseline
# -----------------------------------------------------------------------------


def sat_loss(probs: np.ndarray, targets: np.ndarray, weights: np.ndarray, reweight: bool = True) -> float:
    """
    -(1 / sum w) * sum_i w_i * sum_j t_ij log p_ij.

    With `reweight` off every sample counts 1/|B| (moving-average targets
    without confidence weighting).
    """
    return weighted_soft_ce(probs, targets, weights, reweight)


def sat_logit_grad(
    probs: np.ndarray, targets: np.ndarray, weights: np.ndarray, reweight: bool = True
) -> np.ndarray:
    return weighted_soft_ce_logit_grad(probs, targets, weights, reweight)


def erm_loss(probs: np.ndarray, one_hot_labels: np.ndarray) -> float:
    """Mean cross entropy; the self-adaptive loss with every weight equal to one."""
    return weighted_soft_ce(probs, one_hot_labels, np.ones(len(probs)))


def erm_logit_grad(probs: np.ndarray, one_hot_labels: np.ndarray) -> np.ndarray:
    return weighted_soft_ce_logit_grad(probs, one_hot_labels, np.ones(len(probs)))


# -----------------------------------------------------------------------------
# Symmetric cross entropy combined with the self-adaptive weights
# -----------------------------------------------------------------------------


def _reverse_ce_rows(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    return (probs * -np.log(np.maximum(targets, SCE_TARGET_FLOOR))).sum(axis=1)


def sce_sat_loss(
    probs: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray,
    sce: Optional[SceWeights] = None,
    reweight: bool = True,
) -> float:
    sce = sce or SceWeights()
    _check_pair(probs, targets)
    rows = sce.w1 * soft_ce_rows(probs, targets) + sce.w2 * _reverse_ce_rows(probs, targets)
    return _finite(float(normalized_weights(weights, reweight) @ rows), "SCE")


def sce_sat_logit_grad(
    probs: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray,
    sce: Optional[SceWeights] = None,
    reweight: bool = True,
) -> np.ndarray:
    sce = sce or SceWeights()
    _check_pair(probs, targets)
    a = -np.log(np.maximum(targets, SCE_TARGET_FLOOR))
    reverse = probs * (a - (probs * a).sum(axis=1, keepdims=True))
    rows = sce.w1 * soft_ce_logit_grad_rows(probs, targets) + sce.w2 * reverse
    return normalized_weights(weights, reweight)[:, None] * rows


# -----------------------------------------------------------------------------
# Selective classification with an abstention slot
# -----------------------------------------------------------------------------


def _selective_targets(num_outputs: int, target_true: np.ndarray, label_indices: np.ndarray) -> np.ndarray:
    """Spread t_{i,y_i} over the true class and its complement over the abstain slot."""
    m = len(label_indices)
    s = np.zeros((m, num_outputs))
    s[np.arange(m), label_indices] = target_true
    s[:, num_outputs - 1] = 1.0 - target_true
    return s


def selective_target_true(targets: np.ndarray, label_indices: np.ndarray) -> np.ndarray:
    """t_{i,y_i} from c-class target rows."""
    return targets[np.arange(len(label_indices)), label_indices]


def selective_loss(probs: np.ndarray, targets: np.ndarray, label_indices: np.ndarray) -> float:
    """
    -(1/m) * sum_i [t_{i,y_i} log p_{i,y_i} + (1 - t_{i,y_i}) log p_{i,c}]

    `probs` has c + 1 columns (the last one abstains); `targets` has c.
    """
    label_indices = np.asarray(label_indices, dtype=np.int64)
    if probs.shape[1] != targets.shape[1] + 1:
        raise InvalidInputError(
            f"selective loss needs c+1 probabilities for c targets, got {probs.shape[1]} and {targets.shape[1]}"
        )
    s = _selective_targets(probs.shape[1], selective_target_true(targets, label_indices), label_indices)
    return _finite(float(soft_ce_rows(probs, s).mean()), "selective")


def selective_logit_grad(probs: np.ndarray, targets: np.ndarray, label_indices: np.ndarray) -> np.ndarray:
    label_indices = np.asarray(label_indices, dtype=np.int64)
    s = _selective_targets(probs.shape[1], selective_target_true(targets, label_indices), label_indices)
    return soft_ce_logit_grad_rows(probs, s) / len(probs)


# -----------------------------------------------------------------------------
# KL divergence between clean and perturbed predictions
# -----------------------------------------------------------------------------


def kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """KL(p_i || q_i) per row, both sides floored at 1e-12."""
    _check_pair(p, q)
    return (p * (np.log(np.maximum(p, PROB_FLOOR)) - np.log(np.maximum(q, PROB_FLOOR)))).sum(axis=1)


def kl_logit_grads(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row gradients of KL(p || q) w.r.t. the logits of p and of q."""
    _check_pair(p, q)
    g = np.log(np.maximum(p, PROB_FLOOR)) + (p > PROB_FLOOR) - np.log(np.maximum(q, PROB_FLOOR))
    d_clean = p * (g - (p * g).sum(axis=1, keepdims=True))
    d_perturbed = soft_ce_logit_grad_rows(q, p)
    return d_clean, d_perturbed
