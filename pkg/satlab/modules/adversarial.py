"""
PGD attacks, the TRADES objective and robust-accuracy evaluation.

The attack ascends either the cross entropy against a label or the KL
divergence from a reference prediction, by signed gradient steps projected
back onto the l-infinity ball around the clean input intersected with the
pixel bounds. It starts from a uniformly perturbed point and returns the best
iterate seen, the clean input included.

Start noise comes from one generator per sample seeded with
(seed, [epoch,] sample id), so attacking a batch in any split or order gives
the same result.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from satlab.errors import InvalidInputError
from satlab.modules.datasets import LabeledDataset, one_hot
from satlab.modules.losses import (
    PROB_FLOOR,
    kl_logit_grads,
    kl_rows,
    sat_logit_grad,
    sat_loss,
    soft_ce_logit_grad_rows,
)
from satlab.modules.numeric import (
    Batch,
    ModelState,
    backward,
    forward,
    forward_with_cache,
    predict_classes,
    softmax,
)

logger = logging.getLogger(__name__)

ATTACK_OBJECTIVES = ("ce", "kl")


@dataclass(frozen=True)
class AttackSpec:
    """l-infinity PGD settings; defaults are the evaluation attack."""

    epsilon: float = 0.031
    step_size: float = 0.007
    steps: int = 20
    pixel_lo: float = 0.0
    pixel_hi: float = 1.0
    random_start: bool = True

    @property
    def pixel_bounds(self) -> tuple[float, float]:
        return self.pixel_lo, self.pixel_hi

    def validate(self, prefix: str = "attack") -> list[str]:
        errors = []
        if self.epsilon < 0:
            errors.append(f"{prefix}.epsilon must be >= 0, got {self.epsilon}")
        if not self.step_size > 0:
            errors.append(f"{prefix}.step_size must be > 0, got {self.step_size}")
        if self.steps < 1:
            errors.append(f"{prefix}.steps must be >= 1, got {self.steps}")
        if not self.pixel_lo < self.pixel_hi:
            errors.append(f"{prefix}.pixel_lo must be < pixel_hi, got [{self.pixel_lo}, {self.pixel_hi}]")
        return errors


@dataclass(frozen=True)
class TradesConfig:
    """KL coefficient (1/lambda) and the inner attack used during training."""

    inv_lambda: float = 6.0
    attack: AttackSpec = field(default_factory=lambda: AttackSpec(steps=10))

    def validate(self) -> list[str]:
        errors = self.attack.validate("trades.attack")
        if self.inv_lambda < 0:
            errors.append(f"trades.inv_lambda must be >= 0, got {self.inv_lambda}")
        return errors


def start_noise(
    shape: tuple[int, int],
    epsilon: float,
    seed: int,
    sample_ids: np.ndarray,
    epoch: Optional[int] = None,
) -> np.ndarray:
    """Uniform noise in [-epsilon, epsilon], one independent stream per sample."""
    noise = np.empty(shape)
    for row, sid in enumerate(sample_ids):
        key = [seed, int(sid)] if epoch is None else [seed, epoch, int(sid)]
        noise[row] = np.random.default_rng(key).uniform(-epsilon, epsilon, size=shape[1])
    return noise


def _objective_and_grad(
    model: ModelState,
    x: np.ndarray,
    objective: str,
    labels: Optional[np.ndarray],
    reference: Optional[np.ndarray],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-sample objective values, their input gradients and the predicted classes."""
    logits, cache = forward_with_cache(model, x)
    q = softmax(logits)
    if objective == "ce":
        target = one_hot(labels, q.shape[1])
        values = -np.log(np.maximum(q[np.arange(len(q)), labels], PROB_FLOOR))
        drows = soft_ce_logit_grad_rows(q, target)
    else:
        values = kl_rows(reference, q)
        drows = kl_logit_grads(reference, q)[1]
    _, dx = backward(model, cache, drows)
    predicted = np.argmax(logits[:, :model.spec.num_classes], axis=1)
    return values, dx, predicted


def pgd_attack(
    model: ModelState,
    x: np.ndarray,
    spec: AttackSpec,
    objective: str = "ce",
    labels: Optional[np.ndarray] = None,
    reference: Optional[np.ndarray] = None,
    sample_ids: Optional[np.ndarray] = None,
    seed: int = 0,
    epoch: Optional[int] = None,
    prefer_misclassified: bool = False,
) -> np.ndarray:
    """
    Projected gradient ascent on `objective` within the epsilon ball.

    Args:
        objective: "ce" (needs `labels`, class indices) or "kl" (needs
            `reference`, the clean prediction each row is compared with)
        sample_ids: ids keying the start-noise streams (default 0..m-1)
        prefer_misclassified: rank a misclassified iterate above any correctly
            classified one, then by objective; used for robust accuracy

    Returns:
        The best iterate per sample, same shape as `x`.
    """
    x0 = np.asarray(x, dtype=np.float64)
    if objective not in ATTACK_OBJECTIVES:
        raise InvalidInputError(f"attack objective must be one of {ATTACK_OBJECTIVES}, got '{objective}'")
    if objective == "ce" and labels is None:
        raise InvalidInputError("cross-entropy attack needs labels")
    if objective == "kl" and reference is None:
        raise InvalidInputError("KL attack needs reference probabilities")
    lo, hi = spec.pixel_bounds
    if np.any(x0 < lo) or np.any(x0 > hi):
        raise InvalidInputError(f"attack input outside pixel bounds [{lo}, {hi}]")
    if spec.epsilon == 0:
        return x0.copy()

    labels = None if labels is None else np.asarray(labels, dtype=np.int64)
    if sample_ids is None:
        sample_ids = np.arange(len(x0))
    lower = np.maximum(x0 - spec.epsilon, lo)
    upper = np.minimum(x0 + spec.epsilon, hi)

    best = x0.copy()
    best_value, grad_x, predicted = _objective_and_grad(model, x0, objective, labels, reference)
    best_wrong = predicted != labels if prefer_misclassified else None

    current = x0
    if spec.random_start:
        current = np.clip(x0 + start_noise(x0.shape, spec.epsilon, seed, sample_ids, epoch), lower, upper)
    for step in range(spec.steps + 1):
        if step > 0 or spec.random_start:
            value, grad_x, predicted = _objective_and_grad(model, current, objective, labels, reference)
            if prefer_misclassified:
                wrong = predicted != labels
                better = (wrong & ~best_wrong) | ((wrong == best_wrong) & (value > best_value))
                best_wrong = np.where(better, wrong, best_wrong)
            else:
                better = value > best_value
            best[better] = current[better]
            best_value = np.where(better, value, best_value)
        if step == spec.steps:
            break
        current = np.clip(current + spec.step_size * np.sign(grad_x), lower, upper)
    return best


# -----------------------------------------------------------------------------
# TRADES
# -----------------------------------------------------------------------------

NaturalHead = Callable[[np.ndarray, Batch], tuple[float, np.ndarray]]


def sat_natural_head(logits: np.ndarray, batch: Batch, reweight: bool = True) -> tuple[float, np.ndarray]:
    """Self-adaptive loss as the natural-accuracy term."""
    p = softmax(logits)
    return (
        sat_loss(p, batch.targets, batch.weights, reweight),
        sat_logit_grad(p, batch.targets, batch.weights, reweight),
    )


def trades_value_and_grad(
    model: ModelState,
    batch: Batch,
    natural: NaturalHead,
    inv_lambda: float,
) -> tuple[float, list[np.ndarray]]:
    """
    natural(p(x)) + inv_lambda * mean_i KL(p(x_i) || p(x_adv_i)).

    `batch.x_adv` is a constant; gradients flow through both forward passes.
    """
    if batch.forward is not None:
        logits, cache = batch.forward
    else:
        logits, cache = forward_with_cache(model, batch.x)
    value, d_clean = natural(logits, batch)
    if inv_lambda == 0:
        grads, _ = backward(model, cache, d_clean)
        return value, grads
    if batch.x_adv is None:
        raise InvalidInputError("TRADES loss needs adversarial inputs on the batch")

    p = softmax(logits)
    adv_logits, adv_cache = forward_with_cache(model, batch.x_adv)
    q = softmax(adv_logits)
    m = len(p)
    kl = float(kl_rows(p, q).mean())
    dp, dq = kl_logit_grads(p, q)
    grads, _ = backward(model, cache, d_clean + (inv_lambda / m) * dp)
    adv_grads, _ = backward(model, adv_cache, (inv_lambda / m) * dq)
    return value + inv_lambda * kl, [g + a for g, a in zip(grads, adv_grads)]


def trades_sat_loss(
    model: ModelState,
    batch: Batch,
    targets: np.ndarray,
    weights: np.ndarray,
    cfg: TradesConfig,
    seed: int = 0,
) -> float:
    """TRADES with the self-adaptive loss as natural term; attacks the batch when needed."""
    work = Batch(x=batch.x, targets=targets, weights=weights, sample_ids=batch.sample_ids, x_adv=batch.x_adv)
    if work.x_adv is None and cfg.inv_lambda != 0:
        reference = softmax(forward(model, batch.x))
        work.x_adv = pgd_attack(
            model, batch.x, cfg.attack, objective="kl", reference=reference,
            sample_ids=batch.sample_ids, seed=seed,
        )
    value, _ = trades_value_and_grad(model, work, sat_natural_head, cfg.inv_lambda)
    return value


# -----------------------------------------------------------------------------
# Evaluation
# -----------------------------------------------------------------------------


def clean_accuracy(model: ModelState, ds: LabeledDataset) -> float:
    if ds.n == 0:
        raise InvalidInputError("cannot score an empty dataset")
    return float(np.mean(predict_classes(model, ds.inputs) == ds.clean_labels))


def robust_accuracy(
    model: ModelState,
    eval_ds: LabeledDataset,
    spec: Optional[AttackSpec] = None,
    seed: int = 0,
    chunk: int = 1024,
) -> float:
    """Accuracy on the clean labels under the cross-entropy PGD attack."""
    spec = spec or AttackSpec()
    if eval_ds.n == 0:
        raise InvalidInputError("cannot score an empty dataset")
    correct = 0
    for start in range(0, eval_ds.n, chunk):
        stop = min(start + chunk, eval_ds.n)
        x = eval_ds.inputs[start:stop]
        labels = eval_ds.clean_labels[start:stop]
        x_adv = pgd_attack(
            model, x, spec, objective="ce", labels=labels,
            sample_ids=np.arange(start, stop), seed=seed, prefer_misclassified=True,
        )
        correct += int(np.sum(predict_classes(model, x_adv) == labels))
    return correct / eval_ds.n


@dataclass(frozen=True)
class RobustRecord:
    epoch: int
    clean_acc: float
    robust_acc: float


ROBUST_COLUMNS = ("epoch", "clean_acc", "robust_acc")


def write_robust_csv(path, rows: list[RobustRecord]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(ROBUST_COLUMNS)
        for r in rows:
            writer.writerow([r.epoch, repr(r.clean_acc), repr(r.robust_acc)])
