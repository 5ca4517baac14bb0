"""
Optimizers and learning-rate schedules.

SGD uses plain heavy-ball momentum with no dampening and no Nesterov term,
weight decay folded into the gradient:

    v <- momentum * v + g + weight_decay * theta
    theta <- theta - lr * v

Adam is provided for the capacity-sweep profile (constant small lr).
Updates are applied in place; the step functions return the model for
chaining.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from satlab.errors import InvalidInputError
from satlab.modules.numeric import ModelState

logger = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adam")
SCHEDULES = ("cosine", "multistep", "constant")


@dataclass(frozen=True)
class OptimizerConfig:
    """Optimizer hyperparameters and learning-rate schedule."""

    name: str = "sgd"
    lr0: float = 0.1
    momentum: float = 0.9
    """SGD heavy-ball coefficient; doubles as Adam's beta1."""
    weight_decay: float = 5e-4
    schedule: str = "cosine"
    milestones: tuple[int, ...] = ()
    gamma: float = 0.1
    warmup_epochs: int = 0
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> list[str]:
        errors = []
        if self.name not in OPTIMIZERS:
            errors.append(f"optimizer.name must be one of {OPTIMIZERS}, got '{self.name}'")
        if not self.lr0 > 0:
            errors.append(f"optimizer.lr0 must be > 0, got {self.lr0}")
        if not 0.0 <= self.momentum < 1.0:
            errors.append(f"optimizer.momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            errors.append(f"optimizer.weight_decay must be >= 0, got {self.weight_decay}")
        if self.schedule not in SCHEDULES:
            errors.append(f"optimizer.schedule must be one of {SCHEDULES}, got '{self.schedule}'")
        if self.warmup_epochs < 0:
            errors.append(f"optimizer.warmup_epochs must be >= 0, got {self.warmup_epochs}")
        if not 0.0 <= self.beta2 < 1.0:
            errors.append(f"optimizer.beta2 must be in [0, 1), got {self.beta2}")
        return errors


@dataclass
class OptimizerState:
    """Per-parameter buffers plus the hyperparameters they were built for."""

    momentum_buffers: list[np.ndarray]
    hyper: OptimizerConfig
    epoch_budget: int
    second_moments: list[np.ndarray] = field(default_factory=list)
    steps: int = 0

    def save(self, path) -> None:
        """Write the buffers and step count to an .npz archive."""
        arrays = {f"m{i}": v for i, v in enumerate(self.momentum_buffers)}
        arrays.update({f"s{i}": v for i, v in enumerate(self.second_moments)})
        np.savez(
            path,
            name=self.hyper.name,
            epoch_budget=self.epoch_budget,
            steps=self.steps,
            count=len(self.momentum_buffers),
            **arrays,
        )

    @classmethod
    def load(cls, path, hyper: OptimizerConfig, epoch_budget: int) -> "OptimizerState":
        """
        Restore buffers written by save() for a run with the given hyperparameters.

        Raises:
            InvalidInputError: the archive belongs to another optimizer or epoch budget
        """
        with np.load(path) as data:
            name = str(data["name"])
            budget = int(data["epoch_budget"])
            if name != hyper.name or budget != epoch_budget:
                raise InvalidInputError(
                    f"{path}: optimizer checkpoint is for {name} over {budget} epochs, "
                    f"expected {hyper.name} over {epoch_budget}"
                )
            count = int(data["count"])
            momentum = [np.array(data[f"m{i}"], dtype=np.float64) for i in range(count)]
            second = (
                [np.array(data[f"s{i}"], dtype=np.float64) for i in range(count)]
                if hyper.name == "adam" else []
            )
            steps = int(data["steps"])
        return cls(
            momentum_buffers=momentum,
            hyper=hyper,
            epoch_budget=epoch_budget,
            second_moments=second,
            steps=steps,
        )


def init_optimizer(model: ModelState, hyper: OptimizerConfig, epoch_budget: int) -> OptimizerState:
    errors = hyper.validate()
    if epoch_budget < 1:
        errors.append(f"epoch budget must be >= 1, got {epoch_budget}")
    if errors:
        raise InvalidInputError("; ".join(errors))
    second = [np.zeros_like(p) for p in model.params] if hyper.name == "adam" else []
    return OptimizerState(
        momentum_buffers=[np.zeros_like(p) for p in model.params],
        hyper=hyper,
        epoch_budget=epoch_budget,
        second_moments=second,
    )


def _check_shapes(model: ModelState, gradients: list[np.ndarray], buffers: list[np.ndarray]) -> None:
    if len(gradients) != len(model.params) or len(buffers) != len(model.params):
        raise InvalidInputError(
            f"expected {len(model.params)} gradient/buffer tensors, "
            f"got {len(gradients)}/{len(buffers)}"
        )
    for p, g, v in zip(model.params, gradients, buffers):
        if g.shape != p.shape or v.shape != p.shape:
            raise InvalidInputError(
                f"shape mismatch: parameter {p.shape}, gradient {g.shape}, buffer {v.shape}"
            )


def sgd_step(
    model: ModelState, gradients: list[np.ndarray], state: OptimizerState, lr: float
) -> ModelState:
    """One heavy-ball SGD update."""
    if lr < 0:
        raise InvalidInputError(f"learning rate must be >= 0, got {lr}")
    _check_shapes(model, gradients, state.momentum_buffers)
    m = state.hyper.momentum
    wd = state.hyper.weight_decay
    for p, g, v in zip(model.params, gradients, state.momentum_buffers):
        v *= m
        v += g
        if wd:
            v += wd * p
        p -= lr * v
    state.steps += 1
    return model


def adam_step(
    model: ModelState, gradients: list[np.ndarray], state: OptimizerState, lr: float
) -> ModelState:
    """One Adam update with bias correction; L2 decay folded into the gradient."""
    if lr < 0:
        raise InvalidInputError(f"learning rate must be >= 0, got {lr}")
    _check_shapes(model, gradients, state.momentum_buffers)
    hyper = state.hyper
    state.steps += 1
    b1, b2 = hyper.momentum, hyper.beta2
    c1 = 1.0 - b1 ** state.steps
    c2 = 1.0 - b2 ** state.steps
    for p, g, m1, m2 in zip(model.params, gradients, state.momentum_buffers, state.second_moments):
        if hyper.weight_decay:
            g = g + hyper.weight_decay * p
        m1 *= b1
        m1 += (1.0 - b1) * g
        m2 *= b2
        m2 += (1.0 - b2) * g * g
        p -= lr * (m1 / c1) / (np.sqrt(m2 / c2) + hyper.eps)
    return model


def optimizer_step(
    model: ModelState, gradients: list[np.ndarray], state: OptimizerState, lr: float
) -> ModelState:
    if state.hyper.name == "adam":
        return adam_step(model, gradients, state, lr)
    return sgd_step(model, gradients, state, lr)


def cosine_lr(epoch: int, total: int, lr0: float) -> float:
    """0.5 * lr0 * (1 + cos(pi * epoch / total)), annealing lr0 to zero."""
    if total < 1:
        raise InvalidInputError(f"total epochs must be >= 1, got {total}")
    if epoch < 0 or epoch > total:
        raise InvalidInputError(f"epoch must be in [0, {total}], got {epoch}")
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * epoch / total))


def multistep_lr(epoch: int, milestones: tuple[int, ...], gamma: float, lr0: float) -> float:
    """lr0 multiplied by gamma once for every milestone already reached."""
    if epoch < 0:
        raise InvalidInputError(f"epoch must be >= 0, got {epoch}")
    passed = sum(1 for m in milestones if epoch >= m)
    return lr0 * gamma ** passed


def learning_rate(hyper: OptimizerConfig, epoch: int, total: int) -> float:
    """
    Learning rate for the zero-based `epoch` of a `total`-epoch run.

    A linear warmup from lr0/100 to lr0 over `warmup_epochs` precedes the main
    schedule, which then runs over the remaining epochs.
    """
    if hyper.warmup_epochs and epoch < hyper.warmup_epochs:
        start = hyper.lr0 / 100.0
        return start + (hyper.lr0 - start) * epoch / hyper.warmup_epochs

    e = epoch - hyper.warmup_epochs
    span = max(1, total - hyper.warmup_epochs)
    if hyper.schedule == "cosine":
        return cosine_lr(min(e, span), span, hyper.lr0)
    if hyper.schedule == "multistep":
        return multistep_lr(epoch, hyper.milestones, hyper.gamma, hyper.lr0)
    return hyper.lr0
