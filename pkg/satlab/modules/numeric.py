"""
Dense numeric substrate: ReLU MLP forward/backward, softmax, gradient
computation and a central-difference gradient oracle.

Everything runs in float64 on numpy arrays. Parameters are kept as a flat list
[W0, b0, W1, b1, ...] with W of shape (fan_in, fan_out), so

    logits = relu(... relu(x @ W0 + b0) ...) @ W_L + b_L

Gradients are hand-written reverse mode over this fixed layer stack: a loss
supplies dL/dlogits and backward() carries it to every parameter (and to the
input, which the PGD attack needs). There is no general graph autodiff.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from satlab.errors import DivergenceError, InvalidInputError

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu",)


@dataclass(frozen=True)
class MlpSpec:
    """Shape of a fully connected ReLU classifier."""

    input_dim: int
    hidden_widths: tuple[int, ...]
    num_classes: int
    activation: str = "relu"
    abstain: bool = False
    """Adds one extra output slot (index num_classes) for abstention."""

    @property
    def output_dim(self) -> int:
        return self.num_classes + (1 if self.abstain else 0)

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_widths, self.output_dim]

    def validate(self) -> list[str]:
        errors = []
        if self.input_dim < 1:
            errors.append(f"input_dim must be >= 1, got {self.input_dim}")
        if any(w < 1 for w in self.hidden_widths):
            errors.append(f"hidden widths must all be >= 1, got {list(self.hidden_widths)}")
        if self.num_classes < 2:
            errors.append(f"num_classes must be >= 2, got {self.num_classes}")
        if self.activation not in ACTIVATIONS:
            errors.append(f"activation must be one of {ACTIVATIONS}, got '{self.activation}'")
        return errors


@dataclass
class ModelState:
    """MLP parameters plus the RNG stream the model was initialised from."""

    spec: MlpSpec
    params: list[np.ndarray]
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    @property
    def num_layers(self) -> int:
        return len(self.params) // 2

    @property
    def weights(self) -> list[np.ndarray]:
        return self.params[0::2]

    @property
    def biases(self) -> list[np.ndarray]:
        return self.params[1::2]

    def copy(self) -> "ModelState":
        return ModelState(
            spec=self.spec,
            params=[p.copy() for p in self.params],
            rng=copy.deepcopy(self.rng),
        )

    def save(self, path) -> None:
        """Write parameters and spec to an .npz archive."""
        arrays = {f"p{i}": p for i, p in enumerate(self.params)}
        np.savez(
            path,
            input_dim=self.spec.input_dim,
            hidden_widths=np.asarray(self.spec.hidden_widths, dtype=np.int64),
            num_classes=self.spec.num_classes,
            abstain=self.spec.abstain,
            **arrays,
        )

    @classmethod
    def load(cls, path) -> "ModelState":
        with np.load(path) as data:
            spec = MlpSpec(
                input_dim=int(data["input_dim"]),
                hidden_widths=tuple(int(w) for w in data["hidden_widths"]),
                num_classes=int(data["num_classes"]),
                abstain=bool(data["abstain"]),
            )
            count = 2 * (len(spec.hidden_widths) + 1)
            params = [np.array(data[f"p{i}"], dtype=np.float64) for i in range(count)]
        return cls(spec=spec, params=params)


@dataclass
class ForwardCache:
    """Layer inputs and pre-activations kept for the backward pass."""

    inputs: list[np.ndarray]
    preacts: list[np.ndarray]


@dataclass
class Batch:
    """
    One mini-batch plus everything a loss needs to evaluate it.

    `forward` may carry an already computed (logits, cache) for the current
    parameters so the training loop does not run the network twice; gradient
    checkers leave it unset so every evaluation recomputes.
    """

    x: np.ndarray
    labels: Optional[np.ndarray] = None
    targets: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    index: int = 0
    sample_ids: Optional[np.ndarray] = None
    x_adv: Optional[np.ndarray] = None
    forward: Optional[tuple[np.ndarray, ForwardCache]] = None
    extras: dict[str, Any] = field(default_factory=dict)

    def without_forward(self) -> "Batch":
        clone = copy.copy(self)
        clone.forward = None
        return clone


LossFn = Callable[[ModelState, Batch], tuple[float, list[np.ndarray]]]
"""A differentiable loss: (model, batch) -> (value, gradient per parameter)."""


def init_model(spec: MlpSpec, seed: int) -> ModelState:
    """He-normal weights, zero biases, drawn from a generator seeded with `seed`."""
    errors = spec.validate()
    if errors:
        raise InvalidInputError("; ".join(errors))

    rng = np.random.default_rng(seed)
    params: list[np.ndarray] = []
    dims = spec.layer_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        params.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return ModelState(spec=spec, params=params, rng=rng)


def zero_model(spec: MlpSpec) -> ModelState:
    """Model with every parameter set to zero."""
    dims = spec.layer_dims
    params: list[np.ndarray] = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        params.append(np.zeros((fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return ModelState(spec=spec, params=params)


def _check_input(model: ModelState, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.spec.input_dim:
        raise InvalidInputError(
            f"expected input of shape (batch, {model.spec.input_dim}), got {x.shape}"
        )
    return x


def forward_with_cache(model: ModelState, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Logits for a batch plus the intermediates backward() needs."""
    h = _check_input(model, x)
    inputs = [h]
    preacts = []
    last = model.num_layers - 1
    for k in range(model.num_layers):
        z = h @ model.params[2 * k] + model.params[2 * k + 1]
        if k == last:
            return z, ForwardCache(inputs=inputs, preacts=preacts)
        preacts.append(z)
        h = np.maximum(z, 0.0)
        inputs.append(h)
    raise AssertionError("unreachable: model has no layers")


def forward(model: ModelState, x: np.ndarray) -> np.ndarray:
    """Logits of shape (batch, output_dim)."""
    logits, _ = forward_with_cache(model, x)
    return logits


def backward(
    model: ModelState, cache: ForwardCache, dlogits: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Propagate dL/dlogits to (gradient per parameter, dL/dx)."""
    grads: list[Optional[np.ndarray]] = [None] * len(model.params)
    g = dlogits
    for k in reversed(range(model.num_layers)):
        h = cache.inputs[k]
        grads[2 * k] = h.T @ g
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ model.params[2 * k].T
        if k > 0:
            g = g * (cache.preacts[k - 1] > 0.0)
    return grads, g  # type: ignore[return-value]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilised by subtracting each row's maximum."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("softmax received non-finite logits")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def predict_classes(model: ModelState, x: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Argmax over the real classes (abstention slot excluded), chunked."""
    c = model.spec.num_classes
    out = np.empty(len(x), dtype=np.int64)
    for start in range(0, len(x), chunk):
        logits = forward(model, x[start:start + chunk])
        out[start:start + chunk] = np.argmax(logits[:, :c], axis=1)
    return out


def head_loss(head: Callable[[np.ndarray, Batch], tuple[float, np.ndarray]]) -> LossFn:
    """
    Lift a loss on logits to a LossFn over parameters.

    `head(logits, batch)` returns (value, dL/dlogits).
    """

    def loss_fn(model: ModelState, batch: Batch) -> tuple[float, list[np.ndarray]]:
        if batch.forward is not None:
            logits, cache = batch.forward
        else:
            logits, cache = forward_with_cache(model, batch.x)
        value, dlogits = head(logits, batch)
        grads, _ = backward(model, cache, dlogits)
        return value, grads

    return loss_fn


def value_and_grad(
    model: ModelState, loss_fn: LossFn, batch: Batch
) -> tuple[float, list[np.ndarray]]:
    """Evaluate a loss and its parameter gradients, rejecting non-finite results."""
    value, grads = loss_fn(model, batch)
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite loss {value}", batch_index=batch.index)
    for p, g in zip(model.params, grads):
        if g.shape != p.shape:
            raise InvalidInputError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient", batch_index=batch.index)
    return float(value), grads


def grad(model: ModelState, loss_fn: LossFn, batch: Batch) -> list[np.ndarray]:
    """Gradient of `loss_fn` w.r.t. every parameter tensor."""
    return value_and_grad(model, loss_fn, batch)[1]


def finite_diff_pairs(
    model: ModelState,
    loss_fn: LossFn,
    batch: Batch,
    h: float = 1e-5,
    samples_per_tensor: int = 16,
    seed: int = 0,
) -> list[tuple[float, float]]:
    """
    (analytic, central-difference) gradient pairs on a random subset of
    coordinates from every parameter tensor.
    """
    if h <= 0:
        raise InvalidInputError(f"finite-difference step must be > 0, got {h}")

    fresh = batch.without_forward()
    _, analytic = loss_fn(model, fresh)
    rng = np.random.default_rng(seed)
    shifted = model.copy()
    pairs = []
    for t, param in enumerate(shifted.params):
        flat = param.reshape(-1)
        count = min(samples_per_tensor, flat.size)
        for idx in rng.choice(flat.size, size=count, replace=False):
            original = flat[idx]
            flat[idx] = original + h
            plus, _ = loss_fn(shifted, fresh)
            flat[idx] = original - h
            minus, _ = loss_fn(shifted, fresh)
            flat[idx] = original
            numeric = (plus - minus) / (2.0 * h)
            pairs.append((float(analytic[t].reshape(-1)[idx]), float(numeric)))
    return pairs


def finite_diff_check(
    model: ModelState,
    loss_fn: LossFn,
    batch: Batch,
    h: float = 1e-5,
    samples_per_tensor: int = 16,
    seed: int = 0,
) -> float:
    """Worst relative discrepancy between analytic and numeric gradients."""
    worst = 0.0
    for analytic, numeric in finite_diff_pairs(model, loss_fn, batch, h, samples_per_tensor, seed):
        denom = max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, abs(analytic - numeric) / denom)
    logger.debug(f"Finite-difference check: worst relative error {worst:.3e}")
    return worst
