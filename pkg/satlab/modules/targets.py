"""
Per-sample moving-average targets and confidence weights.

Each training sample i owns a target t_i on the probability simplex,
initialised to its (noisy) one-hot label. After the warm-up epoch E_s the
target tracks the model's own predictions,

    t_i <- alpha * t_i + (1 - alpha) * p_i

and its largest entry w_i = max_j t_ij serves as the sample's weight.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from satlab.errors import DatasetFormatError, InvalidInputError, InvariantViolation
from satlab.modules.datasets import LabeledDataset

logger = logging.getLogger(__name__)

SIMPLEX_INPUT_TOL = 1e-6
SIMPLEX_STORE_TOL = 1e-9

TARGETS_MAGIC = b"SATT"
TARGETS_VERSION = 1
_TARGETS_HEADER = struct.Struct("<4sIQII")


@dataclass(frozen=True)
class SatConfig:
    """Warm-up length, EMA momentum and whether samples are confidence weighted."""

    start_epoch: int = 60
    momentum: float = 0.9
    reweight: bool = True

    def validate(self) -> list[str]:
        errors = []
        if self.start_epoch < 0:
            errors.append(f"sat.start_epoch must be >= 0, got {self.start_epoch}")
        if not 0.0 <= self.momentum <= 1.0:
            errors.append(f"sat.momentum must be in [0, 1], got {self.momentum}")
        return errors

    def active(self, epoch: int) -> bool:
        """Whether targets are updated during the 1-indexed `epoch`."""
        return epoch > self.start_epoch


@dataclass
class TargetStore:
    targets: np.ndarray
    last_updated_epoch: int = 0

    @property
    def n(self) -> int:
        return self.targets.shape[0]

    @property
    def num_classes(self) -> int:
        return self.targets.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return self.targets.max(axis=1)

    @property
    def recovered_labels(self) -> np.ndarray:
        return np.argmax(self.targets, axis=1)

    def rows(self, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(targets, weights) for the given samples, as copies."""
        t = self.targets[indices]
        return t, t.max(axis=1)

    def update(self, indices: np.ndarray, probs: np.ndarray, alpha: float, epoch: int) -> None:
        """EMA step for a mini-batch; `probs` rows align with `indices`."""
        if probs.shape != (len(indices), self.num_classes):
            raise InvalidInputError(
                f"expected predictions of shape ({len(indices)}, {self.num_classes}), got {probs.shape}"
            )
        self.targets[indices] = alpha * self.targets[indices] + (1.0 - alpha) * probs
        self.last_updated_epoch = epoch

    def check_invariants(self) -> None:
        t = self.targets
        if np.any(t < 0.0):
            raise InvariantViolation(f"negative target entry {t.min()}")
        drift = np.abs(t.sum(axis=1) - 1.0).max(initial=0.0)
        if drift > SIMPLEX_STORE_TOL:
            raise InvariantViolation(f"target rows leave the simplex by {drift:.3e}")
        w = self.weights
        if w.size and (w.min() < 1.0 / self.num_classes - SIMPLEX_STORE_TOL or w.max() > 1.0 + SIMPLEX_STORE_TOL):
            raise InvariantViolation(f"weights outside [1/c, 1]: [{w.min()}, {w.max()}]")

    def save(self, path) -> None:
        """Write a SATT checkpoint: header {magic, version, n, c, epoch} then row-major doubles."""
        with open(path, "wb") as f:
            f.write(_TARGETS_HEADER.pack(TARGETS_MAGIC, TARGETS_VERSION, self.n, self.num_classes, self.last_updated_epoch))
            f.write(np.ascontiguousarray(self.targets, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "TargetStore":
        raw = Path(path).read_bytes()
        if len(raw) < _TARGETS_HEADER.size:
            raise DatasetFormatError(f"{path}: truncated target header", offset=len(raw))
        magic, version, n, c, epoch = _TARGETS_HEADER.unpack_from(raw, 0)
        if magic != TARGETS_MAGIC:
            raise DatasetFormatError(f"{path}: bad magic {magic!r}, expected {TARGETS_MAGIC!r}", offset=0)
        if version != TARGETS_VERSION:
            raise DatasetFormatError(f"{path}: unsupported target version {version}", offset=4)
        expected = _TARGETS_HEADER.size + 8 * n * c
        if len(raw) != expected:
            raise DatasetFormatError(
                f"{path}: expected {expected} bytes for {n}x{c} targets, found {len(raw)}",
                offset=min(len(raw), expected),
            )
        targets = np.frombuffer(raw, dtype="<f8", offset=_TARGETS_HEADER.size).astype(np.float64)
        return cls(targets=targets.reshape(n, c), last_updated_epoch=epoch)


def init_targets(ds: LabeledDataset) -> TargetStore:
    """Targets start as a copy of the noisy one-hot labels."""
    return TargetStore(targets=np.array(ds.noisy_labels, dtype=np.float64, copy=True))


def _check_simplex(v: np.ndarray, name: str) -> None:
    if np.any(v < -SIMPLEX_INPUT_TOL):
        raise InvalidInputError(f"{name} has negative entries")
    drift = np.abs(v.sum(axis=-1) - 1.0).max(initial=0.0)
    if drift > SIMPLEX_INPUT_TOL:
        raise InvalidInputError(f"{name} is off the simplex by {drift:.3e}")


def ema_update(t: np.ndarray, p: np.ndarray, alpha: float) -> np.ndarray:
    """alpha * t + (1 - alpha) * p for simplex vectors (or rows of them)."""
    t = np.asarray(t, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if t.shape != p.shape:
        raise InvalidInputError(f"target shape {t.shape} does not match prediction shape {p.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInputError(f"momentum must be in [0, 1], got {alpha}")
    _check_simplex(t, "target")
    _check_simplex(p, "prediction")
    return alpha * t + (1.0 - alpha) * p


def sample_weight(t: np.ndarray) -> float:
    return float(np.max(t))
