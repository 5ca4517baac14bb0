"""
Measurements of a training run: per-epoch accuracy curves, generalization
gap, label recovery, capacity-sweep scaling and early-stopping selection.

Epoch logs are written as CSV with floats in repr() form so that parsing an
emitted file gives back exactly the same records; optional columns are empty
when absent.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np

from satlab.errors import InvalidInputError
from satlab.modules.targets import TargetStore

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    acc_noisy_train: float
    acc_clean_train: float
    acc_noisy_val: float
    acc_clean_val: float
    robust_acc: Optional[float] = None
    acc_clean_test: Optional[float] = None


@dataclass(frozen=True)
class PortionRecord:
    """Clean-label accuracy on the untouched and corrupted training samples."""

    epoch: int
    acc_untouched: Optional[float]
    acc_corrupted: Optional[float]
    recovered_acc: float


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text: str, kind):
    if text == "":
        return None
    return int(text) if kind is int else float(text)


def _emit(records: Sequence, cls) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    names = [f.name for f in fields(cls)]
    writer.writerow(names)
    for r in records:
        writer.writerow([_format(getattr(r, name)) for name in names])
    return buf.getvalue()


def _read(text: str, cls) -> list:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    names = [f.name for f in fields(cls)]
    if header != names:
        raise InvalidInputError(f"unexpected CSV header {header}, expected {names}")
    out = []
    for row in reader:
        values = {
            name: _parse(cell, int if name == "epoch" else float)
            for name, cell in zip(names, row)
        }
        out.append(cls(**values))
    return out


def emit_epoch_csv(records: Sequence[EpochRecord]) -> str:
    return _emit(records, EpochRecord)


def parse_epoch_csv(text: str) -> list[EpochRecord]:
    return _read(text, EpochRecord)


def emit_portion_csv(records: Sequence[PortionRecord]) -> str:
    return _emit(records, PortionRecord)


def parse_portion_csv(text: str) -> list[PortionRecord]:
    return _read(text, PortionRecord)


# -----------------------------------------------------------------------------
# Label recovery
# -----------------------------------------------------------------------------


@dataclass
class RecoveryReport:
    recovered_accuracy: float
    confusion: np.ndarray
    """confusion[i, j] = samples with clean label i whose target argmax is j."""
    weight_matrix: np.ndarray
    """Mean sample weight per confusion cell; NaN where no sample lies."""
    present: np.ndarray

    def to_dict(self) -> dict:
        weights = [
            [float(w) if ok else None for w, ok in zip(row, mask)]
            for row, mask in zip(self.weight_matrix, self.present)
        ]
        return {
            "recovered_accuracy": self.recovered_accuracy,
            "confusion": self.confusion.tolist(),
            "weight_matrix": weights,
        }


def _check_aligned(store: TargetStore, clean_labels: np.ndarray) -> np.ndarray:
    clean_labels = np.asarray(clean_labels, dtype=np.int64)
    if len(clean_labels) != store.n:
        raise InvalidInputError(f"{store.n} targets but {len(clean_labels)} clean labels")
    return clean_labels


def recovered_accuracy(store: TargetStore, clean_labels: np.ndarray) -> float:
    """Agreement between target argmax (lowest index on ties) and the clean labels."""
    clean_labels = _check_aligned(store, clean_labels)
    if store.n == 0:
        return 1.0
    return float(np.mean(store.recovered_labels == clean_labels))


def recovery_report(store: TargetStore, clean_labels: np.ndarray) -> RecoveryReport:
    clean_labels = _check_aligned(store, clean_labels)
    c = store.num_classes
    recovered = store.recovered_labels
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (clean_labels, recovered), 1)
    weight_sum = np.zeros((c, c))
    np.add.at(weight_sum, (clean_labels, recovered), store.weights)
    present = confusion > 0
    weight_matrix = np.full((c, c), np.nan)
    weight_matrix[present] = weight_sum[present] / confusion[present]
    return RecoveryReport(
        recovered_accuracy=recovered_accuracy(store, clean_labels),
        confusion=confusion,
        weight_matrix=weight_matrix,
        present=present,
    )


def generalization_error(record: EpochRecord) -> float:
    """Noisy-train minus noisy-validation accuracy."""
    return record.acc_noisy_train - record.acc_noisy_val


def capacity_sweep_params(width: float, base_width: float = 64) -> tuple[int, float]:
    """
    Warm-up and momentum scaled to model capacity, r = base_width / width:
    E_s = round(40 r) (halves round up), alpha = 0.9 ** (1 / r).
    """
    if width <= 0:
        raise InvalidInputError(f"width must be > 0, got {width}")
    r = base_width / width
    return int(math.floor(40.0 * r + 0.5)), 0.9 ** (1.0 / r)


@dataclass(frozen=True)
class EarlyStopResult:
    epoch: int
    score: float
    acc_clean_test: Optional[float]


EARLY_STOP_CRITERIA = ("noisy_val", "clean_val")


def early_stop_select(records: Sequence[EpochRecord], criterion: str = "noisy_val") -> EarlyStopResult:
    """Epoch with the best validation accuracy, earliest on ties."""
    if not records:
        raise InvalidInputError("early stopping needs at least one epoch record")
    if criterion not in EARLY_STOP_CRITERIA:
        raise InvalidInputError(f"criterion must be one of {EARLY_STOP_CRITERIA}, got '{criterion}'")
    key = "acc_noisy_val" if criterion == "noisy_val" else "acc_clean_val"
    best = records[0]
    for r in records[1:]:
        if getattr(r, key) > getattr(best, key):
            best = r
    return EarlyStopResult(epoch=best.epoch, score=getattr(best, key), acc_clean_test=best.acc_clean_test)


def aggregate(values: Sequence[float]) -> dict[str, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise InvalidInputError("nothing to aggregate")
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return {"mean": float(arr.mean()), "std": std}


def record_dict(record: EpochRecord) -> dict:
    return asdict(record)
