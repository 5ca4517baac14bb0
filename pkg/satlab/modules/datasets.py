"""
Dataset containers, synthetic generators, train/val splitting and file
loaders.

A LabeledDataset carries what training may see (inputs, noisy one-hot
labels) next to what only evaluation may see (clean labels, the original
inputs before corruption, and which samples were corrupted).

File formats:
  CIFAR-10 binary  records of 3073 bytes: 1 label byte + 3072 pixel bytes
  IDX              big-endian magic (0x00000803 images, 0x00000801 labels),
                   u32 dims, then raw unsigned bytes
  SATD snapshot    little-endian header {magic "SATD", version u32, n u64,
                   d u32, c u32, flags u32}, inputs f64, noisy label indices
                   i32, clean labels i32, mask u8, then (flags bit 0) the
                   original inputs f64
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from satlab.errors import DatasetFormatError, InvalidInputError

logger = logging.getLogger(__name__)

GENERATORS = ("gaussian_blobs", "spirals", "moons")

CIFAR_RECORD_BYTES = 3073
CIFAR_PIXELS = 3072
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

SNAPSHOT_MAGIC = b"SATD"
SNAPSHOT_VERSION = 1
_SNAPSHOT_HEADER = struct.Struct("<4sIQIII")
_FLAG_ORIGINAL_INPUTS = 1


def one_hot(indices: np.ndarray, num_classes: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros((len(indices), num_classes))
    out[np.arange(len(indices)), indices] = 1.0
    return out


@dataclass
class LabeledDataset:
    """Indexed samples with noisy training labels and hidden clean metadata."""

    inputs: np.ndarray
    noisy_labels: np.ndarray
    clean_labels: np.ndarray
    corrupted_mask: np.ndarray
    class_count: int
    original_inputs: Optional[np.ndarray] = None
    """Inputs before corruption; eval-only. None means identical to `inputs`."""

    @classmethod
    def from_indices(cls, inputs: np.ndarray, labels: np.ndarray, class_count: int) -> "LabeledDataset":
        """Clean dataset from inputs and integer labels."""
        labels = np.asarray(labels, dtype=np.int64)
        return cls(
            inputs=np.asarray(inputs, dtype=np.float64),
            noisy_labels=one_hot(labels, class_count),
            clean_labels=labels,
            corrupted_mask=np.zeros(len(labels), dtype=bool),
            class_count=class_count,
        )

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def n(self) -> int:
        return len(self.inputs)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def noisy_indices(self) -> np.ndarray:
        return np.argmax(self.noisy_labels, axis=1)

    @property
    def clean_inputs(self) -> np.ndarray:
        return self.inputs if self.original_inputs is None else self.original_inputs

    @property
    def clean_fraction_mask(self) -> float:
        """Fraction of samples never selected by the corruption procedure."""
        return float(1.0 - self.corrupted_mask.mean()) if self.n else 1.0

    @property
    def clean_fraction_agreement(self) -> float:
        """Fraction of samples whose noisy label equals the clean label."""
        return float(np.mean(self.noisy_indices == self.clean_labels)) if self.n else 1.0

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices)
        return LabeledDataset(
            inputs=self.inputs[idx],
            noisy_labels=self.noisy_labels[idx],
            clean_labels=self.clean_labels[idx],
            corrupted_mask=self.corrupted_mask[idx],
            class_count=self.class_count,
            original_inputs=None if self.original_inputs is None else self.original_inputs[idx],
        )

    def copy(self) -> "LabeledDataset":
        return replace(
            self,
            inputs=self.inputs.copy(),
            noisy_labels=self.noisy_labels.copy(),
            clean_labels=self.clean_labels.copy(),
            corrupted_mask=self.corrupted_mask.copy(),
            original_inputs=None if self.original_inputs is None else self.original_inputs.copy(),
        )

    def validate(self) -> list[str]:
        errors = []
        n = len(self.inputs)
        if self.inputs.ndim != 2:
            errors.append(f"inputs must be 2-D, got shape {self.inputs.shape}")
        if self.noisy_labels.shape != (n, self.class_count):
            errors.append(
                f"noisy_labels must have shape ({n}, {self.class_count}), got {self.noisy_labels.shape}"
            )
        elif n and not (
            np.all((self.noisy_labels == 0.0) | (self.noisy_labels == 1.0))
            and np.all(self.noisy_labels.sum(axis=1) == 1.0)
        ):
            errors.append("noisy_labels rows must be one-hot")
        if self.clean_labels.shape != (n,):
            errors.append(f"clean_labels must have shape ({n},), got {self.clean_labels.shape}")
        elif n and (self.clean_labels.min() < 0 or self.clean_labels.max() >= self.class_count):
            errors.append(f"clean_labels must lie in [0, {self.class_count})")
        if self.corrupted_mask.shape != (n,):
            errors.append(f"corrupted_mask must have shape ({n},), got {self.corrupted_mask.shape}")
        if self.original_inputs is not None and self.original_inputs.shape != self.inputs.shape:
            errors.append("original_inputs must match the shape of inputs")
        return errors


@dataclass(frozen=True)
class SyntheticSpec:
    """
    Desk-scale stand-in for an image dataset.

    Every generator uses noise of standard deviation scale / separation around
    a geometry of size `scale`.
    """

    generator: str = "gaussian_blobs"
    classes: int = 10
    per_class: int = 1200
    dim: int = 32
    separation: float = 4.0
    seed: int = 0
    scale: float = 1.0

    def validate(self) -> list[str]:
        errors = []
        if self.generator not in GENERATORS:
            errors.append(f"synthetic.generator must be one of {GENERATORS}, got '{self.generator}'")
        if self.classes < 2:
            errors.append(f"synthetic.classes must be >= 2, got {self.classes}")
        if self.seed < 0:
            errors.append(f"synthetic.seed must be >= 0, got {self.seed}")
        if self.per_class < 1:
            errors.append(f"synthetic.per_class must be >= 1, got {self.per_class}")
        if self.dim < 1:
            errors.append(f"synthetic.dim must be >= 1, got {self.dim}")
        if not self.separation > 0:
            errors.append(f"synthetic.separation must be > 0, got {self.separation}")
        if self.generator in ("spirals", "moons") and self.dim < 2:
            errors.append(f"synthetic.dim must be >= 2 for {self.generator}")
        if self.generator == "moons" and self.classes != 2:
            errors.append("synthetic.classes must be 2 for moons")
        return errors


def class_means(spec: SyntheticSpec) -> np.ndarray:
    """Blob centres: scaled simplex vertices if dim >= classes, else a circle."""
    means = np.zeros((spec.classes, spec.dim))
    if spec.dim >= spec.classes:
        means[np.arange(spec.classes), np.arange(spec.classes)] = spec.scale
    elif spec.dim == 1:
        means[:, 0] = spec.scale * np.arange(spec.classes)
    else:
        angles = 2.0 * np.pi * np.arange(spec.classes) / spec.classes
        means[:, 0] = spec.scale * np.cos(angles)
        means[:, 1] = spec.scale * np.sin(angles)
    return means


def gen_synthetic(spec: SyntheticSpec) -> LabeledDataset:
    """Balanced synthetic dataset, shuffled so classes interleave; deterministic per seed."""
    errors = spec.validate()
    if errors:
        raise InvalidInputError("; ".join(errors))

    rng = np.random.default_rng(spec.seed)
    c, k, d = spec.classes, spec.per_class, spec.dim
    labels = np.repeat(np.arange(c), k)
    noise_std = spec.scale / spec.separation

    if spec.generator == "gaussian_blobs":
        inputs = class_means(spec)[labels] + rng.normal(0.0, noise_std, size=(c * k, d))
    elif spec.generator == "spirals":
        t = rng.uniform(0.05, 1.0, size=c * k)
        angle = 2.0 * np.pi * labels / c + 3.0 * np.pi * t
        inputs = rng.normal(0.0, noise_std, size=(c * k, d))
        inputs[:, 0] += spec.scale * t * np.cos(angle)
        inputs[:, 1] += spec.scale * t * np.sin(angle)
    else:  # moons
        t = rng.uniform(0.0, np.pi, size=c * k)
        inputs = rng.normal(0.0, noise_std, size=(c * k, d))
        upper = labels == 0
        inputs[upper, 0] += spec.scale * np.cos(t[upper])
        inputs[upper, 1] += spec.scale * np.sin(t[upper])
        inputs[~upper, 0] += spec.scale * (1.0 - np.cos(t[~upper]))
        inputs[~upper, 1] += spec.scale * (0.5 - np.sin(t[~upper]))

    order = rng.permutation(c * k)
    logger.debug(f"Generated {spec.generator}: n={c * k}, d={d}, c={c}")
    return LabeledDataset.from_indices(inputs[order], labels[order], c)


def split_train_val(ds: LabeledDataset, train_count: int) -> tuple[LabeledDataset, LabeledDataset]:
    """First `train_count` samples for training, the rest for validation; no shuffling."""
    if train_count < 1 or train_count >= ds.n:
        raise InvalidInputError(f"train_count must be in [1, {ds.n}), got {train_count}")
    return ds.subset(np.arange(train_count)), ds.subset(np.arange(train_count, ds.n))


# -----------------------------------------------------------------------------
# CIFAR-10 binary
# -----------------------------------------------------------------------------


def load_cifar_binary(path, num_classes: int = 10) -> LabeledDataset:
    """Read a CIFAR-10 binary batch; pixels scaled to [0, 1]."""
    raw = Path(path).read_bytes()
    remainder = len(raw) % CIFAR_RECORD_BYTES
    if remainder or not raw:
        raise DatasetFormatError(
            f"{path}: length {len(raw)} is not a positive multiple of {CIFAR_RECORD_BYTES}",
            offset=len(raw) - remainder,
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        raise DatasetFormatError(
            f"{path}: label {labels[bad[0]]} out of range for {num_classes} classes",
            offset=int(bad[0]) * CIFAR_RECORD_BYTES,
        )
    inputs = records[:, 1:].astype(np.float64) / 255.0
    logger.info(f"Loaded CIFAR binary {path}: {len(labels)} records")
    return LabeledDataset.from_indices(inputs, labels, num_classes)


def write_cifar_binary(path, pixels: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 pixels (n, 3072) and labels (n,) as a CIFAR-10 binary batch."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    records = np.empty((len(labels), CIFAR_RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = labels
    records[:, 1:] = pixels.reshape(len(labels), CIFAR_PIXELS)
    Path(path).write_bytes(records.tobytes())


# -----------------------------------------------------------------------------
# IDX (MNIST container)
# -----------------------------------------------------------------------------


def _read_idx(path, expected_magic: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise DatasetFormatError(f"{path}: truncated magic number", offset=len(raw))
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != expected_magic:
        raise DatasetFormatError(
            f"{path}: magic 0x{magic:08x} does not match expected 0x{expected_magic:08x}",
            offset=0,
        )
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise DatasetFormatError(f"{path}: truncated dimension header", offset=len(raw))
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    expected = header_end + int(np.prod(dims, dtype=np.int64))
    if len(raw) != expected:
        raise DatasetFormatError(
            f"{path}: expected {expected} bytes for dims {dims}, found {len(raw)}",
            offset=min(len(raw), expected),
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header_end).reshape(dims)


def load_idx(images_path, labels_path, num_classes: int = 10) -> LabeledDataset:
    """Read an IDX image/label pair; pixels flattened and scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC).astype(np.int64)
    if len(images) != len(labels):
        raise DatasetFormatError(
            f"{labels_path}: {len(labels)} labels for {len(images)} images", offset=4
        )
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        raise DatasetFormatError(
            f"{labels_path}: label {labels[bad[0]]} out of range for {num_classes} classes",
            offset=8 + int(bad[0]),
        )
    inputs = images.reshape(len(images), -1).astype(np.float64) / 255.0
    logger.info(f"Loaded IDX {images_path}: {len(labels)} images of {inputs.shape[1]} pixels")
    return LabeledDataset.from_indices(inputs, labels, num_classes)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as an IDX file (0x0000 08 ndim magic)."""
    array = np.asarray(array, dtype=np.uint8)
    header = struct.pack(">I", 0x00000800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.tobytes())


# -----------------------------------------------------------------------------
# SATD snapshot
# -----------------------------------------------------------------------------


def save_snapshot(ds: LabeledDataset, path) -> None:
    """Write a dataset, including its eval-only metadata, as a SATD snapshot."""
    flags = _FLAG_ORIGINAL_INPUTS if ds.original_inputs is not None else 0
    with open(path, "wb") as f:
        f.write(_SNAPSHOT_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, ds.n, ds.dim, ds.class_count, flags))
        f.write(np.ascontiguousarray(ds.inputs, dtype="<f8").tobytes())
        f.write(ds.noisy_indices.astype("<i4").tobytes())
        f.write(ds.clean_labels.astype("<i4").tobytes())
        f.write(ds.corrupted_mask.astype(np.uint8).tobytes())
        if flags & _FLAG_ORIGINAL_INPUTS:
            f.write(np.ascontiguousarray(ds.original_inputs, dtype="<f8").tobytes())


def load_snapshot(path) -> LabeledDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _SNAPSHOT_HEADER.size:
        raise DatasetFormatError(f"{path}: truncated snapshot header", offset=len(raw))
    magic, version, n, d, c, flags = _SNAPSHOT_HEADER.unpack_from(raw, 0)
    if magic != SNAPSHOT_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}, expected {SNAPSHOT_MAGIC!r}", offset=0)
    if version != SNAPSHOT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported snapshot version {version}", offset=4)

    sections = [("inputs", "<f8", n * d), ("noisy", "<i4", n), ("clean", "<i4", n), ("mask", "u1", n)]
    if flags & _FLAG_ORIGINAL_INPUTS:
        sections.append(("original", "<f8", n * d))
    offset = _SNAPSHOT_HEADER.size
    arrays = {}
    for name, dtype, count in sections:
        size = np.dtype(dtype).itemsize * count
        if offset + size > len(raw):
            raise DatasetFormatError(f"{path}: truncated {name} section", offset=len(raw))
        arrays[name] = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        offset += size
    if offset != len(raw):
        raise DatasetFormatError(f"{path}: {len(raw) - offset} trailing bytes", offset=offset)

    ds = LabeledDataset(
        inputs=arrays["inputs"].astype(np.float64).reshape(n, d),
        noisy_labels=one_hot(arrays["noisy"], c),
        clean_labels=arrays["clean"].astype(np.int64),
        corrupted_mask=arrays["mask"].astype(bool),
        class_count=c,
        original_inputs=(
            arrays["original"].astype(np.float64).reshape(n, d) if "original" in arrays else None
        ),
    )
    errors = ds.validate()
    if errors:
        raise DatasetFormatError(f"{path}: " + "; ".join(errors), offset=_SNAPSHOT_HEADER.size)
    return ds
