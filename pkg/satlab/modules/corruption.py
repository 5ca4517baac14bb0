"""
Random corruption of a clean dataset.

Every sample is selected independently with probability `rate`; selected
samples are transformed according to the scheme:

  corrupted_labels  label redrawn uniformly over all c classes (may keep its own)
  gaussian          input replaced by Gaussian noise with the global scalar
                    mean/std of the original inputs
  random_pixels     input permuted by a fresh permutation per sample
  shuffled_pixels   input permuted by one permutation shared by all samples
  none              nothing selected

Clean labels and the original inputs stay on the dataset as eval-only
metadata.
"""

import logging
from dataclasses import dataclass

import numpy as np

from satlab.errors import InvalidInputError
from satlab.modules.datasets import LabeledDataset, one_hot

logger = logging.getLogger(__name__)

SCHEMES = ("corrupted_labels", "gaussian", "random_pixels", "shuffled_pixels", "none")
INPUT_SCHEMES = ("gaussian", "random_pixels", "shuffled_pixels")


@dataclass(frozen=True)
class CorruptionSpec:
    scheme: str = "corrupted_labels"
    rate: float = 0.4
    seed: int = 0

    def validate(self) -> list[str]:
        errors = []
        if self.scheme not in SCHEMES:
            errors.append(f"corruption.scheme must be one of {SCHEMES}, got '{self.scheme}'")
        if not 0.0 <= self.rate <= 1.0:
            errors.append(f"corruption.rate must be in [0, 1], got {self.rate}")
        if self.seed < 0:
            errors.append(f"corruption.seed must be >= 0, got {self.seed}")
        return errors


def corrupt(ds: LabeledDataset, spec: CorruptionSpec) -> LabeledDataset:
    """Return a corrupted copy of a clean dataset; `ds` itself is left untouched."""
    errors = spec.validate()
    if errors:
        raise InvalidInputError("; ".join(errors))
    if ds.corrupted_mask.any() or ds.original_inputs is not None:
        raise InvalidInputError("corrupt() expects an uncorrupted dataset")

    out = ds.copy()
    if spec.scheme == "none":
        return out

    rng = np.random.default_rng(spec.seed)
    mask = rng.random(ds.n) < spec.rate
    selected = np.flatnonzero(mask)
    out.corrupted_mask = mask

    if spec.scheme == "corrupted_labels":
        new_labels = rng.integers(0, ds.class_count, size=selected.size)
        out.noisy_labels[selected] = one_hot(new_labels, ds.class_count)
    else:
        out.original_inputs = ds.inputs.copy()
        if spec.scheme == "gaussian":
            mean = float(ds.inputs.mean())
            std = float(ds.inputs.std())
            out.inputs[selected] = rng.normal(mean, std, size=(selected.size, ds.dim))
        elif spec.scheme == "random_pixels":
            for i in selected:
                out.inputs[i] = ds.inputs[i, rng.permutation(ds.dim)]
        else:
            perm = rng.permutation(ds.dim)
            out.inputs[selected] = ds.inputs[selected][:, perm]

    logger.info(
        f"Corrupted {selected.size}/{ds.n} samples with {spec.scheme} (rate={spec.rate}); "
        f"label agreement {out.clean_fraction_agreement:.4f}"
    )
    return out
