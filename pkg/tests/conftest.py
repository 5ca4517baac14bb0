"""
Pytest configuration and shared fixtures for satlab tests.
"""

import numpy as np
import pytest

from satlab.config.experiment import ExperimentConfig
from satlab.modules.datasets import LabeledDataset, SyntheticSpec, gen_synthetic, one_hot
from satlab.modules.numeric import Batch, MlpSpec, init_model


@pytest.fixture
def rng():
    """Fixed generator for test data."""
    return np.random.default_rng(1234)


@pytest.fixture
def small_spec():
    """Two hidden layers, four classes."""
    return MlpSpec(input_dim=5, hidden_widths=(8, 8), num_classes=4)


@pytest.fixture
def small_model(small_spec):
    """Randomly initialised MLP matching small_spec."""
    return init_model(small_spec, seed=7)


@pytest.fixture
def soft_batch(rng, small_spec):
    """Batch of six samples with random simplex targets and their weights."""
    m, c = 6, small_spec.num_classes
    labels = rng.integers(0, c, size=m)
    targets = rng.dirichlet(np.ones(c), size=m)
    return Batch(
        x=rng.normal(size=(m, small_spec.input_dim)),
        labels=one_hot(labels, c),
        targets=targets,
        weights=targets.max(axis=1),
        sample_ids=np.arange(m),
    )


@pytest.fixture
def toy_dataset():
    """Three well separated gaussian blobs in four dimensions (120 samples)."""
    return gen_synthetic(SyntheticSpec(classes=3, per_class=40, dim=4, separation=4.0, seed=0))


@pytest.fixture
def labeled_factory():
    """Build a clean LabeledDataset from inputs and integer labels."""
    def _make(inputs, labels, class_count):
        return LabeledDataset.from_indices(np.asarray(inputs, dtype=float), np.asarray(labels), class_count)
    return _make


@pytest.fixture
def output_dir(tmp_path):
    """Temporary output root for runs."""
    path = tmp_path / "runs"
    path.mkdir()
    return path


@pytest.fixture
def tiny_flat(output_dir):
    """Flat settings of a run that finishes in well under a second."""
    return {
        "run.name": "tiny",
        "run.mode": "sat",
        "run.epochs": "3",
        "run.batch_size": "32",
        "run.trials": "2",
        "run.output_dir": str(output_dir),
        "data.train_count": "90",
        "data.test_per_class": "10",
        "synthetic.classes": "3",
        "synthetic.per_class": "40",
        "synthetic.dim": "4",
        "synthetic.separation": "4.0",
        "corruption.rate": "0.2",
        "model.hidden_widths": "8",
        "optimizer.lr0": "0.05",
        "sat.start_epoch": "1",
    }


@pytest.fixture
def tiny_config(tiny_flat):
    """ExperimentConfig built from tiny_flat."""
    return ExperimentConfig.from_flat(tiny_flat)
