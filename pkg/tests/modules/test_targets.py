"""
Tests for the moving-average target store and sample weights.
"""

import numpy as np
import pytest

from satlab.errors import DatasetFormatError, InvalidInputError, InvariantViolation
from satlab.modules.corruption import CorruptionSpec, corrupt
from satlab.modules.targets import SatConfig, TargetStore, ema_update, init_targets, sample_weight


class TestInitTargets:

    def test_targets_copy_noisy_labels(self, toy_dataset):
        """Test that targets start as the noisy one-hot labels."""
        noisy = corrupt(toy_dataset, CorruptionSpec(rate=0.5, seed=1))
        store = init_targets(noisy)

        assert np.array_equal(store.targets, noisy.noisy_labels)
        assert np.all(store.weights == 1.0)
        assert store.last_updated_epoch == 0

    def test_store_is_independent_of_dataset(self, toy_dataset):
        """Test that the store owns a copy of the labels."""
        store = init_targets(toy_dataset)
        toy_dataset.noisy_labels[:] = 0.0
        assert np.all(store.targets.sum(axis=1) == 1.0)


class TestEmaUpdate:
    """alpha * t + (1 - alpha) * p."""

    def test_alpha_one_keeps_target(self):
        """Test that momentum 1 leaves the target unchanged."""
        t = np.array([0.2, 0.3, 0.5])
        assert np.array_equal(ema_update(t, np.array([1.0, 0.0, 0.0]), 1.0), t)

    def test_alpha_zero_takes_prediction(self):
        """Test that momentum 0 replaces the target with the prediction."""
        p = np.array([0.1, 0.6, 0.3])
        assert np.array_equal(ema_update(np.array([1.0, 0.0, 0.0]), p, 0.0), p)

    def test_scalar_example(self):
        """Test the two-class update 0.9 * [1, 0] + 0.1 * [0.5, 0.5]."""
        out = ema_update(np.array([1.0, 0.0]), np.array([0.5, 0.5]), 0.9)
        np.testing.assert_allclose(out, [0.95, 0.05])

    def test_contraction(self, rng):
        """Test that the update moves the target towards the prediction by a factor alpha."""
        t, p = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
        out = ema_update(t, p, 0.7)
        assert np.abs(out - p).sum() == pytest.approx(0.7 * np.abs(t - p).sum())

    def test_repeated_updates_reach_a_one_hot_prediction(self):
        """Test that repeated updates converge to a fixed one-hot prediction."""
        t0 = np.array([1.0, 0.0, 0.0])
        q = np.array([0.0, 0.0, 1.0])
        t = t0
        for _ in range(30):
            t = ema_update(t, q, 0.9)
        assert np.abs(t - q).sum() == pytest.approx(0.9 ** 30 * np.abs(t0 - q).sum())
        assert np.argmax(t) == 2

    def test_stays_on_simplex(self, rng):
        """Test that rows stay on the simplex through many updates."""
        t = rng.dirichlet(np.ones(10), size=50)
        for _ in range(100):
            t = ema_update(t, rng.dirichlet(np.ones(10), size=50), 0.9)
        assert np.all(t >= 0.0)
        assert np.max(np.abs(t.sum(axis=1) - 1.0)) < 1e-9

    def test_rejects_off_simplex_input(self):
        """Test that a target off the simplex is refused."""
        with pytest.raises(InvalidInputError, match="simplex"):
            ema_update(np.array([0.6, 0.6]), np.array([0.5, 0.5]), 0.9)

    def test_rejects_momentum_outside_unit_interval(self):
        """Test that momentum above 1 is refused."""
        with pytest.raises(InvalidInputError, match="momentum"):
            ema_update(np.array([1.0, 0.0]), np.array([0.5, 0.5]), 1.1)


@pytest.mark.parametrize("t, expected", [
    (np.full(10, 0.1), 0.1),
    (np.array([0.0, 1.0, 0.0]), 1.0),
    (np.array([0.7, 0.2, 0.1]), 0.7),
])
def test_sample_weight(t, expected):
    """Test that the weight is the largest target entry."""
    assert sample_weight(t) == pytest.approx(expected)


class TestTargetStore:

    def test_update_touches_only_batch_rows(self, toy_dataset):
        """Test that a batch update leaves the other samples alone."""
        store = init_targets(toy_dataset)
        before = store.targets.copy()
        ids = np.array([4, 9])
        probs = np.full((2, 3), 1.0 / 3.0)

        store.update(ids, probs, 0.5, epoch=3)

        rest = np.setdiff1d(np.arange(store.n), ids)
        assert np.array_equal(store.targets[rest], before[rest])
        np.testing.assert_allclose(store.targets[ids], 0.5 * before[ids] + 0.5 / 3.0)
        assert store.last_updated_epoch == 3

    def test_rows_returns_targets_and_weights(self, toy_dataset):
        """Test that rows returns targets with their max-entry weights."""
        store = init_targets(toy_dataset)
        store.targets[2] = [0.6, 0.3, 0.1]
        t, w = store.rows(np.array([2, 0]))
        assert np.array_equal(t[0], [0.6, 0.3, 0.1])
        assert np.array_equal(w, [0.6, 1.0])

    def test_update_rejects_misaligned_predictions(self, toy_dataset):
        """Test that predictions of the wrong shape are refused."""
        store = init_targets(toy_dataset)
        with pytest.raises(InvalidInputError):
            store.update(np.array([0, 1]), np.full((3, 3), 1.0 / 3.0), 0.9, epoch=1)

    def test_invariants_hold_after_init(self, toy_dataset):
        """Test that fresh targets satisfy the store invariants."""
        init_targets(toy_dataset).check_invariants()

    def test_invariant_violation_off_simplex(self, toy_dataset):
        """Test that a row summing past 1 violates the invariants."""
        store = init_targets(toy_dataset)
        store.targets[0] = [0.5, 0.5, 1e-6]
        with pytest.raises(InvariantViolation, match="simplex"):
            store.check_invariants()

    def test_invariant_violation_negative_entry(self, toy_dataset):
        """Test that a negative entry violates the invariants."""
        store = init_targets(toy_dataset)
        store.targets[0] = [1.1, -0.1, 0.0]
        with pytest.raises(InvariantViolation, match="negative"):
            store.check_invariants()

    def test_recovered_labels_break_ties_low(self):
        """Test that recovered labels take the lowest index on ties."""
        store = TargetStore(targets=np.array([[0.5, 0.5], [0.2, 0.8]]))
        assert np.array_equal(store.recovered_labels, [0, 1])


class TestCheckpoint:
    """SATT files."""

    def test_round_trip(self, tmp_path, rng):
        """Test that a checkpoint reloads targets and epoch exactly."""
        store = TargetStore(targets=rng.dirichlet(np.ones(4), size=7), last_updated_epoch=42)
        path = tmp_path / "targets.satt"
        store.save(path)

        loaded = TargetStore.load(path)

        assert np.array_equal(loaded.targets, store.targets)
        assert loaded.last_updated_epoch == 42

    def test_header_layout(self, tmp_path):
        """Test the SATT header fields."""
        path = tmp_path / "targets.satt"
        TargetStore(targets=np.eye(3), last_updated_epoch=5).save(path)
        raw = path.read_bytes()
        assert raw[:4] == b"SATT"
        assert len(raw) == 4 + 4 + 8 + 4 + 4 + 8 * 9

    def test_rejects_truncated_file(self, tmp_path):
        """Test that a truncated checkpoint is refused."""
        path = tmp_path / "targets.satt"
        TargetStore(targets=np.eye(3)).save(path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(DatasetFormatError):
            TargetStore.load(path)


class TestSatConfig:

    def test_defaults(self):
        """Test the default warm-up and momentum."""
        cfg = SatConfig()
        assert (cfg.start_epoch, cfg.momentum) == (60, 0.9)
        assert cfg.validate() == []

    def test_update_condition_is_strict(self):
        """Test that targets start moving only after the warm-up epoch."""
        cfg = SatConfig(start_epoch=60)
        assert not cfg.active(60)
        assert cfg.active(61)

    def test_validate(self):
        """Test that both out-of-range fields are reported."""
        errors = SatConfig(start_epoch=-1, momentum=1.5).validate()
        assert len(errors) == 2
