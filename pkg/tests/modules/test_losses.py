"""
Tests for the self-adaptive, ERM, SCE, selective and KL losses and their
logit gradients.
"""

import math

import numpy as np
import pytest

from satlab.errors import DivergenceError, InvalidInputError
from satlab.modules.datasets import one_hot
from satlab.modules.losses import (
    SceWeights,
    erm_logit_grad,
    erm_loss,
    kl_logit_grads,
    kl_rows,
    normalized_weights,
    sat_logit_grad,
    sat_loss,
    sce_sat_logit_grad,
    sce_sat_loss,
    selective_logit_grad,
    selective_loss,
)
from satlab.modules.numeric import MlpSpec, finite_diff_check, head_loss, init_model, softmax

GRADIENT_TOL = 1e-4


def sat_head(logits, batch):
    p = softmax(logits)
    return sat_loss(p, batch.targets, batch.weights), sat_logit_grad(p, batch.targets, batch.weights)


def erm_head(logits, batch):
    p = softmax(logits)
    return erm_loss(p, batch.labels), erm_logit_grad(p, batch.labels)


def sce_head(logits, batch):
    p = softmax(logits)
    return (
        sce_sat_loss(p, batch.targets, batch.weights),
        sce_sat_logit_grad(p, batch.targets, batch.weights),
    )


def selective_head(logits, batch):
    p = softmax(logits)
    labels = np.argmax(batch.labels, axis=1)
    return selective_loss(p, batch.targets, labels), selective_logit_grad(p, batch.targets, labels)


class TestSatLoss:
    """Normalized weighted soft cross entropy."""

    def test_scalar_example(self):
        """Test the self-adaptive loss on one two-class sample."""
        p = softmax(np.array([[2.0, 0.0]]))
        t = np.array([[0.95, 0.05]])
        assert sat_loss(p, t, t.max(axis=1)) == pytest.approx(0.2269, abs=1e-4)

    def test_one_hot_targets_reduce_to_mean_cross_entropy(self, rng):
        """Test that one-hot targets with unit weights give mean cross entropy."""
        p = softmax(rng.normal(size=(6, 4)))
        labels = one_hot(rng.integers(0, 4, size=6), 4)
        expected = -np.mean(np.log(p[labels == 1.0]))
        assert sat_loss(p, labels, np.ones(6)) == pytest.approx(expected)
        assert sat_loss(p, labels, np.ones(6)) == erm_loss(p, labels)

    def test_duplicating_a_sample_leaves_loss_unchanged(self, rng):
        """Test that duplicating the batch leaves the normalized loss unchanged."""
        p = softmax(rng.normal(size=(3, 4)))
        t = rng.dirichlet(np.ones(4), size=3)
        w = t.max(axis=1)
        p2, t2, w2 = np.vstack([p, p]), np.vstack([t, t]), np.concatenate([w, w])
        assert sat_loss(p2, t2, w2) == pytest.approx(sat_loss(p, t, w))

    def test_weights_scale_out(self, rng):
        """Test that scaling every weight does not change the loss."""
        p = softmax(rng.normal(size=(5, 3)))
        t = rng.dirichlet(np.ones(3), size=5)
        w = t.max(axis=1)
        assert sat_loss(p, t, 3.0 * w) == pytest.approx(sat_loss(p, t, w))

    def test_zero_weights_diverge(self):
        """Test that an all-zero weight batch is reported as divergence."""
        p = np.full((2, 2), 0.5)
        with pytest.raises(DivergenceError):
            sat_loss(p, p, np.zeros(2))

    def test_non_finite_probabilities_diverge(self):
        """Test that NaN probabilities are reported as divergence."""
        p = np.array([[np.nan, 0.5]])
        with pytest.raises(DivergenceError):
            sat_loss(p, np.array([[0.5, 0.5]]), np.ones(1))

    def test_shape_mismatch_rejected(self):
        """Test that probabilities and targets must have the same shape."""
        with pytest.raises(InvalidInputError):
            sat_loss(np.full((2, 3), 1 / 3), np.full((2, 2), 0.5), np.ones(2))


class TestUniformWeights:
    """Moving-average targets with every sample counted equally."""

    def test_each_sample_weighs_one_over_batch_size(self, rng):
        """Test that without reweighting every sample gets weight 1/|B|."""
        w = rng.dirichlet(np.ones(4), size=7).max(axis=1)
        assert np.array_equal(normalized_weights(w, reweight=False), np.full(7, 1.0 / 7))
        assert normalized_weights(w) == pytest.approx(w / w.sum())

    def test_loss_is_mean_soft_cross_entropy(self, rng):
        """Test that the unweighted self-adaptive loss averages the per-sample soft cross entropy."""
        p = softmax(rng.normal(size=(5, 3)))
        t = rng.dirichlet(np.ones(3), size=5)
        expected = -np.mean((t * np.log(p)).sum(axis=1))
        assert sat_loss(p, t, t.max(axis=1), reweight=False) == pytest.approx(expected)
        assert sat_loss(p, t, t.max(axis=1), reweight=False) == sat_loss(p, t, np.ones(5))

    def test_gradient_ignores_confidence(self, rng):
        """Test that the unweighted gradient does not depend on the weights passed in."""
        p = softmax(rng.normal(size=(4, 3)))
        t = rng.dirichlet(np.ones(3), size=4)
        a = sat_logit_grad(p, t, t.max(axis=1), reweight=False)
        b = sat_logit_grad(p, t, np.ones(4), reweight=False)
        assert np.array_equal(a, b)

    def test_sce_variant(self, rng):
        """Test that the symmetric variant also drops the confidence weights."""
        p = softmax(rng.normal(size=(4, 3)))
        t = rng.dirichlet(np.ones(3), size=4)
        sce = SceWeights(w1=1.0, w2=0.1)
        assert sce_sat_loss(p, t, t.max(axis=1), sce, reweight=False) == pytest.approx(
            sce_sat_loss(p, t, np.ones(4), sce)
        )
        assert np.allclose(
            sce_sat_logit_grad(p, t, t.max(axis=1), sce, reweight=False),
            sce_sat_logit_grad(p, t, np.ones(4), sce),
        )


class TestErmLoss:

    def test_perfect_prediction(self):
        """Test that a perfect prediction costs nothing."""
        labels = one_hot(np.array([0, 2]), 3)
        assert erm_loss(labels, labels) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_prediction(self):
        """Test that a uniform prediction over five classes costs log 5."""
        labels = one_hot(np.array([0, 3, 1]), 5)
        assert erm_loss(np.full((3, 5), 0.2), labels) == pytest.approx(math.log(5))

    def test_log_floor(self):
        """Test that a zero probability is floored at 1e-12."""
        labels = one_hot(np.array([1]), 2)
        assert erm_loss(np.array([[1.0, 0.0]]), labels) == pytest.approx(-math.log(1e-12))


class TestSceLoss:
    """Forward plus down-weighted reverse cross entropy."""

    def test_zero_reverse_weight_matches_sat(self, rng):
        """Test that without the reverse term SCE equals the self-adaptive loss."""
        p = softmax(rng.normal(size=(4, 3)))
        t = rng.dirichlet(np.ones(3), size=4)
        w = t.max(axis=1)
        assert sce_sat_loss(p, t, w, SceWeights(w1=1.0, w2=0.0)) == pytest.approx(sat_loss(p, t, w))

    def test_perfect_agreement(self):
        """Test that SCE vanishes when predictions equal one-hot targets."""
        t = one_hot(np.array([1, 0]), 2)
        assert sce_sat_loss(t, t, np.ones(2)) == pytest.approx(0.0, abs=1e-12)

    def test_reverse_term_uses_target_floor(self):
        """Test that the reverse term floors zero targets at 1e-4."""
        p = np.array([[0.5, 0.5]])
        t = np.array([[1.0, 0.0]])
        value = sce_sat_loss(p, t, np.ones(1), SceWeights(w1=0.0, w2=0.1))
        assert value == pytest.approx(-0.1 * (0.5 * math.log(1.0) + 0.5 * math.log(1e-4)))
        assert value == pytest.approx(0.4605, abs=1e-4)


class TestSelectiveLoss:
    """c + 1 outputs, the last one abstains."""

    def test_full_confidence_is_cross_entropy_on_true_class(self):
        """Test that full target confidence reduces to cross entropy on the label."""
        p = np.array([[0.7, 0.2, 0.1]])
        t = np.array([[1.0, 0.0]])
        assert selective_loss(p, t, np.array([0])) == pytest.approx(-math.log(0.7))

    def test_zero_confidence_pushes_to_abstain(self):
        """Test that zero target confidence puts all mass on abstaining."""
        p = np.array([[0.7, 0.2, 0.1]])
        t = np.array([[0.0, 1.0]])
        assert selective_loss(p, t, np.array([0])) == pytest.approx(-math.log(0.1))

    def test_scalar_example(self):
        """Test the selective loss on one sample with split confidence."""
        p = np.array([[0.6, 0.2, 0.2]])
        t = np.array([[0.5, 0.5]])
        value = selective_loss(p, t, np.array([0]))
        assert value == pytest.approx(-(0.5 * math.log(0.6) + 0.5 * math.log(0.2)))
        assert value == pytest.approx(1.0601, abs=1e-4)

    def test_one_hot_targets_match_erm_on_real_classes(self, rng):
        """Test that one-hot targets match ERM on the real classes."""
        p = softmax(rng.normal(size=(5, 4)))
        labels = rng.integers(0, 3, size=5)
        t = one_hot(labels, 3)
        expected = -np.mean(np.log(p[np.arange(5), labels]))
        assert selective_loss(p, t, labels) == pytest.approx(expected)

    def test_rejects_wrong_output_count(self):
        """Test that the selective loss needs c+1 outputs."""
        with pytest.raises(InvalidInputError, match="c\\+1"):
            selective_loss(np.full((1, 2), 0.5), np.array([[1.0, 0.0]]), np.array([0]))


class TestKl:

    def test_zero_for_identical_rows(self, rng):
        """Test that KL of a distribution with itself is zero."""
        p = softmax(rng.normal(size=(4, 5)))
        assert np.allclose(kl_rows(p, p), 0.0, atol=1e-15)

    def test_non_negative(self, rng):
        """Test that KL is never negative."""
        p = softmax(rng.normal(size=(50, 5)))
        q = softmax(rng.normal(size=(50, 5)))
        assert np.all(kl_rows(p, q) >= 0.0)

    def test_logit_gradients_match_finite_differences(self, rng):
        """Test both KL logit gradients against central differences."""
        a, b = rng.normal(size=(1, 4)), rng.normal(size=(1, 4))
        d_clean, d_perturbed = kl_logit_grads(softmax(a), softmax(b))
        h = 1e-6
        for j in range(4):
            e = np.zeros((1, 4))
            e[0, j] = h
            num_a = (kl_rows(softmax(a + e), softmax(b)) - kl_rows(softmax(a - e), softmax(b)))[0] / (2 * h)
            num_b = (kl_rows(softmax(a), softmax(b + e)) - kl_rows(softmax(a), softmax(b - e)))[0] / (2 * h)
            assert d_clean[0, j] == pytest.approx(num_a, abs=1e-7)
            assert d_perturbed[0, j] == pytest.approx(num_b, abs=1e-7)


class TestGradientSuite:
    """Every loss matches central differences on a random two-layer MLP."""

    @pytest.mark.parametrize("head", [sat_head, erm_head, sce_head], ids=["sat", "erm", "sce"])
    def test_classification_losses(self, head, small_model, soft_batch):
        """Test each classification head against the finite-difference gradient."""
        assert finite_diff_check(small_model, head_loss(head), soft_batch, h=1e-5) < GRADIENT_TOL

    def test_selective_loss(self, rng, soft_batch):
        """Test the selective head against the finite-difference gradient."""
        model = init_model(MlpSpec(input_dim=5, hidden_widths=(8, 8), num_classes=4, abstain=True), seed=3)
        assert finite_diff_check(model, head_loss(selective_head), soft_batch, h=1e-5) < GRADIENT_TOL

    def test_gradients_ignore_floored_entries(self):
        """Test that entries at the probability floor contribute no gradient."""
        p = np.array([[1.0, 0.0]])
        t = np.array([[0.5, 0.5]])
        g = sat_logit_grad(p, t, np.ones(1))
        assert np.all(np.isfinite(g))
        np.testing.assert_allclose(g, [[0.0, 0.0]], atol=1e-12)
