"""Tests for the training objectives, numpy contracts and tensor graphs."""

import numpy as np
import pytest
from conftest import central_diff_at, rel_err

from edmlab.autodiff import Tensor
from edmlab.backbone import (
    backward,
    forward_logits,
    forward_logits_t,
    init_model,
    param_tensors,
    softmax_probs,
)
from edmlab.benchgen import DatasetManifest, NoiseSpec
from edmlab.losses import (
    EPS,
    LossWeights,
    ce_batch_loss_t,
    ce_loss,
    dm_batch_loss_t,
    dm_loss,
    evidence,
    mse_batch_loss_t,
    reg_loss,
    reg_loss_t,
    sl_batch_loss_t,
    sl_dataset_loss,
    sl_loss,
    sl_losses_from_logits,
    softmax_t,
    temp_sharpen,
    unlabeled_mse,
)


class TestEvidence:
    def test_zero_logits(self):
        ev = evidence(np.array([0.0, 0.0]))
        np.testing.assert_array_equal(ev.alpha, [1.0, 1.0])
        assert ev.strength == 2.0

    def test_mixed_logits(self):
        ev = evidence(np.array([2.0, -1.0]))
        np.testing.assert_array_equal(ev.alpha, [3.0, 1.0])
        assert ev.strength == 4.0

    def test_rectifier_floor(self):
        ev = evidence(np.array([-5.0, -5.0, -5.0]))
        np.testing.assert_array_equal(ev.alpha, [1.0, 1.0, 1.0])
        assert ev.strength == 3.0

    def test_alpha_never_below_one(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            ev = evidence(rng.normal(scale=5, size=6))
            assert np.all(ev.alpha >= 1.0)
            assert abs(ev.strength - ev.alpha.sum()) <= 1e-9


class TestSlLoss:
    def test_hand_values(self):
        assert abs(sl_loss(np.array([0.0, 0.0]), np.array([1.0, 0.0])) - 2 / 3) <= 1e-9
        assert abs(sl_loss(np.array([2.0, -1.0]), np.array([1.0, 0.0])) - 0.2) <= 1e-9
        assert abs(sl_loss(np.array([2.0, -1.0]), np.array([0.0, 1.0])) - 1.2) <= 1e-9

    def test_confidence_ordering(self):
        """Confident-right < zero-evidence < confident-wrong."""
        right = sl_loss(np.array([2.0, -1.0]), np.array([1.0, 0.0]))
        blank = sl_loss(np.array([0.0, 0.0]), np.array([1.0, 0.0]))
        wrong = sl_loss(np.array([2.0, -1.0]), np.array([0.0, 1.0]))
        assert right < blank < wrong

    def test_positive_and_finite(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            k = int(rng.integers(2, 8))
            logits = rng.normal(scale=4, size=k)
            y = np.zeros(k)
            y[rng.integers(0, k)] = 1.0
            val = sl_loss(logits, y)
            assert np.isfinite(val) and val > 0

    def test_rejects_non_one_hot(self):
        with pytest.raises(ValueError):
            sl_loss(np.array([0.0, 0.0]), np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            sl_loss(np.array([0.0, 0.0]), np.array([1.0, 1.0]))

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(2)
        logits = rng.normal(scale=3, size=(40, 5))
        labels = np.eye(5)[rng.integers(0, 5, size=40)]
        vec = sl_losses_from_logits(logits, labels)
        ref = [sl_loss(l, y) for l, y in zip(logits, labels)]
        np.testing.assert_allclose(vec, ref, rtol=1e-12)


class TestSlDatasetLoss:
    @staticmethod
    def _manifest(features, observed, k):
        n = len(observed)
        return DatasetManifest(
            features=np.asarray(features, np.float32),
            observed=np.asarray(observed, np.int32),
            true_class=np.asarray(observed, np.int32),
            provenance=np.zeros(n, np.uint8),
            num_classes=k,
            noise_spec=NoiseSpec(rho=0.0, omega=0.0, seed=0),
        )

    @staticmethod
    def _fixed_logit_model():
        """A linear map sending x=[1,0] to logits [2,-1]."""
        from edmlab.backbone import ModelParams
        return ModelParams(
            widths=(2, 2),
            weights=[np.array([[2.0, -1.0], [0.0, 0.0]])],
            biases=[np.zeros(2)],
            role="NetS",
        )

    def test_two_sample_mean(self):
        """Confident-right and confident-wrong samples average to 0.7."""
        m = self._fixed_logit_model()
        ds = self._manifest([[1, 0], [1, 0]], [0, 1], k=2)
        mean, per = sl_dataset_loss(m, ds)
        np.testing.assert_allclose(per, [0.2, 1.2], atol=1e-9)
        assert abs(mean - 0.7) <= 1e-9

    def test_single_sample(self):
        m = self._fixed_logit_model()
        ds = self._manifest([[1, 0]], [0], k=2)
        mean, per = sl_dataset_loss(m, ds)
        assert abs(mean - per[0]) <= 1e-12
        assert abs(mean - 0.2) <= 1e-9

    def test_duplication_keeps_mean(self):
        m = init_model((4, 8, 3), seed=0, role="NetS")
        rng = np.random.default_rng(3)
        feats = rng.normal(size=(20, 4))
        obs = rng.integers(0, 3, size=20)
        ds = self._manifest(feats, obs, k=3)
        ds2 = self._manifest(np.tile(feats, (2, 1)), np.tile(obs, 2), k=3)
        mean1, _ = sl_dataset_loss(m, ds)
        mean2, _ = sl_dataset_loss(m, ds2)
        assert abs(mean1 - mean2) <= 1e-9

    def test_empty_dataset_rejected(self):
        m = init_model((4, 8, 3), seed=0)
        ds = self._manifest(np.zeros((0, 4)), np.zeros(0, int), k=3)
        with pytest.raises(ValueError):
            sl_dataset_loss(m, ds)


class TestCeLoss:
    def test_hand_values(self):
        assert abs(ce_loss(np.array([0.5, 0.5]), np.array([1.0, 0.0])) - np.log(2)) <= 1e-9
        uniform10 = np.full(10, 0.1)
        onehot = np.eye(10)[3]
        assert abs(ce_loss(uniform10, onehot) - np.log(10)) <= 1e-9
        assert abs(ce_loss(np.array([0.9, 0.1]), np.array([1.0, 0.0])) + np.log(0.9)) <= 1e-9

    def test_soft_labels_supported(self):
        p = np.array([0.5, 0.5])
        y = np.array([0.25, 0.75])
        assert abs(ce_loss(p, y) - np.log(2)) <= 1e-9

    def test_floor_prevents_infinity(self):
        val = ce_loss(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        assert np.isfinite(val)
        assert abs(val + np.log(EPS)) <= 1e-6

    def test_rejects_non_distribution(self):
        with pytest.raises(ValueError):
            ce_loss(np.array([0.9, 0.5]), np.array([1.0, 0.0]))


class TestUnlabeledMse:
    def test_hand_values(self):
        p = np.array([0.3, 0.7])
        assert unlabeled_mse(p, p) == 0.0
        assert abs(unlabeled_mse(np.array([1.0, 0.0]), np.array([0.0, 1.0])) - 2.0) <= 1e-9
        assert abs(unlabeled_mse(np.array([0.75, 0.25]),
                                 np.array([0.5, 0.5])) - 0.125) <= 1e-9

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            unlabeled_mse(np.array([1.0, 0.0]), np.array([0.5, 0.25, 0.25]))


class TestRegLoss:
    def test_uniform_is_zero(self):
        assert abs(reg_loss(np.full(4, 0.25))) <= 1e-12

    def test_hand_value(self):
        expected = 0.5 * np.log(0.5 / 0.75) + 0.5 * np.log(0.5 / 0.25)
        assert abs(reg_loss(np.array([0.75, 0.25])) - expected) <= 1e-9
        assert abs(expected - 0.5 * np.log(4 / 3)) <= 1e-12

    def test_monotone_in_imbalance(self):
        values = [reg_loss(np.array([0.5 + t, 0.5 - t]))
                  for t in (0.0, 0.2, 0.4, 0.499, 0.5 - EPS)]
        assert all(a < b for a, b in zip(values, values[1:]))
        assert values[-1] > 10.0

    def test_nonnegative_on_random_distributions(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            p = rng.dirichlet(np.ones(6))
            assert reg_loss(p) >= -1e-12


class TestDmLoss:
    def test_weighted_sum(self):
        w = LossWeights(lambda_u=25.0, lambda_reg=1.0)
        val = dm_loss(1.0, 0.1, np.full(4, 0.25), w)
        assert abs(val - 3.5) <= 1e-9

    def test_zero_weights_leave_labeled_term(self):
        w = LossWeights(lambda_u=0.0, lambda_reg=0.0)
        assert abs(dm_loss(1.25, 9.9, np.array([0.9, 0.1]), w) - 1.25) <= 1e-12

    def test_reg_contribution_linear(self):
        pbar = np.array([0.7, 0.3])
        base = dm_loss(0.0, 0.0, pbar, LossWeights(lambda_u=0.0, lambda_reg=1.0))
        double = dm_loss(0.0, 0.0, pbar, LossWeights(lambda_u=0.0, lambda_reg=2.0))
        assert abs(double - 2 * base) <= 1e-12

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(lambda_u=-1.0, lambda_reg=0.0)


class TestTempSharpen:
    def test_identity_at_unit_temperature(self):
        p = np.array([0.2, 0.3, 0.5])
        np.testing.assert_allclose(temp_sharpen(p, 1.0), p, atol=1e-12)

    def test_hand_value(self):
        out = temp_sharpen(np.array([0.8, 0.2]), 0.5)
        np.testing.assert_allclose(out, [16 / 17, 1 / 17], atol=1e-12)

    def test_uniform_fixed_point(self):
        p = np.full(5, 0.2)
        np.testing.assert_allclose(temp_sharpen(p, 0.25), p, atol=1e-12)

    def test_preserves_argmax_and_concentrates(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            p = rng.dirichlet(np.ones(6))
            out = temp_sharpen(p, 0.5)
            assert out.argmax() == p.argmax()
            assert out.max() >= p.max() - 1e-12
            assert abs(out.sum() - 1.0) <= 1e-9

    def test_batched_rows(self):
        p = np.array([[0.8, 0.2], [0.5, 0.5]])
        out = temp_sharpen(p, 0.5)
        np.testing.assert_allclose(out[0], [16 / 17, 1 / 17], atol=1e-12)
        np.testing.assert_allclose(out[1], [0.5, 0.5], atol=1e-12)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            temp_sharpen(np.array([0.5, 0.5]), 0.0)
        with pytest.raises(ValueError):
            temp_sharpen(np.array([0.0, 0.0]), 0.5)


class TestTensorVersionsAgree:
    """The differentiable losses must equal their numpy contract values."""

    def setup_method(self):
        rng = np.random.default_rng(6)
        self.logits = rng.normal(scale=3, size=(16, 4))
        self.labels = np.eye(4)[rng.integers(0, 4, size=16)]
        self.soft = rng.dirichlet(np.ones(4), size=16)

    def test_softmax_t(self):
        out = softmax_t(Tensor(self.logits))
        np.testing.assert_allclose(out.value, softmax_probs(self.logits), rtol=1e-12)

    def test_sl_batch(self):
        got = sl_batch_loss_t(Tensor(self.logits), self.labels).value
        want = np.mean([sl_loss(l, y) for l, y in zip(self.logits, self.labels)])
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_ce_batch(self):
        probs = softmax_probs(self.logits)
        got = ce_batch_loss_t(softmax_t(Tensor(self.logits)), self.soft).value
        want = np.mean([ce_loss(p, y) for p, y in zip(probs, self.soft)])
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_mse_batch(self):
        probs = softmax_probs(self.logits)
        got = mse_batch_loss_t(softmax_t(Tensor(self.logits)), self.soft).value
        want = np.mean([unlabeled_mse(y, p) for p, y in zip(probs, self.soft)])
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_reg_batch(self):
        probs = softmax_probs(self.logits)
        got = reg_loss_t(softmax_t(Tensor(self.logits))).value
        np.testing.assert_allclose(got, reg_loss(probs.mean(axis=0)), rtol=1e-12)

    def test_dm_batch_combination(self):
        w = LossWeights(lambda_u=25.0, lambda_reg=1.0)
        lx = Tensor(self.logits[:10])
        lu = Tensor(self.logits[10:])
        total, comps = dm_batch_loss_t(lx, self.labels[:10], lu, self.soft[10:], w)
        probs = softmax_probs(self.logits)
        want_x = np.mean([ce_loss(p, y)
                          for p, y in zip(probs[:10], self.labels[:10])])
        want_u = np.mean([unlabeled_mse(y, p)
                          for p, y in zip(probs[10:], self.soft[10:])])
        want_reg = reg_loss(probs.mean(axis=0))
        np.testing.assert_allclose(comps["labeled"], want_x, rtol=1e-12)
        np.testing.assert_allclose(comps["unlabeled"], want_u, rtol=1e-12)
        np.testing.assert_allclose(comps["regularizer"], want_reg, rtol=1e-12)
        np.testing.assert_allclose(total.value, want_x + 25 * want_u + want_reg,
                                   rtol=1e-12)

    def test_dm_batch_without_unlabeled_part(self):
        w = LossWeights(lambda_u=25.0, lambda_reg=1.0)
        lx = Tensor(self.logits)
        total, comps = dm_batch_loss_t(lx, self.labels, None, None, w)
        assert comps["unlabeled"] == 0.0
        probs = softmax_probs(self.logits)
        want = np.mean([ce_loss(p, y) for p, y in zip(probs, self.labels)]) \
            + reg_loss(probs.mean(axis=0))
        np.testing.assert_allclose(total.value, want, rtol=1e-12)


class TestLossGradients:
    """Quick finite-difference checks through the backbone for each loss."""

    def _check(self, make_loss, seed):
        rng = np.random.default_rng(seed)
        m = init_model((5, 12, 4), seed=seed, role="NetS")
        x = rng.normal(size=(8, 5))

        def value():
            return float(make_loss(Tensor(forward_logits(m, x))).value)

        ts = param_tensors(m)
        loss = make_loss(forward_logits_t(ts, x))
        grads = backward(ts, loss)

        flat = m.flat()
        coords = []
        for ai, arr in enumerate(flat):
            picks = rng.choice(arr.size, size=min(8, arr.size), replace=False)
            coords.extend((ai, int(i)) for i in picks)
        numeric = central_diff_at(value, flat, coords)
        analytic = np.array([grads[ai].reshape(-1)[fi] for ai, fi in coords])
        assert rel_err(analytic, numeric).max() <= 1e-3

    def test_sl_gradcheck(self):
        labels = np.eye(4)[np.random.default_rng(7).integers(0, 4, size=8)]
        self._check(lambda lg: sl_batch_loss_t(lg, labels), seed=7)

    def test_dm_gradcheck(self):
        rng = np.random.default_rng(8)
        labels = np.eye(4)[rng.integers(0, 4, size=8)]
        targets = rng.dirichlet(np.ones(4), size=8)
        w = LossWeights(lambda_u=25.0, lambda_reg=1.0)

        def make(lg):
            total, _ = dm_batch_loss_t(lg, labels, lg, targets, w)
            return total

        self._check(make, seed=8)
