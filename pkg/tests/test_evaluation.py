"""Tests for the evaluation harness: accuracy, split confusion, exports."""

import numpy as np
import pytest

from edmlab.backbone import ModelParams, ROLE_NETD, forward_logits, init_model
from edmlab.benchgen import (
    DatasetManifest,
    NoiseSpec,
    Provenance,
    inject_noise,
    make_open_pool,
    make_synthetic_clean,
)
from edmlab.evaluation import (
    AccuracyReport,
    GROUP_ORDER,
    SplitConfusion,
    export_features,
    export_loss_histogram,
    export_posteriors,
    predicted_groups,
    split_confusion,
)
from edmlab.evaluation import test_accuracy as model_accuracy
from edmlab.gmm import PosteriorSplit


def _clean_blobs(per_class=50, seed=0):
    return make_synthetic_clean(4, per_class, 8, 0.5, seed=seed)


def _constant_logit_model(dim, k):
    """All-zero single-layer model: every sample gets identical logits."""
    return ModelParams(
        widths=(dim, k),
        weights=[np.zeros((dim, k))],
        biases=[np.zeros(k)],
        role=ROLE_NETD,
    )


def _split_from_pred(pred_groups):
    """One-hot posterior triples that argmax back to the given groups."""
    n = len(pred_groups)
    w = np.zeros(n)
    w_op = np.zeros(n)
    w_cl = np.zeros(n)
    for i, g in enumerate(pred_groups):
        if g == Provenance.CLEAN:
            w[i] = 1.0
        elif g == Provenance.OPEN:
            w_op[i] = 1.0
        else:
            w_cl[i] = 1.0
    return PosteriorSplit(w=w, w_op=w_op, w_cl=w_cl)


class TestTestAccuracy:
    def test_perfect_model_scores_one(self):
        """Identity scorer on class-indicator features is exactly right."""
        k = 4
        true = np.tile(np.arange(k, dtype=np.int32), 25)
        ds = DatasetManifest(
            features=np.eye(k, dtype=np.float32)[true],
            observed=true.copy(),
            true_class=true.copy(),
            provenance=np.zeros(len(true), dtype=np.uint8),
            num_classes=k,
            noise_spec=NoiseSpec(rho=0.0, omega=0.0),
        )
        model = ModelParams(
            widths=(k, k),
            weights=[np.eye(k, dtype=np.float64)],
            biases=[np.zeros(k)],
            role=ROLE_NETD,
        )
        assert model_accuracy(model, ds) == 1.0

    def test_constant_logits_tiebreak_to_class_zero(self):
        """With identical logits the argmax lands on the first class."""
        ds = _clean_blobs(per_class=25)
        model = _constant_logit_model(8, 4)
        acc = model_accuracy(model, ds)
        share_zero = np.mean(ds.true_class == 0)
        assert acc == pytest.approx(share_zero)

    def test_sample_order_invariance(self):
        ds = _clean_blobs(per_class=50)
        model = init_model((8, 16, 4), seed=3)
        perm = np.random.default_rng(0).permutation(len(ds))
        shuffled = DatasetManifest(
            features=ds.features[perm],
            observed=ds.observed[perm],
            true_class=ds.true_class[perm],
            provenance=ds.provenance[perm],
            num_classes=ds.num_classes,
            noise_spec=ds.noise_spec,
        )
        assert model_accuracy(model, ds) == pytest.approx(
            model_accuracy(model, shuffled))

    def test_rejects_empty_test_set(self):
        ds = _clean_blobs(per_class=25)
        empty = DatasetManifest(
            features=ds.features[:0],
            observed=ds.observed[:0],
            true_class=ds.true_class[:0],
            provenance=ds.provenance[:0],
            num_classes=ds.num_classes,
            noise_spec=ds.noise_spec,
        )
        model = init_model((8, 16, 4), seed=0)
        with pytest.raises(ValueError):
            model_accuracy(model, empty)

    def test_rejects_noisy_test_set(self):
        clean = _clean_blobs(per_class=25)
        pool = make_open_pool(2, 100, 8, 0.5, 8.0, seed=9)
        noisy = inject_noise(clean, pool, NoiseSpec(rho=0.4, omega=0.5, seed=1))
        model = init_model((8, 16, 4), seed=0)
        with pytest.raises(ValueError):
            model_accuracy(model, noisy)


class TestPredictedGroups:
    def test_one_hot_rows_round_trip(self):
        want = [Provenance.CLEAN, Provenance.CLOSED, Provenance.OPEN,
                Provenance.CLEAN]
        split = _split_from_pred(want)
        np.testing.assert_array_equal(predicted_groups(split),
                                      [int(p) for p in want])

    def test_uniform_tie_prefers_clean(self):
        third = np.full(3, 1.0 / 3.0)
        split = PosteriorSplit(w=third, w_op=third, w_cl=third)
        np.testing.assert_array_equal(predicted_groups(split),
                                      [int(Provenance.CLEAN)] * 3)

    def test_open_closed_tie_prefers_open(self):
        split = PosteriorSplit(w=np.array([0.0]), w_op=np.array([0.5]),
                               w_cl=np.array([0.5]))
        assert predicted_groups(split)[0] == int(Provenance.OPEN)


class TestSplitConfusion:
    def _noisy(self):
        clean = _clean_blobs(per_class=50)
        pool = make_open_pool(2, 200, 8, 0.5, 8.0, seed=9)
        return inject_noise(clean, pool, NoiseSpec(rho=0.6, omega=0.5, seed=1))

    def test_perfect_prediction_is_diagonal(self):
        ds = self._noisy()
        split = _split_from_pred(list(ds.provenance))
        conf = split_confusion(split, ds)
        assert np.trace(conf.matrix) == len(ds)
        assert conf.balanced_accuracy == 1.0
        np.testing.assert_array_equal(np.diag(conf.matrix),
                                      [ds.counts[int(p)] for p in GROUP_ORDER])

    def test_all_ties_fill_the_clean_column(self):
        ds = self._noisy()
        third = np.full(len(ds), 1.0 / 3.0)
        conf = split_confusion(PosteriorSplit(w=third, w_op=third, w_cl=third), ds)
        assert conf.matrix[:, 0].sum() == len(ds)
        assert conf.matrix[:, 1:].sum() == 0
        # each group's recall: clean gets 1, the others 0 -> mean 1/3
        assert conf.balanced_accuracy == pytest.approx(1.0 / 3.0)

    def test_marginals_match_population(self):
        ds = self._noisy()
        rng = np.random.default_rng(5)
        triples = rng.dirichlet(np.ones(3), size=len(ds))
        split = PosteriorSplit(w=triples[:, 0], w_op=triples[:, 1],
                               w_cl=triples[:, 2])
        conf = split_confusion(split, ds)
        assert conf.matrix.sum() == len(ds)
        counts = ds.counts
        np.testing.assert_array_equal(conf.matrix.sum(axis=1),
                                      [counts[int(p)] for p in GROUP_ORDER])

    def test_absent_group_is_skipped_in_balance(self):
        """A clean-only dataset scores on the clean recall alone."""
        ds = _clean_blobs(per_class=30)
        split = _split_from_pred(list(ds.provenance))
        conf = split_confusion(split, ds)
        assert conf.balanced_accuracy == 1.0
        assert np.isnan(conf.recall[1]) and np.isnan(conf.recall[2])

    def test_length_mismatch_rejected(self):
        ds = self._noisy()
        split = _split_from_pred(list(ds.provenance[:-1]))
        with pytest.raises(ValueError):
            split_confusion(split, ds)

    def test_empty_confusion_rejected(self):
        with pytest.raises(ValueError):
            SplitConfusion(matrix=np.zeros((3, 3), dtype=np.int64))


class TestAccuracyReport:
    def test_best_last_gap(self):
        rep = AccuracyReport([0.5, 0.9, 0.8])
        assert rep.best == 0.9
        assert rep.last == 0.8
        assert rep.gap == pytest.approx(0.1)

    def test_monotone_run_has_zero_gap(self):
        rep = AccuracyReport([0.5, 0.6, 0.7])
        assert rep.gap == 0.0

    def test_best_never_below_last(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            rep = AccuracyReport(list(rng.uniform(size=5)))
            assert rep.best >= rep.last
            assert rep.gap >= 0.0


class TestExports:
    def test_histogram_conserves_population(self, tmp_path):
        rng = np.random.default_rng(0)
        losses = rng.uniform(size=300)
        prov = rng.integers(0, 3, size=300).astype(np.uint8)
        out = tmp_path / "hist.csv"
        export_loss_histogram(losses, prov, 10, out)
        rows = out.read_text().strip().splitlines()
        assert rows[0] == "bin_lo,bin_hi,clean,closed,open"
        body = np.array([r.split(",") for r in rows[1:]], dtype=np.float64)
        assert body.shape == (10, 5)
        np.testing.assert_allclose(body[0, 0], 0.0)
        np.testing.assert_allclose(body[-1, 1], 1.0)
        for j, prov_value in enumerate(GROUP_ORDER):
            assert body[:, 2 + j].sum() == np.sum(prov == prov_value)

    def test_histogram_two_bins_split_at_half(self, tmp_path):
        losses = np.array([0.1, 0.9])
        prov = np.array([Provenance.CLEAN, Provenance.CLEAN], dtype=np.uint8)
        out = tmp_path / "hist.csv"
        export_loss_histogram(losses, prov, 2, out)
        body = [r.split(",") for r in out.read_text().strip().splitlines()[1:]]
        assert float(body[0][2]) == 1.0
        assert float(body[1][2]) == 1.0

    def test_histogram_rejects_single_bin(self, tmp_path):
        with pytest.raises(ValueError):
            export_loss_histogram(np.array([0.5]), np.array([0], dtype=np.uint8),
                                  1, tmp_path / "x.csv")

    def test_features_shape_and_values(self, tmp_path):
        ds = _clean_blobs(per_class=10)
        model = init_model((8, 16, 4), seed=0)
        out = tmp_path / "feats.csv"
        export_features(model, ds, out)
        rows = out.read_text().strip().splitlines()
        assert rows[0].startswith("id,provenance,h0")
        assert len(rows) == len(ds) + 1
        first = rows[1].split(",")
        assert len(first) == 2 + 16  # id, provenance, one column per unit
        from edmlab.backbone import hidden_features
        h0 = hidden_features(model, ds.features[:1])[0]
        np.testing.assert_allclose(np.array(first[2:], dtype=np.float64), h0,
                                   atol=1e-6)

    def test_posteriors_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        n = 40
        triples = rng.dirichlet(np.ones(3), size=n)
        split = PosteriorSplit(w=triples[:, 0], w_op=triples[:, 1],
                               w_cl=triples[:, 2])
        losses = rng.uniform(size=n)
        prov = rng.integers(0, 3, size=n).astype(np.uint8)
        out = tmp_path / "post.csv"
        export_posteriors(losses, split, prov, out)
        rows = out.read_text().strip().splitlines()
        assert rows[0] == "loss,w,w_op,w_cl,provenance"
        body = np.array([r.split(",") for r in rows[1:]], dtype=np.float64)
        assert body.shape == (n, 5)
        np.testing.assert_allclose(body[:, 0], losses, atol=1e-9)
        np.testing.assert_allclose(body[:, 1:4].sum(axis=1), 1.0, atol=1e-6)
        np.testing.assert_array_equal(body[:, 4].astype(int), prov)

    def test_posteriors_alignment_checked(self, tmp_path):
        split = PosteriorSplit(w=np.ones(3), w_op=np.zeros(3), w_cl=np.zeros(3))
        with pytest.raises(ValueError):
            export_posteriors(np.zeros(2), split, np.zeros(3, dtype=np.uint8),
                              tmp_path / "x.csv")
