"""Dual-network training under combined closed-set and open-set label noise.

One network (NetS) is trained with the evidence loss purely to make noise
visible: after warm-up, its per-sample losses separate clean, open-set, and
closed-set samples into low, middle, and high bands.  Each epoch those
losses are normalized, a mixture model classifies every sample into a
(clean, open, closed) posterior triple, and a strict-max rule partitions
the data into a labeled set X, an unlabeled set U, and a discard set O.

The classifier (NetD) then trains semi-supervised on X and U only: labels
in X are co-refined toward the model's own averaged predictions, U gets
sharpened pseudo-labels, both are mixed pairwise against a shuffled union
of the two batches, and one SGD step minimizes the combined objective.
Predicted open-set samples never contribute to a NetD gradient.  Finally
NetS retrains for one pass on labels relabeled by NetD, and the loop
repeats.  Inference uses NetD's argmax alone.

All randomness flows through one sequential generator derived from the
config seed, so a run is reproducible to the byte.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .backbone import (
    ROLE_NETD,
    ROLE_NETS,
    AugmentSpec,
    ModelParams,
    OptimState,
    augment,
    backward,
    forward_logits,
    forward_logits_t,
    init_model,
    init_optim,
    param_tensors,
    sgd_step,
    softmax_probs,
)
from .benchgen import DatasetManifest
from .errors import NumericsError
from .evaluation import AccuracyReport, split_confusion, test_accuracy
from .gmm import (
    GmmConfig,
    Partition,
    PosteriorSplit,
    fit_em,
    group_posteriors,
    normalize_losses,
    partition,
)
from .losses import (
    LossWeights,
    ce_batch_loss_t,
    dm_batch_loss_t,
    sl_batch_loss_t,
    sl_dataset_loss,
    softmax_t,
    temp_sharpen,
)

log = logging.getLogger("edmlab")

ALGO_EDM = "edm"
ALGO_CE = "ce"


@dataclass
class TrainConfig:
    """Everything a training run depends on, seed included."""

    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.02
    lr_drop_factor: float = 0.1
    lr_drop_epoch: int = 0  # 0 = automatic: 100 for long runs, epochs//2 otherwise
    momentum: float = 0.8
    weight_decay: float = 5e-4
    warmup_epochs_netd: int = 10
    warmup_epochs_nets: int = 30
    num_augments: int = 2
    temperature: float = 0.5
    mix_alpha: float = 4.0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    gmm: GmmConfig = field(default_factory=GmmConfig)
    hidden_widths: tuple[int, ...] = (64, 64)
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.num_augments < 1:
            raise ValueError(f"num_augments must be >= 1, got {self.num_augments}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.mix_alpha <= 0:
            raise ValueError(f"mix_alpha must be > 0, got {self.mix_alpha}")
        if self.learning_rate < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("optimizer hyperparameters must be non-negative")
        if self.warmup_epochs_netd < 0 or self.warmup_epochs_nets < 0:
            raise ValueError("warm-up epoch counts must be >= 0")
        if self.lr_drop_factor <= 0 or self.lr_drop_epoch < 0:
            raise ValueError("invalid learning-rate schedule")
        if not self.hidden_widths or any(int(w) < 1 for w in self.hidden_widths):
            raise ValueError(f"invalid hidden widths {self.hidden_widths}")
        self.gmm.validate_for_training()
        self.augment.validate()

    @property
    def resolved_lr_drop_epoch(self) -> int:
        """Drop at epoch 100 on long schedules, halfway otherwise."""
        if self.lr_drop_epoch > 0:
            return self.lr_drop_epoch
        return 100 if self.epochs >= 200 else max(1, self.epochs // 2)

    def lr_at(self, epoch: int) -> float:
        if epoch >= self.resolved_lr_drop_epoch:
            return self.learning_rate * self.lr_drop_factor
        return self.learning_rate


@dataclass
class EpochReport:
    """Everything logged about one main-loop epoch."""

    epoch: int
    n_x: int
    n_u: int
    n_o: int
    test_accuracy: float
    learning_rate: float
    mean_sl_loss: float | None = None
    mean_labeled_loss: float | None = None
    mean_unlabeled_loss: float | None = None
    mean_reg_loss: float | None = None
    split_balanced_accuracy: float | None = None
    confusion: list[list[int]] | None = None

    def to_record(self) -> dict:
        return {
            "epoch": self.epoch,
            "n_x": self.n_x,
            "n_u": self.n_u,
            "n_o": self.n_o,
            "test_accuracy": self.test_accuracy,
            "learning_rate": self.learning_rate,
            "mean_sl_loss": self.mean_sl_loss,
            "mean_labeled_loss": self.mean_labeled_loss,
            "mean_unlabeled_loss": self.mean_unlabeled_loss,
            "mean_reg_loss": self.mean_reg_loss,
            "split_balanced_accuracy": self.split_balanced_accuracy,
            "confusion": self.confusion,
        }


@dataclass
class RefinedBatch:
    """A pairwise-mixed batch: inputs, soft targets, and the mix coefficients."""

    inputs: np.ndarray
    targets: np.ndarray
    lambdas: np.ndarray  # per-pair dominant coefficient, always in [0.5, 1]


@dataclass
class NetdEpochStats:
    """Audit record of one classifier epoch: what it trained on, at what loss."""

    iterations: int
    used_labeled: np.ndarray
    used_unlabeled: np.ndarray
    mean_labeled_loss: float | None
    mean_unlabeled_loss: float | None
    mean_reg_loss: float | None


@dataclass
class TrainOutcome:
    """Final models plus the per-epoch report trail."""

    netd: ModelParams
    reports: list[EpochReport]
    nets: ModelParams | None = None

    @property
    def accuracy(self) -> AccuracyReport:
        return AccuracyReport([r.test_accuracy for r in self.reports])


def _seed_bundle(seed: int):
    """Independent init seeds for the two networks plus one run stream."""
    netd_ss, nets_ss, run_ss = np.random.SeedSequence(seed).spawn(3)
    return netd_ss, nets_ss, np.random.default_rng(run_ss)


# -- contract-level single-sample operations ---------------------------


def co_refine(label: np.ndarray, clean_weight: float, mean_probs: np.ndarray,
              temperature: float) -> np.ndarray:
    """Blend a label with the model's averaged prediction, then sharpen."""
    if not 0.0 <= clean_weight <= 1.0:
        raise ValueError(f"clean_weight must be in [0,1], got {clean_weight}")
    blended = clean_weight * np.asarray(label, dtype=np.float64) \
        + (1.0 - clean_weight) * np.asarray(mean_probs, dtype=np.float64)
    return temp_sharpen(blended, temperature)


def guess_unlabeled(model: ModelParams, sample: np.ndarray, num_augments: int,
                    temperature: float, augment_spec: AugmentSpec,
                    rng: np.random.Generator) -> np.ndarray:
    """Sharpened average prediction over stochastic views of one sample."""
    if num_augments < 1:
        raise ValueError(f"num_augments must be >= 1, got {num_augments}")
    x = np.asarray(sample, dtype=np.float64).reshape(1, -1)
    acc = np.zeros(model.num_classes, dtype=np.float64)
    for _ in range(num_augments):
        view = augment(x, augment_spec, rng)
        acc += softmax_probs(forward_logits(model, view))[0]
    return temp_sharpen(acc / num_augments, temperature)


def mixmatch_pair(a: tuple[np.ndarray, np.ndarray], b: tuple[np.ndarray, np.ndarray],
                  mix_alpha: float, rng: np.random.Generator
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Convexly mix two (input, target) pairs, first operand dominating.

    The coefficient is drawn from Beta(mix_alpha, mix_alpha) and folded to
    its upper half, so the output stays closer to ``a``.
    """
    lam = float(rng.beta(mix_alpha, mix_alpha))
    lam = max(lam, 1.0 - lam)
    ai, at = a
    bi, bt = b
    mixed_input = lam * np.asarray(ai, np.float64) + (1 - lam) * np.asarray(bi, np.float64)
    mixed_target = lam * np.asarray(at, np.float64) + (1 - lam) * np.asarray(bt, np.float64)
    return mixed_input, mixed_target


def mixmatch_batch(inputs: np.ndarray, targets: np.ndarray, mix_alpha: float,
                   rng: np.random.Generator) -> RefinedBatch:
    """Mix every row against a shuffled partner from the same pool.

    Draw order is fixed (partner permutation first, then the coefficient
    vector) so runs are reproducible.
    """
    n = inputs.shape[0]
    perm = rng.permutation(n)
    lam = rng.beta(mix_alpha, mix_alpha, size=n)
    lam = np.maximum(lam, 1.0 - lam)
    mixed_inputs = lam[:, None] * inputs + (1.0 - lam[:, None]) * inputs[perm]
    mixed_targets = lam[:, None] * targets + (1.0 - lam[:, None]) * targets[perm]
    return RefinedBatch(inputs=mixed_inputs, targets=mixed_targets, lambdas=lam)


# -- epoch-level passes ------------------------------------------------


def _ce_pass(model: ModelParams, feats: np.ndarray, labels: np.ndarray,
             batch_size: int, opt: OptimState, rng: np.random.Generator) -> float:
    """One shuffled minibatch epoch of cross-entropy; returns its mean loss."""
    n = feats.shape[0]
    order = rng.permutation(n)
    total, steps = 0.0, 0
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        ts = param_tensors(model)
        loss = ce_batch_loss_t(softmax_t(forward_logits_t(ts, feats[idx])),
                               labels[idx])
        if not np.isfinite(loss.value):
            raise NumericsError("non-finite cross-entropy loss")
        sgd_step(model, backward(ts, loss), opt)
        total += float(loss.value)
        steps += 1
    return total / max(steps, 1)


def _sl_pass(model: ModelParams, feats: np.ndarray, labels: np.ndarray,
             batch_size: int, opt: OptimState, rng: np.random.Generator) -> float:
    """One shuffled minibatch epoch of the evidence loss; returns its mean."""
    n = feats.shape[0]
    order = rng.permutation(n)
    total, steps = 0.0, 0
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        ts = param_tensors(model)
        loss = sl_batch_loss_t(forward_logits_t(ts, feats[idx]), labels[idx])
        if not np.isfinite(loss.value):
            raise NumericsError("non-finite evidence loss")
        sgd_step(model, backward(ts, loss), opt)
        total += float(loss.value)
        steps += 1
    return total / max(steps, 1)


def warmup(netd: ModelParams, nets: ModelParams, dataset: DatasetManifest,
           cfg: TrainConfig, rng: np.random.Generator
           ) -> tuple[ModelParams, ModelParams]:
    """Independent warm-up passes: NetD on cross-entropy, NetS on evidence.

    Both see the unchanged noisy labels at the initial learning rate.
    """
    cfg.validate()
    feats = dataset.features.astype(np.float64)
    labels = dataset.one_hot_observed()
    if cfg.warmup_epochs_netd > 0:
        opt_d = init_optim(netd, cfg.learning_rate, cfg.momentum, cfg.weight_decay)
        for _ in range(cfg.warmup_epochs_netd):
            _ce_pass(netd, feats, labels, cfg.batch_size, opt_d, rng)
    if cfg.warmup_epochs_nets > 0:
        opt_s = init_optim(nets, cfg.learning_rate, cfg.momentum, cfg.weight_decay)
        for _ in range(cfg.warmup_epochs_nets):
            _sl_pass(nets, feats, labels, cfg.batch_size, opt_s, rng)
    return netd, nets


def _mean_view_probs(model: ModelParams, feats: np.ndarray, num_views: int,
                     spec: AugmentSpec, rng: np.random.Generator
                     ) -> tuple[list[np.ndarray], np.ndarray]:
    """M stochastic views of a batch and the average softmax across them."""
    views, acc = [], None
    for _ in range(num_views):
        v = augment(feats, spec, rng)
        views.append(v)
        p = softmax_probs(forward_logits(model, v))
        acc = p if acc is None else acc + p
    return views, acc / num_views


def train_netd_epoch(netd: ModelParams, dataset: DatasetManifest,
                     split: PosteriorSplit, part: Partition, cfg: TrainConfig,
                     opt: OptimState, rng: np.random.Generator
                     ) -> tuple[ModelParams, NetdEpochStats]:
    """One semi-supervised epoch of the classifier on X (labeled) and U.

    Runs ceil(|X|/batch) iterations.  Each iteration augments its labeled
    and unlabeled batches M times, co-refines labels and sharpens guesses
    under no-grad forwards, mixes everything against a shuffled union, and
    takes one SGD step on the combined objective.  Samples in O are never
    touched.  An empty X skips the epoch with a warning.
    """
    if len(part.x_idx) == 0:
        log.warning("labeled set X is empty this epoch; classifier update skipped")
        empty = np.empty(0, dtype=np.int64)
        return netd, NetdEpochStats(0, empty, empty, None, None, None)

    feats = dataset.features.astype(np.float64)
    onehot = dataset.one_hot_observed()
    batch = cfg.batch_size
    m = cfg.num_augments
    x_order = rng.permutation(part.x_idx)
    u_idx = part.u_idx
    num_iters = math.ceil(len(x_order) / batch)
    sums = np.zeros(3)
    used_unlabeled: list[np.ndarray] = []

    for it in range(num_iters):
        xb = x_order[it * batch:(it + 1) * batch]
        if len(u_idx) > 0:
            ub = rng.choice(u_idx, size=batch, replace=len(u_idx) < batch)
            used_unlabeled.append(ub)
        else:
            ub = np.empty(0, dtype=np.int64)

        # labeled part: co-refined, sharpened targets on M views
        views_x, p_mean = _mean_view_probs(netd, feats[xb], m, cfg.augment, rng)
        w = split.w[xb][:, None]
        refined = temp_sharpen(w * onehot[xb] + (1.0 - w) * p_mean, cfg.temperature)
        pool_inputs = views_x
        pool_targets = [refined] * m

        # unlabeled part: sharpened average-of-views pseudo-labels
        if len(ub) > 0:
            views_u, q_mean = _mean_view_probs(netd, feats[ub], m, cfg.augment, rng)
            guessed = temp_sharpen(q_mean, cfg.temperature)
            pool_inputs = pool_inputs + views_u
            pool_targets = pool_targets + [guessed] * m

        mixed = mixmatch_batch(np.concatenate(pool_inputs, axis=0),
                               np.concatenate(pool_targets, axis=0),
                               cfg.mix_alpha, rng)
        n_x = m * len(xb)
        ts = param_tensors(netd)
        logits_x = forward_logits_t(ts, mixed.inputs[:n_x])
        logits_u = (forward_logits_t(ts, mixed.inputs[n_x:])
                    if len(ub) > 0 else None)
        total, comps = dm_batch_loss_t(
            logits_x, mixed.targets[:n_x], logits_u,
            mixed.targets[n_x:] if len(ub) > 0 else None, cfg.loss_weights,
        )
        if not np.isfinite(total.value):
            raise NumericsError(
                f"non-finite combined loss at iteration {it}: {comps}"
            )
        sgd_step(netd, backward(ts, total), opt)
        sums += (comps["labeled"], comps["unlabeled"], comps["regularizer"])

    stats = NetdEpochStats(
        iterations=num_iters,
        used_labeled=np.unique(x_order),
        used_unlabeled=(np.unique(np.concatenate(used_unlabeled))
                        if used_unlabeled else np.empty(0, dtype=np.int64)),
        mean_labeled_loss=float(sums[0] / num_iters),
        mean_unlabeled_loss=float(sums[1] / num_iters),
        mean_reg_loss=float(sums[2] / num_iters),
    )
    return netd, stats


def relabel_for_nets(netd: ModelParams, dataset: DatasetManifest,
                     split: PosteriorSplit) -> DatasetManifest:
    """Relabel every sample by blending its label with NetD's prediction.

    The blend weight is the sample's closed-set posterior: the more likely
    a label flip, the more the classifier's opinion counts.  Argmax ties
    resolve to the lowest class index.
    """
    if len(split) != len(dataset):
        raise ValueError("split and dataset are misaligned")
    probs = np.empty((len(dataset), dataset.num_classes))
    chunk = 4096
    for start in range(0, len(dataset), chunk):
        stop = min(start + chunk, len(dataset))
        probs[start:stop] = softmax_probs(
            forward_logits(netd, dataset.features[start:stop])
        )
    w_cl = split.w_cl[:, None]
    scores = w_cl * probs + (1.0 - w_cl) * dataset.one_hot_observed()
    new_labels = np.argmax(scores, axis=1).astype(np.int32)
    return DatasetManifest(
        features=dataset.features.copy(),
        observed=new_labels,
        true_class=dataset.true_class.copy(),
        provenance=dataset.provenance.copy(),
        num_classes=dataset.num_classes,
        noise_spec=replace(dataset.noise_spec),
    )


def train_nets_epoch(nets: ModelParams, relabeled: DatasetManifest,
                     cfg: TrainConfig, opt: OptimState,
                     rng: np.random.Generator) -> ModelParams:
    """One full minibatch pass of the evidence loss over relabeled data."""
    feats = relabeled.features.astype(np.float64)
    labels = relabeled.one_hot_observed()
    _sl_pass(nets, feats, labels, cfg.batch_size, opt, rng)
    return nets


# -- full runs ---------------------------------------------------------


def run(dataset: DatasetManifest, test_dataset: DatasetManifest,
        cfg: TrainConfig, on_epoch=None) -> TrainOutcome:
    """Warm-up, then the full split/refine/relabel loop for cfg.epochs.

    ``on_epoch(report, netd, nets)``, when given, is called after every
    epoch so callers can stream logs or snapshot the best model.
    """
    cfg.validate()
    widths = (dataset.feature_dim, *cfg.hidden_widths, dataset.num_classes)
    netd_ss, nets_ss, rng = _seed_bundle(cfg.seed)
    netd = init_model(widths, netd_ss, role=ROLE_NETD)
    nets = init_model(widths, nets_ss, role=ROLE_NETS)
    warmup(netd, nets, dataset, cfg, rng)

    opt_d = init_optim(netd, cfg.lr_at(0), cfg.momentum, cfg.weight_decay)
    opt_s = init_optim(nets, cfg.lr_at(0), cfg.momentum, cfg.weight_decay)
    n = len(dataset)
    reports: list[EpochReport] = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        opt_d.learning_rate = lr
        opt_s.learning_rate = lr

        mean_sl, raw = sl_dataset_loss(nets, dataset)
        norm = normalize_losses(raw)
        gmodel = fit_em(norm, cfg.gmm)
        split = group_posteriors(gmodel, norm, cfg.gmm)
        part = partition(split, n)
        if sum(part.sizes()) != n:
            raise NumericsError("three-way split failed to cover the dataset")

        netd, stats = train_netd_epoch(netd, dataset, split, part, cfg, opt_d, rng)
        relabeled = relabel_for_nets(netd, dataset, split)
        nets = train_nets_epoch(nets, relabeled, cfg, opt_s, rng)

        conf = split_confusion(split, dataset)
        report = EpochReport(
            epoch=epoch,
            n_x=len(part.x_idx), n_u=len(part.u_idx), n_o=len(part.o_idx),
            test_accuracy=test_accuracy(netd, test_dataset),
            learning_rate=lr,
            mean_sl_loss=mean_sl,
            mean_labeled_loss=stats.mean_labeled_loss,
            mean_unlabeled_loss=stats.mean_unlabeled_loss,
            mean_reg_loss=stats.mean_reg_loss,
            split_balanced_accuracy=conf.balanced_accuracy,
            confusion=conf.matrix.tolist(),
        )
        reports.append(report)
        if on_epoch is not None:
            on_epoch(report, netd, nets)
    return TrainOutcome(netd=netd, reports=reports, nets=nets)


def run_baseline_ce(dataset: DatasetManifest, test_dataset: DatasetManifest,
                    cfg: TrainConfig, on_epoch=None) -> TrainOutcome:
    """Control condition: plain cross-entropy on the noisy labels.

    Same architecture, same classifier init seed, same schedule and epoch
    count; no split, no relabeling, no unlabeled term.
    """
    cfg.validate()
    widths = (dataset.feature_dim, *cfg.hidden_widths, dataset.num_classes)
    netd_ss, _, rng = _seed_bundle(cfg.seed)
    model = init_model(widths, netd_ss, role=ROLE_NETD)
    feats = dataset.features.astype(np.float64)
    labels = dataset.one_hot_observed()

    opt = init_optim(model, cfg.learning_rate, cfg.momentum, cfg.weight_decay)
    for _ in range(cfg.warmup_epochs_netd):
        _ce_pass(model, feats, labels, cfg.batch_size, opt, rng)

    n = len(dataset)
    reports: list[EpochReport] = []
    for epoch in range(cfg.epochs):
        opt.learning_rate = cfg.lr_at(epoch)
        mean_ce = _ce_pass(model, feats, labels, cfg.batch_size, opt, rng)
        report = EpochReport(
            epoch=epoch,
            n_x=n, n_u=0, n_o=0,
            test_accuracy=test_accuracy(model, test_dataset),
            learning_rate=cfg.lr_at(epoch),
            mean_labeled_loss=mean_ce,
        )
        reports.append(report)
        if on_epoch is not None:
            on_epoch(report, model, None)
    return TrainOutcome(netd=model, reports=reports, nets=None)
