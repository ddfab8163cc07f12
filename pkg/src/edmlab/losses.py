"""Training objectives: evidence-based loss, cross-entropy, consistency
penalties, and the weighted combination used for the noise-robust network.

Two parallel implementations live here.  The plain-numpy functions define
the numeric contracts on single rows or whole arrays and back the
per-sample loss scans.  The ``*_t`` functions build the same quantities as
:class:`~edmlab.autodiff.Tensor` graphs for gradient-based training; both
agree to float precision.

The evidence loss treats rectified logits plus one as the concentration of
a Dirichlet opinion; its value decomposes into a squared error between the
label and the mean prediction plus the prediction's own variance.  A
confidently wrong prediction therefore scores strictly higher than a
confidently right one, with the zero-evidence prediction in between — the
separation the noise classifier feeds on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor

#: probability floor applied inside every logarithm
EPS = 1e-12


@dataclass(frozen=True)
class DirichletEvidence:
    """Concentration vector and its total strength."""

    alpha: np.ndarray
    strength: float


@dataclass(frozen=True)
class LossWeights:
    """Mixing weights of the combined objective."""

    lambda_u: float = 25.0
    lambda_reg: float = 1.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.lambda_u) or self.lambda_u < 0:
            raise ValueError(f"lambda_u must be finite and >= 0, got {self.lambda_u}")
        if not np.isfinite(self.lambda_reg) or self.lambda_reg < 0:
            raise ValueError(f"lambda_reg must be finite and >= 0, got {self.lambda_reg}")


def _check_distribution(p: np.ndarray, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < -1e-9) or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"{name} is not a probability distribution: {p}")
    return p


def _check_one_hot(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if not (np.all((y == 0.0) | (y == 1.0)) and y.sum() == 1.0):
        raise ValueError(f"label is not one-hot: {y}")
    return y


# -- evidence loss -----------------------------------------------------


def evidence(logits: np.ndarray) -> DirichletEvidence:
    """alpha(c) = max(logit_c, 0) + 1, with its total strength."""
    alpha = np.maximum(np.asarray(logits, dtype=np.float64), 0.0) + 1.0
    return DirichletEvidence(alpha=alpha, strength=float(alpha.sum()))


def sl_loss(logits: np.ndarray, y: np.ndarray) -> float:
    """Evidence loss of one sample: label-fit error plus predictive variance."""
    y = _check_one_hot(y)
    ev = evidence(logits)
    if y.shape != ev.alpha.shape:
        raise ValueError(f"label length {y.shape} != logit length {ev.alpha.shape}")
    p = ev.alpha / ev.strength
    err = np.sum((y - p) ** 2)
    var = np.sum(p * (1.0 - p)) / (ev.strength + 1.0)
    return float(err + var)


def sl_losses_from_logits(logits: np.ndarray, labels_one_hot: np.ndarray) -> np.ndarray:
    """Vectorized per-row evidence losses for an (N, K) logit matrix."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels_one_hot, dtype=np.float64)
    alpha = np.maximum(logits, 0.0) + 1.0
    strength = alpha.sum(axis=1, keepdims=True)
    p = alpha / strength
    err = ((labels - p) ** 2).sum(axis=1)
    var = (p * (1.0 - p)).sum(axis=1) / (strength[:, 0] + 1.0)
    return err + var


def sl_dataset_loss(model, dataset) -> tuple[float, np.ndarray]:
    """Mean and per-sample evidence losses over a whole manifest.

    Per-sample values are ordered by sample id.  ``model`` is a
    :class:`~edmlab.backbone.ModelParams`; the forward pass is chunked so
    large manifests do not blow up memory.
    """
    from .backbone import forward_logits

    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    labels = dataset.one_hot_observed()
    per_sample = np.empty(n, dtype=np.float64)
    chunk = 4096
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        logits = forward_logits(model, dataset.features[start:stop])
        per_sample[start:stop] = sl_losses_from_logits(logits, labels[start:stop])
    return float(per_sample.mean()), per_sample


# -- cross-entropy, consistency, and the combined objective ------------


def ce_loss(probs: np.ndarray, label: np.ndarray) -> float:
    """−Σ label·log(probs), probabilities floored at EPS; accepts soft labels."""
    probs = _check_distribution(probs, "probs")
    label = _check_distribution(label, "label")
    return float(-np.sum(label * np.log(np.maximum(probs, EPS))))


def unlabeled_mse(guess: np.ndarray, probs: np.ndarray) -> float:
    """Squared Euclidean distance between two distributions."""
    guess = _check_distribution(guess, "guess")
    probs = _check_distribution(probs, "probs")
    if guess.shape != probs.shape:
        raise ValueError(f"length mismatch: {guess.shape} vs {probs.shape}")
    return float(np.sum((guess - probs) ** 2))


def reg_loss(mean_probs: np.ndarray) -> float:
    """Divergence of the batch-mean prediction from the uniform distribution.

    Zero exactly when the mean prediction is uniform; grows as mass
    collapses onto few classes.
    """
    pbar = np.asarray(mean_probs, dtype=np.float64)
    k = pbar.shape[-1]
    pi = 1.0 / k
    return float(np.sum(pi * (np.log(pi) - np.log(np.maximum(pbar, EPS)))))


def dm_loss(labeled_loss: float, unlabeled_loss: float, mean_probs: np.ndarray,
            weights: LossWeights) -> float:
    """labeled + lambda_u·unlabeled + lambda_reg·uniformity penalty."""
    return float(labeled_loss
                 + weights.lambda_u * unlabeled_loss
                 + weights.lambda_reg * reg_loss(mean_probs))


def temp_sharpen(p: np.ndarray, temperature: float) -> np.ndarray:
    """Raise a distribution to 1/T and renormalize along the last axis."""
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    p = np.asarray(p, dtype=np.float64)
    powered = p ** (1.0 / temperature)
    total = powered.sum(axis=-1, keepdims=True)
    if np.any(total == 0.0):
        raise ValueError("cannot sharpen an all-zero distribution")
    return powered / total


# -- differentiable batch versions -------------------------------------


def softmax_t(logits: Tensor) -> Tensor:
    """Row-wise softmax as a tensor graph, with a detached stability shift."""
    shift = logits.value.max(axis=-1, keepdims=True)
    e = (logits - shift).exp()
    return e / e.sum(axis=-1, keepdims=True)


def sl_batch_loss_t(logits: Tensor, labels_one_hot: np.ndarray) -> Tensor:
    """Mean evidence loss of a batch, as a scalar tensor."""
    labels = np.asarray(labels_one_hot, dtype=np.float64)
    alpha = logits.relu() + 1.0
    strength = alpha.sum(axis=1, keepdims=True)
    p = alpha / strength
    err = ((p - labels) ** 2).sum(axis=1)
    var = (p * (1.0 - p)).sum(axis=1) / (strength.sum(axis=1) + 1.0)
    return (err + var).mean()


def ce_batch_loss_t(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of a batch against (possibly soft) labels."""
    logp = probs.clip_min(EPS).log()
    return -((logp * np.asarray(labels, dtype=np.float64)).sum(axis=1).mean())


def mse_batch_loss_t(probs: Tensor, targets: np.ndarray) -> Tensor:
    """Mean per-row squared Euclidean distance to fixed target distributions."""
    diff = probs - np.asarray(targets, dtype=np.float64)
    return (diff ** 2).sum(axis=1).mean()


def reg_loss_t(probs_all: Tensor) -> Tensor:
    """Uniformity penalty on the batch-mean predicted distribution."""
    k = probs_all.shape[-1]
    pi = 1.0 / k
    pbar = probs_all.mean(axis=0)
    return (pi * (np.log(pi) - pbar.clip_min(EPS).log())).sum()


def dm_batch_loss_t(logits_x: Tensor | None, labels_x: np.ndarray | None,
                    logits_u: Tensor | None, targets_u: np.ndarray | None,
                    weights: LossWeights) -> tuple[Tensor, dict]:
    """Combined objective over a labeled and an unlabeled mixed batch.

    Either part may be absent (None); its term is then a constant zero.  The
    uniformity penalty uses the mean prediction over all rows present.
    Returns the scalar tensor plus the float value of each component.
    """
    parts = []
    if logits_x is not None:
        parts.append(softmax_t(logits_x))
    if logits_u is not None:
        parts.append(softmax_t(logits_u))
    if not parts:
        raise ValueError("combined loss needs at least one batch part")

    l_x = ce_batch_loss_t(parts[0], labels_x) if logits_x is not None else Tensor(0.0)
    l_u = (mse_batch_loss_t(parts[-1], targets_u)
           if logits_u is not None else Tensor(0.0))

    total_rows = sum(p.shape[0] for p in parts)
    row_sums = parts[0].sum(axis=0)
    for p in parts[1:]:
        row_sums = row_sums + p.sum(axis=0)
    pbar = row_sums * (1.0 / total_rows)
    pi = 1.0 / parts[0].shape[-1]
    l_reg = (pi * (np.log(pi) - pbar.clip_min(EPS).log())).sum()

    total = l_x + weights.lambda_u * l_u + weights.lambda_reg * l_reg
    components = {
        "labeled": float(l_x.value),
        "unlabeled": float(l_u.value),
        "regularizer": float(l_reg.value),
    }
    return total, components
