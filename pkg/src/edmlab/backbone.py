"""A minimal multilayer rectifier classifier with SGD-momentum training.

The model is a fully connected network ``d -> hidden... -> K`` with rectifier
activations between layers and linear outputs.  Two forward paths exist: a
plain numpy one for inference, and a :class:`~edmlab.autodiff.Tensor` one for
training, whose gradients are exercised against finite differences in the
test suite.

Parameters live in float64 in memory.  Checkpoints are written as float32
(little-endian) with a textual header and a trailing length checksum, so a
repeated deterministic run reproduces checkpoint files byte for byte.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ChecksumError, DimensionError, FormatError, NumericsError

ROLE_NETD = "NetD"
ROLE_NETS = "NetS"
ROLES = (ROLE_NETD, ROLE_NETS)

AUGMENT_NONE = "none"
AUGMENT_JITTER = "gaussian_jitter"

CKPT_MAGIC = "EDMCKPT1"


@dataclass
class ModelParams:
    """Weights and biases of a rectifier network, plus its shape and role."""

    widths: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    role: str = ROLE_NETD

    def __post_init__(self) -> None:
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 2:
            raise ValueError("architecture needs at least input and output widths")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"zero-width layer in architecture {self.widths}")
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        expected = len(self.widths) - 1
        if len(self.weights) != expected or len(self.biases) != expected:
            raise ValueError("layer count does not match architecture")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.widths[i], self.widths[i + 1]):
                raise ValueError(f"weight {i} has shape {w.shape}, "
                                 f"expected {(self.widths[i], self.widths[i + 1])}")
            if b.shape != (self.widths[i + 1],):
                raise ValueError(f"bias {i} has shape {b.shape}")
        for arr in self.weights + self.biases:
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite model parameter")

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def num_classes(self) -> int:
        return self.widths[-1]

    def copy(self) -> "ModelParams":
        return ModelParams(
            widths=self.widths,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            role=self.role,
        )

    def flat(self) -> list[np.ndarray]:
        """Parameters in the canonical order W0, b0, W1, b1, ..."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def init_model(widths, seed: int, role: str = ROLE_NETD) -> ModelParams:
    """Zero-mean weights with variance 1/fan_in; biases exactly zero."""
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ValueError(f"invalid architecture {widths}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        scale = 1.0 / np.sqrt(fan_in)
        weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return ModelParams(widths=widths, weights=weights, biases=biases, role=role)


def forward_logits(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Plain-numpy forward pass; pure function of (params, batch)."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ValueError(f"batch shape {x.shape} incompatible with input width "
                         f"{params.input_dim}")
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        x = x @ w + b
        if i != last:
            x = np.maximum(x, 0.0)
    return x


def hidden_features(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Activations of the last hidden layer (the penultimate representation)."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ValueError(f"batch shape {x.shape} incompatible with input width "
                         f"{params.input_dim}")
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        x = np.maximum(x @ w + b, 0.0)
    return x


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for overflow safety."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def param_tensors(params: ModelParams) -> list[Tensor]:
    """Leaf tensors over the parameters, in canonical flat order."""
    return [Tensor(arr) for arr in params.flat()]


def forward_logits_t(tensors: list[Tensor], batch: np.ndarray) -> Tensor:
    """Differentiable forward pass through tensors from :func:`param_tensors`."""
    if len(tensors) < 2 or len(tensors) % 2 != 0:
        raise ValueError("expected an even-length W,b tensor list")
    x = Tensor(np.asarray(batch, dtype=np.float64))
    num_layers = len(tensors) // 2
    for i in range(num_layers):
        w, b = tensors[2 * i], tensors[2 * i + 1]
        x = x @ w + b
        if i != num_layers - 1:
            x = x.relu()
    return x


def backward(param_ts: list[Tensor], loss: Tensor) -> list[np.ndarray]:
    """Backpropagate a scalar loss and collect per-parameter gradients.

    Raises if any parameter tensor is not part of the loss graph.
    """
    loss.backward()
    grads = []
    for i, t in enumerate(param_ts):
        if t.grad is None:
            raise ValueError(f"loss is not connected to parameter tensor {i}")
        grads.append(t.grad)
    return grads


@dataclass
class OptimState:
    """SGD-with-momentum state: one velocity buffer per parameter array."""

    learning_rate: float
    momentum: float
    weight_decay: float
    velocities: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.learning_rate < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("optimizer hyperparameters must be non-negative")


def init_optim(params: ModelParams, learning_rate: float, momentum: float,
               weight_decay: float) -> OptimState:
    return OptimState(
        learning_rate=learning_rate,
        momentum=momentum,
        weight_decay=weight_decay,
        velocities=[np.zeros_like(arr) for arr in params.flat()],
    )


def sgd_step(params: ModelParams, grads: list[np.ndarray],
             opt: OptimState) -> tuple[ModelParams, OptimState]:
    """v <- m*v + g + wd*theta; theta <- theta - lr*v (in place).

    Classic coupled weight decay: the decay term enters the velocity.
    A non-finite gradient aborts the step before touching any parameter.
    """
    flat = params.flat()
    if len(grads) != len(flat) or len(opt.velocities) != len(flat):
        raise ValueError("gradient/velocity count does not match parameters")
    for i, g in enumerate(grads):
        if g.shape != flat[i].shape:
            raise ValueError(f"gradient {i} shape {g.shape} != {flat[i].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient in parameter array {i}")
    for theta, g, v in zip(flat, grads, opt.velocities):
        v *= opt.momentum
        v += g + opt.weight_decay * theta
        theta -= opt.learning_rate * v
    return params, opt


@dataclass(frozen=True)
class AugmentSpec:
    """Stochastic input augmentation policy for vector data."""

    mode: str = AUGMENT_JITTER
    jitter_sigma: float = 0.05

    def validate(self) -> None:
        if self.mode not in (AUGMENT_NONE, AUGMENT_JITTER):
            raise ValueError(f"unknown augmentation mode {self.mode!r}")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be >= 0")


def augment(batch: np.ndarray, spec: AugmentSpec,
            rng: np.random.Generator) -> np.ndarray:
    """One stochastic view of a batch; each call consumes fresh draws."""
    spec.validate()
    x = np.asarray(batch, dtype=np.float64)
    if spec.mode == AUGMENT_NONE or spec.jitter_sigma == 0.0:
        return x.copy()
    return x + rng.normal(0.0, spec.jitter_sigma, size=x.shape)


# -- checkpoint serialization ------------------------------------------


def save_checkpoint(params: ModelParams, path: str | os.PathLike) -> None:
    """Write parameters as float32 with a header and length checksum."""
    arch = ",".join(str(w) for w in params.widths)
    header = f"{CKPT_MAGIC} role={params.role} arch={arch}\n".encode("ascii")
    chunks = [header]
    for arr in params.flat():
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    payload = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(struct.pack("<Q", len(payload)))


def load_checkpoint(path: str | os.PathLike) -> ModelParams:
    """Read a checkpoint; parameters come back as float64 copies."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise ChecksumError(f"file too short to hold a checksum ({len(blob)} bytes)")
    payload, trailer = blob[:-8], blob[-8:]
    (stored_len,) = struct.unpack("<Q", trailer)
    if stored_len != len(payload):
        raise ChecksumError(
            f"length checksum mismatch: payload spans {len(payload)} bytes, "
            f"trailer claims {stored_len}"
        )
    newline = payload.find(b"\n")
    if newline < 0:
        raise FormatError("no header line found")
    try:
        text = payload[:newline].decode("ascii")
    except UnicodeDecodeError as exc:
        raise FormatError(f"header is not ASCII: {exc}") from None
    parts = text.split(" ")
    if len(parts) != 3 or parts[0] != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint header: {text!r}")
    if not parts[1].startswith("role=") or not parts[2].startswith("arch="):
        raise FormatError(f"bad checkpoint header fields: {text!r}")
    role = parts[1][len("role="):]
    if role not in ROLES:
        raise FormatError(f"unknown role tag {role!r}")
    try:
        widths = tuple(int(w) for w in parts[2][len("arch="):].split(","))
    except ValueError:
        raise FormatError("unparseable architecture descriptor") from None
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise FormatError(f"implausible architecture {widths}")

    body = payload[newline + 1:]
    counts = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        counts.append(fan_in * fan_out)
        counts.append(fan_out)
    expected = 4 * sum(counts)
    if len(body) != expected:
        raise DimensionError(
            f"parameter body is {len(body)} bytes, expected {expected} "
            f"for architecture {widths}"
        )
    values = np.frombuffer(body, dtype="<f4").astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise FormatError("non-finite parameter value in checkpoint")

    weights, biases = [], []
    offset = 0
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w = values[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = values[offset:offset + fan_out]
        offset += fan_out
        weights.append(w.copy())
        biases.append(b.copy())
    return ModelParams(widths=widths, weights=weights, biases=biases, role=role)
