"""Dense feedforward binary classifier trained with mini-batch SGD.

Parameters live as explicit float64 numpy arrays so federated averaging,
elementwise blending, and meta-gradient arithmetic stay transparent. The
default architecture is 6 -> 32 -> 16 -> 1 with softplus hidden units
and a sigmoid output head; weights start Glorot-uniform, biases at zero.

Checkpoint layout (little-endian, self-describing):

    magic   8 bytes  b"FSLNCKP1"
    u32     layer count L
    u32     input dimension of layer 1
    u32*L   output dimension of each layer
    f64     per layer: row-major weights then biases
    u8      1 if a standardizer follows, else 0
    f64     standardizer mean then std (input-dimension long each)
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import expit

from .features import Standardizer
from .rng import derive_rng

__all__ = [
    "DEFAULT_HIDDEN",
    "LOSS_EPS",
    "BatchStream",
    "DenseLayer",
    "MetricsReport",
    "ModelParams",
    "TrainConfig",
    "UndefinedAucError",
    "auc",
    "bce_loss",
    "combine",
    "epochs_to_steps",
    "evaluate",
    "forward",
    "gradient",
    "init_params",
    "load_checkpoint",
    "mean_loss",
    "params_checksum",
    "save_checkpoint",
    "sgd_step",
    "train_steps",
]

DEFAULT_HIDDEN = (32, 16)
LOSS_EPS = 1e-12
_MAGIC = b"FSLNCKP1"


class UndefinedAucError(ValueError):
    """Raised when a score sample contains only one class."""


class DenseLayer(NamedTuple):
    weights: np.ndarray  # (fan_out, fan_in)
    biases: np.ndarray  # (fan_out,)


@dataclass
class ModelParams:
    """Fully connected stack; dimensions must chain and the head is scalar."""

    layers: list[DenseLayer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a model needs at least one layer")
        for i, layer in enumerate(self.layers):
            w, b = layer.weights, layer.biases
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {i} has inconsistent shapes")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {i} has non-finite entries")
            if i > 0 and w.shape[1] != self.layers[i - 1].weights.shape[0]:
                raise ValueError(f"layer {i} input does not chain")
        if self.layers[-1].weights.shape[0] != 1:
            raise ValueError("output layer must be scalar")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *(l.weights.shape[0] for l in self.layers))

    def copy(self) -> "ModelParams":
        return ModelParams([DenseLayer(l.weights.copy(), l.biases.copy()) for l in self.layers])


def combine(fn: Callable[..., np.ndarray], *params: ModelParams) -> ModelParams:
    """Apply fn elementwise across matching arrays of several models."""
    first = params[0]
    for other in params[1:]:
        if other.dims() != first.dims():
            raise ValueError("parameter structures do not match")
    layers = []
    for parts in zip(*(p.layers for p in params)):
        w = np.asarray(fn(*(part.weights for part in parts)), dtype=np.float64)
        b = np.asarray(fn(*(part.biases for part in parts)), dtype=np.float64)
        layers.append(DenseLayer(w, b))
    return ModelParams(layers)


def init_params(
    seed: int | np.random.Generator,
    hidden: tuple[int, ...] = DEFAULT_HIDDEN,
    input_dim: int = 6,
) -> ModelParams:
    """Seeded Glorot-uniform weights, zero biases."""
    rng = derive_rng(seed, "init") if isinstance(seed, int) else seed
    sizes = (input_dim, *hidden, 1)
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(DenseLayer(w, np.zeros(fan_out)))
    return ModelParams(layers)


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def _as_matrix(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ValueError(
            f"expected inputs with {params.input_dim} features, got shape {x.shape}"
        )
    return x, squeeze


def forward(params: ModelParams, x: np.ndarray) -> np.ndarray | float:
    """Predicted link probability; accepts one row or a batch."""
    a, squeeze = _as_matrix(params, x)
    for layer in params.layers[:-1]:
        a = _softplus(a @ layer.weights.T + layer.biases)
    head = params.layers[-1]
    p = expit(a @ head.weights.T + head.biases)[:, 0]
    return float(p[0]) if squeeze else p


def bce_loss(p: np.ndarray | float, y: np.ndarray | float) -> np.ndarray | float:
    """Binary cross entropy with probabilities clamped to [eps, 1-eps]."""
    p = np.clip(np.asarray(p, dtype=np.float64), LOSS_EPS, 1.0 - LOSS_EPS)
    y = np.asarray(y, dtype=np.float64)
    out = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(out) if out.ndim == 0 else out


def mean_loss(params: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    p = forward(params, np.atleast_2d(x))
    return float(np.mean(bce_loss(p, y)))


def gradient(params: ModelParams, x: np.ndarray, y: np.ndarray) -> ModelParams:
    """Mean-over-batch gradient of bce_loss(forward(x), y).

    Uses the fused sigmoid/cross-entropy form d/dz = (p - y) / m, the
    exact gradient wherever the loss clamp is inactive.
    """
    a, _ = _as_matrix(params, x)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    m = y.size
    if m == 0:
        raise ValueError("gradient needs a non-empty batch")
    if a.shape[0] != m:
        raise ValueError("feature and label counts differ")

    acts = [a]
    zs = []
    for layer in params.layers[:-1]:
        z = acts[-1] @ layer.weights.T + layer.biases
        zs.append(z)
        acts.append(_softplus(z))
    head = params.layers[-1]
    p = expit(acts[-1] @ head.weights.T + head.biases)[:, 0]

    delta = ((p - y) / m)[:, None]
    grads: list[DenseLayer] = []
    for i in range(len(params.layers) - 1, -1, -1):
        grads.append(DenseLayer(delta.T @ acts[i], delta.sum(axis=0)))
        if i > 0:
            # softplus' = sigmoid
            delta = (delta @ params.layers[i].weights) * expit(zs[i - 1])
    grads.reverse()
    return ModelParams(grads)


def sgd_step(params: ModelParams, grad: ModelParams, learning_rate: float) -> ModelParams:
    if learning_rate < 0:
        raise ValueError("learning_rate must be non-negative")
    return combine(lambda w, g: w - learning_rate * g, params, grad)


@dataclass
class TrainConfig:
    """Hyperparameters shared by the training regimes.

    meta_inner (alpha) and meta_outer (beta) default to the learning
    rate when left unset. ala_data_fraction is a percentage in (0, 100].
    """

    learning_rate: float = 0.01
    batch_size: int = 128
    local_steps: int = 100
    global_rounds: int = 30
    epochs: int = 200
    seed: int = 0
    hidden_sizes: tuple[int, ...] = DEFAULT_HIDDEN
    meta_inner: float | None = None
    meta_outer: float | None = None
    hf_delta: float = 1e-3
    ala_top_layers: int = 2
    ala_data_fraction: float = 80.0
    ala_weight_lr: float = 1.0
    ala_convergence_tol: float = 1e-3
    ala_window: int = 10
    ala_update_cap: int = 50

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if min(self.local_steps, self.global_rounds, self.epochs) < 0:
            raise ValueError("step counts must be non-negative")
        if self.meta_inner is None:
            self.meta_inner = self.learning_rate
        if self.meta_outer is None:
            self.meta_outer = self.learning_rate
        if self.hf_delta <= 0:
            raise ValueError("hf_delta must be positive")
        if self.ala_top_layers < 1:
            raise ValueError("ala_top_layers must be at least 1")
        if not 0.0 < self.ala_data_fraction <= 100.0:
            raise ValueError("ala_data_fraction is a percentage in (0, 100]")
        if self.ala_weight_lr < 0:
            raise ValueError("ala_weight_lr must be non-negative")
        if self.ala_window < 1 or self.ala_update_cap < 1:
            raise ValueError("ala_window and ala_update_cap must be positive")


class BatchStream:
    """Epoch-pass mini-batch index stream.

    Shuffles a permutation of the dataset, emits consecutive chunks of
    batch_size (the final chunk of an epoch may be shorter), reshuffles
    on exhaustion. A batch_size above the dataset size is clamped and
    flagged.
    """

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        if n < 1:
            raise ValueError("cannot stream batches from an empty dataset")
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        self.n = n
        self.clamped = batch_size > n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self._order = np.empty(0, dtype=np.int64)
        self._pos = 0

    def next_indices(self) -> np.ndarray:
        if self._pos >= len(self._order):
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        chunk = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return chunk


def train_steps(
    params: ModelParams,
    x: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator | BatchStream,
    *,
    steps: int | None = None,
    flags: set[str] | None = None,
) -> ModelParams:
    """Run seeded mini-batch SGD steps; zero steps returns a copy.

    Accepts either a Generator (a fresh stream is created) or an existing
    BatchStream whose position carries over between calls.
    """
    n_steps = config.local_steps if steps is None else steps
    if n_steps < 0:
        raise ValueError("steps must be non-negative")
    stream = (
        rng if isinstance(rng, BatchStream) else BatchStream(len(y), config.batch_size, rng)
    )
    if stream.clamped and flags is not None:
        flags.add("batch_size_clamped")
    for _ in range(n_steps):
        idx = stream.next_indices()
        params = sgd_step(params, gradient(params, x[idx], y[idx]), config.learning_rate)
    return params.copy() if n_steps == 0 else params


def epochs_to_steps(n: int, batch_size: int, epochs: int) -> int:
    """SGD steps needed for `epochs` full passes under the epoch stream."""
    if n < 1:
        raise ValueError("empty dataset")
    per_epoch = -(-n // min(batch_size, n))
    return per_epoch * epochs


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Probability a positive outscores a negative, ties counted half.

    Computed from mid-ranks, which matches the pairwise definition
    exactly. Raises UndefinedAucError when one class is missing.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = scores.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAucError("AUC needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # mid-rank, 1-based
        i = j + 1
    rank_sum = float(ranks[pos].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    mean_loss: float
    auc: float
    tp: int
    fp: int
    tn: int
    fn: int


def evaluate(params: ModelParams, x: np.ndarray, y: np.ndarray, threshold: float = 0.5) -> MetricsReport:
    """Threshold at 0.5 (ties predict positive) and score a test split."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape[0] != y.size or y.size == 0:
        raise ValueError("evaluation needs matching, non-empty features and labels")
    p = forward(params, x)
    pred = p >= threshold
    actual = y == 1
    tp = int(np.sum(pred & actual))
    fp = int(np.sum(pred & ~actual))
    tn = int(np.sum(~pred & ~actual))
    fn = int(np.sum(~pred & actual))
    return MetricsReport(
        accuracy=(tp + tn) / y.size,
        mean_loss=float(np.mean(bce_loss(p, y))),
        auc=auc(p, y),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
    )


def _params_bytes(params: ModelParams) -> bytes:
    parts = [struct.pack("<II", params.n_layers, params.input_dim)]
    for layer in params.layers:
        parts.append(struct.pack("<I", layer.weights.shape[0]))
    for layer in params.layers:
        parts.append(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.biases, dtype="<f8").tobytes())
    return b"".join(parts)


def params_checksum(params: ModelParams) -> str:
    """SHA-256 over the checkpoint byte layout (without standardizer)."""
    return hashlib.sha256(_params_bytes(params)).hexdigest()


def save_checkpoint(
    path: str | Path, params: ModelParams, standardizer: Standardizer | None = None
) -> None:
    blob = [_MAGIC, _params_bytes(params)]
    if standardizer is None:
        blob.append(struct.pack("<B", 0))
    else:
        if standardizer.mean.shape != (params.input_dim,):
            raise ValueError("standardizer does not match the model input dimension")
        blob.append(struct.pack("<B", 1))
        blob.append(np.ascontiguousarray(standardizer.mean, dtype="<f8").tobytes())
        blob.append(np.ascontiguousarray(standardizer.std, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(blob))


def load_checkpoint(path: str | Path) -> tuple[ModelParams, Standardizer | None]:
    raw = Path(path).read_bytes()
    if raw[: len(_MAGIC)] != _MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    off = len(_MAGIC)
    n_layers, in_dim = struct.unpack_from("<II", raw, off)
    off += 8
    outs = []
    for _ in range(n_layers):
        (out,) = struct.unpack_from("<I", raw, off)
        outs.append(out)
        off += 4
    layers = []
    fan_in = in_dim
    for out in outs:
        w = np.frombuffer(raw, dtype="<f8", count=out * fan_in, offset=off).reshape(out, fan_in)
        off += 8 * out * fan_in
        b = np.frombuffer(raw, dtype="<f8", count=out, offset=off)
        off += 8 * out
        layers.append(DenseLayer(w.copy(), b.copy()))
        fan_in = out
    (has_std,) = struct.unpack_from("<B", raw, off)
    off += 1
    standardizer = None
    if has_std:
        mean = np.frombuffer(raw, dtype="<f8", count=in_dim, offset=off).copy()
        off += 8 * in_dim
        std = np.frombuffer(raw, dtype="<f8", count=in_dim, offset=off).copy()
        off += 8 * in_dim
        standardizer = Standardizer(mean=mean, std=std)
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return ModelParams(layers), standardizer
