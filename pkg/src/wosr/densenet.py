"""Deep feed-forward waveform classifier in plain numpy.

GELU hidden layers, one sigmoid unit per known class trained one-vs-all with
binary cross-entropy, inverted dropout, and the Adamax optimizer. The 32-wide
hidden layer doubles as the embedding fed to the per-class isolation forests.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, InvalidState

FULL_WIDTHS = (2048, 1024, 256, 128, 32, 16)
DESK_WIDTHS = (512, 256, 128, 64, 32, 16)
EMBEDDING_WIDTH = 32

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(x):
    """tanh-form GELU."""
    x = np.asarray(x)
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x ** 3)))


def gelu_prime(x):
    x = np.asarray(x)
    t = np.tanh(_GELU_C * (x + _GELU_A * x ** 3))
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x ** 2)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


def sigmoid(x):
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Activation(str, enum.Enum):
    GELU = "gelu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"

    def __call__(self, z):
        if self is Activation.GELU:
            return gelu(z)
        if self is Activation.SIGMOID:
            return sigmoid(z)
        return z

    def prime(self, z, a):
        if self is Activation.GELU:
            return gelu_prime(z)
        if self is Activation.SIGMOID:
            return a * (1.0 - a)
        return np.ones_like(z)


@dataclass(frozen=True)
class LayerSpec:
    width: int
    activation: Activation = Activation.GELU
    dropout_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "activation", Activation(self.activation))
        if self.width < 1:
            raise InvalidInput("layer width must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidInput(f"dropout rate {self.dropout_rate} outside [0, 1)")


@dataclass
class MlpModel:
    layers: list
    weights: list
    biases: list
    input_dim: int
    embedding_tap: int | None = None
    input_gain: float = 1.0
    trained: bool = False
    input_mean: np.ndarray | None = None   # per-bin standardizer, set by train()
    input_scale: np.ndarray | None = None
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if (self.input_mean is None) != (self.input_scale is None):
            raise InvalidInput("input_mean and input_scale must be set together")
        if self.input_mean is not None and (self.input_mean.shape != (self.input_dim,)
                                            or self.input_scale.shape != (self.input_dim,)):
            raise InvalidInput("standardizer vectors must have length input_dim")
        fan_in = self.input_dim
        for spec, w, b in zip(self.layers, self.weights, self.biases):
            if w.shape != (fan_in, spec.width) or b.shape != (spec.width,):
                raise InvalidInput(
                    f"parameter shapes {w.shape}/{b.shape} do not chain from {fan_in} to {spec.width}"
                )
            fan_in = spec.width
        if self.embedding_tap is not None and self.layers[self.embedding_tap].width != EMBEDDING_WIDTH:
            raise InvalidInput("embedding tap must point at the 32-wide layer")

    @property
    def n_outputs(self) -> int:
        return self.layers[-1].width

    @property
    def dtype(self):
        return self.weights[0].dtype

    @property
    def standardized(self) -> bool:
        return self.input_mean is not None

    def prepare(self, x: np.ndarray) -> np.ndarray:
        """Map features to first-layer inputs: ``(x - mean) * scale`` or ``x * input_gain``."""
        if self.input_mean is not None:
            return (x - self.input_mean) * self.input_scale
        if self.input_gain != 1.0:
            return x * self.dtype.type(self.input_gain)
        return x

    def params(self) -> list:
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())


def build_mlp(input_dim: int, hidden=DESK_WIDTHS, n_outputs: int = 7, dropout=(0.2, 0.2, 0.2),
              seed: int = 0, dtype=np.float32, input_gain: float | None = None) -> MlpModel:
    """He-initialized network with GELU hidden layers and a sigmoid output layer.

    ``dropout`` lists rates for the leading hidden layers. ``input_gain``
    defaults to ``sqrt(input_dim)`` so a unit-norm input has unit RMS entries;
    it is unused once training fits a per-bin standardizer.
    """
    rng = np.random.default_rng(seed)
    rates = list(dropout) + [0.0] * (len(hidden) - len(dropout))
    layers = [LayerSpec(w, Activation.GELU, r) for w, r in zip(hidden, rates)]
    layers.append(LayerSpec(n_outputs, Activation.SIGMOID, 0.0))
    weights, biases = [], []
    fan_in = input_dim
    for spec in layers:
        w = rng.standard_normal((fan_in, spec.width)) * math.sqrt(2.0 / fan_in)
        weights.append(w.astype(dtype))
        biases.append(np.zeros(spec.width, dtype=dtype))
        fan_in = spec.width
    tap = next((i for i, s in enumerate(layers[:-1]) if s.width == EMBEDDING_WIDTH), None)
    gain = math.sqrt(input_dim) if input_gain is None else float(input_gain)
    return MlpModel(layers, weights, biases, input_dim, tap, gain)


@dataclass
class ForwardCache:
    inputs: np.ndarray  # first-layer inputs, after standardization or gain
    pre: list
    post: list
    masks: list
    model_id: int
    version: int


def _as_batch(model: MlpModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=model.dtype)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise InvalidInput(f"expected feature length {model.input_dim}, got shape {x.shape}")
    return x


def forward(model: MlpModel, x, train_mode: bool = False, dropout_seed=None):
    """Run the network on a feature vector or a (batch, input_dim) matrix.

    Returns ``(probs, cache)``; ``probs`` has shape (batch, n_outputs) and
    ``cache.post[model.embedding_tap]`` is the embedding. Dropout is active only
    when ``train_mode`` is set, using inverted scaling.
    """
    x = _as_batch(model, x)
    rng = None
    if train_mode:
        rng = dropout_seed if isinstance(dropout_seed, np.random.Generator) \
            else np.random.default_rng(dropout_seed)
    x = model.prepare(x)
    a = x
    pre, post, masks = [], [], []
    for spec, w, b in zip(model.layers, model.weights, model.biases):
        z = a @ w + b
        a = spec.activation(z)
        mask = None
        if rng is not None and spec.dropout_rate > 0:
            keep = 1.0 - spec.dropout_rate
            mask = (rng.random(a.shape) < keep).astype(a.dtype) / a.dtype.type(keep)
            a = a * mask
        pre.append(z)
        post.append(a)
        masks.append(mask)
    cache = ForwardCache(x, pre, post, masks, id(model), model.version)
    return post[-1], cache


def bce_loss(probs, targets, eps: float = 1e-7) -> float:
    """Binary cross-entropy averaged over outputs (and over the batch)."""
    p = np.clip(np.asarray(probs, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(targets, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def bce_logit_grad(probs, targets) -> np.ndarray:
    """Per-sample gradient of ``bce_loss`` w.r.t. the pre-sigmoid logits: (p - y) / n_outputs."""
    probs = np.asarray(probs)
    return (probs - np.asarray(targets, dtype=probs.dtype)) / probs.shape[-1]


def backward(model: MlpModel, cache: ForwardCache, loss_grad) -> list:
    """Backpropagate ``loss_grad`` (d loss / d output logits) to every parameter.

    Gradients are summed over the batch, so the caller chooses the batch
    normalization. Returns ``[dW0, db0, dW1, db1, ...]`` matching ``model.params()``.
    """
    if cache.model_id != id(model) or cache.version != model.version:
        raise InvalidState("forward cache is stale for this model")
    delta = np.asarray(loss_grad, dtype=model.dtype)
    if delta.ndim == 1:
        delta = delta[None, :]
    n = len(model.layers)
    grads = [None] * (2 * n)
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            # delta currently holds d loss / d post[i]
            if cache.masks[i] is not None:
                delta = delta * cache.masks[i]
            spec = model.layers[i]
            delta = delta * spec.activation.prime(cache.pre[i], cache.post[i])
        a_prev = cache.inputs if i == 0 else cache.post[i - 1]
        grads[2 * i] = a_prev.T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ model.weights[i].T
    return grads


@dataclass
class AdamaxState:
    """Optimizer moments. ``m`` holds the bias-corrected first moment."""

    m: list
    u: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamaxState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adamax_step(state: AdamaxState, params: list, grads: list, alpha: float = 0.002,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> list:
    """One in-place Adamax update; returns ``params``.

    The textbook recursion ``m <- b1*m + (1-b1)*g`` followed by division by
    ``1 - b1**t`` is carried out in its equivalent bias-corrected form
    ``m_hat <- m_hat + (g - m_hat) * (1-b1) / (1-b1**t)``. The two agree
    algebraically, but at ``t = 1`` the factor is exactly 1, so the first step
    is exactly ``-alpha * g / (|g| + eps)`` with no rounding in between.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise InvalidInput("parameter, gradient and state lists differ in length")
    state.t += 1
    gain = (1.0 - beta1) / (1.0 - beta1 ** state.t)
    for p, g, m, u in zip(params, grads, state.m, state.u):
        if p.shape != g.shape:
            raise InvalidInput(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m += (g - m) * gain
        np.maximum(beta2 * u, np.abs(g), out=u)
        p -= (alpha * (m / (u + eps))).astype(p.dtype, copy=False)
    return params


@dataclass
class TrainConfig:
    epochs: int = 45
    batch_size: int = 128
    alpha: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    validation_fraction: float = 0.1
    weight_decay: float = 0.0  # L2 penalty coefficient on weight matrices (not biases)
    standardize: bool = True   # fit per-bin mean/std on the training portion


def one_hot(labels, n: int, dtype=np.float32) -> np.ndarray:
    out = np.zeros((len(labels), n), dtype=dtype)
    out[np.arange(len(labels)), np.asarray(labels)] = 1
    return out


def split_train_val(n: int, fraction: float, seed: int):
    perm = np.random.default_rng([seed, 1]).permutation(n)
    n_val = int(round(n * fraction))
    return perm[n_val:], perm[:n_val]


def fit_standardizer(model: MlpModel, x, floor: float = 1e-6) -> MlpModel:
    """Set per-bin mean and inverse spread from ``x``; constant bins get unit scale."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    scale = np.where(sd > floor, 1.0 / np.maximum(sd, floor), 1.0)
    model.input_mean = mu.astype(model.dtype)
    model.input_scale = scale.astype(model.dtype)
    model.version += 1
    return model


def _accuracy(model, x, y, batch=1024):
    if len(x) == 0:
        return float("nan"), float("nan")
    losses, hits = 0.0, 0
    for s in range(0, len(x), batch):
        probs, _ = forward(model, x[s:s + batch])
        yb = y[s:s + batch]
        losses += bce_loss(probs, one_hot(yb, model.n_outputs)) * len(yb)
        hits += int(np.sum(np.argmax(probs, axis=1) == yb))
    return losses / len(x), hits / len(x)


def train(model: MlpModel, features, labels, config: TrainConfig | None = None, log=None):
    """Minibatch Adamax training with a seeded validation hold-out.

    Returns ``(model, trace)`` where ``trace`` holds one dict per epoch with
    training loss/accuracy (dropout active, running mean over batches) and
    validation loss/accuracy.
    """
    config = config or TrainConfig()
    x = np.asarray(features, dtype=model.dtype)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(y):
        raise InvalidInput("features must be (n, input_dim) with one label per row")
    tr_idx, val_idx = split_train_val(len(x), config.validation_fraction, config.seed)
    present = np.bincount(y[tr_idx], minlength=model.n_outputs)
    if np.any(present == 0):
        raise InvalidInput(f"classes without training samples: {np.flatnonzero(present == 0).tolist()}")

    x_tr, y_tr = x[tr_idx], y[tr_idx]
    x_val, y_val = x[val_idx], y[val_idx]
    if config.standardize and not model.standardized:
        fit_standardizer(model, x_tr)
    targets = one_hot(y_tr, model.n_outputs, model.dtype)
    params = model.params()
    state = AdamaxState.zeros_like(params)
    rng = np.random.default_rng([config.seed, 2])
    trace = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(x_tr))
        loss_sum, hits = 0.0, 0
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            probs, cache = forward(model, x_tr[idx], train_mode=True, dropout_seed=rng)
            loss_sum += bce_loss(probs, targets[idx]) * len(idx)
            hits += int(np.sum(np.argmax(probs, axis=1) == y_tr[idx]))
            grad = bce_logit_grad(probs, targets[idx]) / len(idx)
            grads = backward(model, cache, grad)
            if config.weight_decay:
                for k, w in enumerate(model.weights):
                    grads[2 * k] += config.weight_decay * w
            adamax_step(state, params, grads, config.alpha, config.beta1, config.beta2,
                        config.epsilon)
            model.version += 1
        val_loss, val_acc = _accuracy(model, x_val, y_val)
        row = {
            "epoch": epoch + 1,
            "loss": loss_sum / len(order),
            "accuracy": hits / len(order),
            "val_loss": val_loss,
            "val_accuracy": val_acc,
        }
        trace.append(row)
        if log is not None:
            log(row)
    model.trained = True
    return model, trace


def _require_trained(model: MlpModel):
    if not model.trained:
        raise InvalidState("model has not been trained")


def embed(model: MlpModel, x) -> np.ndarray:
    """Activations of the 32-wide layer with dropout off; (batch, 32) or (32,)."""
    _require_trained(model)
    if model.embedding_tap is None:
        raise InvalidState("model has no 32-wide embedding layer")
    single = np.asarray(x).ndim == 1
    _, cache = forward(model, x)
    out = cache.post[model.embedding_tap]
    return out[0] if single else out


def predict_proba(model: MlpModel, x) -> np.ndarray:
    _require_trained(model)
    probs, _ = forward(model, x)
    return probs


def predict(model: MlpModel, x):
    """Argmax class index and its sigmoid output; ties go to the lowest index.

    For a single feature vector returns ``(int, float)``, for a batch two arrays.
    """
    single = np.asarray(x).ndim == 1
    probs = predict_proba(model, x)
    cls = np.argmax(probs, axis=1)
    conf = probs[np.arange(len(cls)), cls]
    if single:
        return int(cls[0]), float(conf[0])
    return cls, conf
