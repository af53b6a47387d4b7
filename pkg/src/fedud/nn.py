"""Minimal dense neural-network engine on float64 numpy arrays.

Everything the federated models are built from: per-slot embedding tables,
fully-connected layers with ReLU, a numerically stable sigmoid, BCE and MSE
losses with analytic gradients, SGD/Adam optimizers, and a finite-difference
gradient checker.

Forward passes return explicit caches; backward passes consume them and
return exact analytic gradients. All state is passed explicitly, so every
function here is pure up to the arrays it is handed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import (
    CacheError,
    NonFiniteError,
    SchemaError,
    ShapeError,
    VocabBoundsError,
)

Array = np.ndarray

# sigmoid outputs are clamped to the largest open sub-interval of (0, 1)
# representable in float64, so saturating logits never yield exactly 0 or 1
_SIGMOID_LO = np.nextafter(0.0, 1.0)
_SIGMOID_HI = np.nextafter(1.0, 0.0)

# probabilities are pulled into [eps, 1-eps] before any log
BCE_CLAMP = 1e-7

ACTIVATIONS = ("relu", "linear")


def as_f64(x) -> Array:
    return np.asarray(x, dtype=np.float64)


def check_finite(name: str, arr) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite values")


# ---------------------------------------------------------------------------
# activations and losses
# ---------------------------------------------------------------------------


def sigmoid(z: Array) -> Array:
    """Elementwise 1 / (1 + exp(-z)), strictly inside (0, 1)."""
    return np.clip(expit(as_f64(z)), _SIGMOID_LO, _SIGMOID_HI)


def bce_loss(predictions: Array, labels: Array) -> tuple[float, Array]:
    """Mean binary cross-entropy plus the fused gradient w.r.t. the logits.

    Predictions are clamped to [1e-7, 1 - 1e-7] before the log so the loss
    stays finite even for hard 0/1 inputs. The returned gradient is the
    fused sigmoid+BCE form (p - y) / batch_size, taken on the unclamped
    predictions (the exact sigmoid outputs).
    """
    p = as_f64(predictions)
    y = as_f64(labels)
    if p.shape != y.shape:
        raise ShapeError(f"predictions {p.shape} vs labels {y.shape}")
    clamped = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = float(np.mean(-y * np.log(clamped) - (1.0 - y) * np.log(1.0 - clamped)))
    check_finite("bce loss", loss)
    grad = (p - y) / p.shape[0]
    return loss, grad


def mse_loss(a: Array, b: Array) -> tuple[float, Array]:
    """Mean over the batch of the squared distance between rows of a and b.

    b is treated as a constant target: no gradient flows into it.
    grad w.r.t. a is 2 (a - b) / batch_size.
    """
    a = as_f64(a)
    b = as_f64(b)
    if a.shape != b.shape:
        raise ShapeError(f"a {a.shape} vs b {b.shape}")
    diff = a - b
    if diff.ndim > 1:
        per_sample = np.sum(diff * diff, axis=tuple(range(1, diff.ndim)))
    else:
        per_sample = diff * diff
    loss = float(np.mean(per_sample))
    check_finite("mse loss", loss)
    grad = 2.0 * diff / a.shape[0]
    return loss, grad


# ---------------------------------------------------------------------------
# embedding tables
# ---------------------------------------------------------------------------


@dataclass
class EmbeddingTable:
    """One categorical slot's embedding matrix, shape (vocab_size, dim)."""

    slot_id: str
    rows: Array

    def __post_init__(self):
        self.rows = as_f64(self.rows)
        if self.rows.ndim != 2 or self.rows.shape[0] < 1 or self.rows.shape[1] < 1:
            raise ShapeError(f"embedding table {self.slot_id}: bad shape {self.rows.shape}")

    @property
    def vocab_size(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


def init_embedding(slot_id: str, vocab_size: int, dim: int, rng: np.random.Generator,
                   scale: float = 0.01) -> EmbeddingTable:
    return EmbeddingTable(slot_id, rng.uniform(-scale, scale, size=(vocab_size, dim)))


def embed_lookup(tables: list[EmbeddingTable], indices: Array) -> Array:
    """Concatenate per-slot embedding rows in slot order.

    indices has shape (batch, n_slots); the result has shape
    (batch, n_slots * dim).
    """
    idx = np.asarray(indices)
    if idx.ndim != 2:
        raise ShapeError(f"indices must be 2-D, got shape {idx.shape}")
    if idx.shape[1] != len(tables):
        raise SchemaError(f"{idx.shape[1]} index columns for {len(tables)} slots")
    dims = {t.dim for t in tables}
    if len(dims) > 1:
        raise SchemaError(f"embedding dims differ across slots: {sorted(dims)}")
    for j, table in enumerate(tables):
        col = idx[:, j]
        if col.size and (col.min() < 0 or col.max() >= table.vocab_size):
            raise VocabBoundsError(
                f"slot {table.slot_id}: index outside [0, {table.vocab_size})")
    return np.concatenate([t.rows[idx[:, j]] for j, t in enumerate(tables)], axis=1)


def embed_backward(tables: list[EmbeddingTable], indices: Array,
                   grad_output: Array) -> list[Array]:
    """Scatter-add the output gradient back into per-table gradients."""
    idx = np.asarray(indices)
    dim = tables[0].dim
    if grad_output.shape != (idx.shape[0], len(tables) * dim):
        raise ShapeError(f"grad_output {grad_output.shape} incompatible with lookup output")
    grads = []
    for j, table in enumerate(tables):
        g = np.zeros_like(table.rows)
        np.add.at(g, idx[:, j], grad_output[:, j * dim:(j + 1) * dim])
        grads.append(g)
    return grads


# ---------------------------------------------------------------------------
# dense layers
# ---------------------------------------------------------------------------


@dataclass
class DenseLayer:
    """Affine map plus activation. weight is (out_dim, in_dim)."""

    weight: Array
    bias: Array
    activation: str = "relu"

    def __post_init__(self):
        self.weight = as_f64(self.weight)
        self.bias = as_f64(self.bias)
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("weight must be 2-D and bias 1-D")
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"weight rows {self.weight.shape[0]} != bias size {self.bias.shape[0]}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class Mlp:
    layers: list[DenseLayer] = field(default_factory=list)

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim


def init_dense(in_dim: int, out_dim: int, activation: str,
               rng: np.random.Generator) -> DenseLayer:
    # Glorot uniform: +/- sqrt(6 / (in + out)), biases zero
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    weight = rng.uniform(-limit, limit, size=(out_dim, in_dim))
    return DenseLayer(weight, np.zeros(out_dim), activation)


def init_mlp(dims: list[int], rng: np.random.Generator,
             final_activation: str = "relu") -> Mlp:
    """Build an MLP through the given widths; hidden layers use ReLU."""
    if len(dims) < 2:
        raise ShapeError("an MLP needs at least input and output widths")
    layers = []
    for i in range(len(dims) - 1):
        act = "relu" if i < len(dims) - 2 else final_activation
        layers.append(init_dense(dims[i], dims[i + 1], act, rng))
    return Mlp(layers)


# cache entry per layer: (layer input, pre-activation)
MlpCache = list


def mlp_forward(mlp: Mlp, x: Array) -> tuple[Array, MlpCache]:
    x = as_f64(x)
    if x.ndim != 2:
        raise ShapeError(f"input must be 2-D, got {x.shape}")
    if x.shape[1] != mlp.in_dim:
        raise ShapeError(f"input width {x.shape[1]} != first layer in_dim {mlp.in_dim}")
    cache: MlpCache = []
    out = x
    for layer in mlp.layers:
        pre = out @ layer.weight.T + layer.bias
        cache.append((out, pre))
        out = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
    check_finite("mlp output", out)
    return out, cache


def mlp_backward(mlp: Mlp, cache: MlpCache, grad_output: Array
                 ) -> tuple[list[tuple[Array, Array]], Array]:
    """Exact reverse pass. Returns per-layer (dW, db) plus the input gradient."""
    if len(cache) != len(mlp.layers):
        raise CacheError(f"cache holds {len(cache)} layers, model has {len(mlp.layers)}")
    grad = as_f64(grad_output)
    if grad.shape != (cache[-1][1].shape[0], mlp.out_dim):
        raise CacheError(f"grad_output {grad.shape} does not match cached forward")
    param_grads: list[tuple[Array, Array]] = [None] * len(mlp.layers)
    for i in reversed(range(len(mlp.layers))):
        layer = mlp.layers[i]
        inp, pre = cache[i]
        if inp.shape[1] != layer.in_dim or pre.shape[1] != layer.out_dim:
            raise CacheError(f"cache entry {i} does not match layer shapes")
        if layer.activation == "relu":
            grad = grad * (pre > 0.0)
        param_grads[i] = (grad.T @ inp, grad.sum(axis=0))
        grad = grad @ layer.weight
    return param_grads, grad


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


class Sgd:
    """Plain gradient descent: p <- p - lr * g."""

    kind = "sgd"

    def __init__(self, lr: float):
        self.lr = float(lr)
        self.t = 0

    def step(self, params: dict[str, Array], grads: dict[str, Array]) -> None:
        for name, g in grads.items():
            p = params[name]
            if g.shape != p.shape:
                raise ShapeError(f"{name}: grad {g.shape} vs param {p.shape}")
            p -= self.lr * g
            check_finite(name, p)
        self.t += 1

    def state_arrays(self) -> dict[str, Array]:
        return {}

    def load_state(self, arrays: dict[str, Array], t: int) -> None:
        self.t = t


class Adam:
    """Adam with bias correction: p <- p - lr * m_hat / (sqrt(v_hat) + eps)."""

    kind = "adam"

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, Array] = {}
        self.v: dict[str, Array] = {}
        self.t = 0

    def step(self, params: dict[str, Array], grads: dict[str, Array]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            p = params[name]
            if g.shape != p.shape:
                raise ShapeError(f"{name}: grad {g.shape} vs param {p.shape}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            check_finite(name, p)

    def state_arrays(self) -> dict[str, Array]:
        out = {}
        for name in self.m:
            out[name + ".m"] = self.m[name]
            out[name + ".v"] = self.v[name]
        return out

    def load_state(self, arrays: dict[str, Array], t: int) -> None:
        self.m = {}
        self.v = {}
        for key, arr in arrays.items():
            if key.endswith(".m"):
                self.m[key[:-2]] = arr.copy()
            elif key.endswith(".v"):
                self.v[key[:-2]] = arr.copy()
        self.t = t


def make_optimizer(kind: str, lr: float):
    if kind == "adam":
        return Adam(lr=lr)
    if kind == "sgd":
        return Sgd(lr=lr)
    raise ValueError(f"unknown optimizer {kind!r}")


def add_grads(a: dict[str, Array], b: dict[str, Array]) -> dict[str, Array]:
    """Elementwise sum of two gradient dicts (union of keys)."""
    out = dict(a)
    for name, g in b.items():
        out[name] = out[name] + g if name in out else g
    return out


# ---------------------------------------------------------------------------
# parameter bundles
# ---------------------------------------------------------------------------
# Parameters and gradients travel as flat dicts of name -> array. The arrays
# in a parameter dict are the live layer arrays, so in-place optimizer
# updates reach the model.


def mlp_param_dict(prefix: str, mlp: Mlp) -> dict[str, Array]:
    out = {}
    for i, layer in enumerate(mlp.layers):
        out[f"{prefix}.{i}.weight"] = layer.weight
        out[f"{prefix}.{i}.bias"] = layer.bias
    return out


def mlp_grad_dict(prefix: str, layer_grads: list[tuple[Array, Array]]) -> dict[str, Array]:
    out = {}
    for i, (dw, db) in enumerate(layer_grads):
        out[f"{prefix}.{i}.weight"] = dw
        out[f"{prefix}.{i}.bias"] = db
    return out


def table_param_dict(prefix: str, tables: list[EmbeddingTable]) -> dict[str, Array]:
    return {f"{prefix}.{t.slot_id}": t.rows for t in tables}


def table_grad_dict(prefix: str, tables: list[EmbeddingTable],
                    table_grads: list[Array]) -> dict[str, Array]:
    return {f"{prefix}.{t.slot_id}": g for t, g in zip(tables, table_grads)}


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def grad_check(params: dict[str, Array], loss_fn: Callable[[], float],
               analytic: dict[str, Array], epsilon: float = 1e-5) -> float:
    """Compare analytic gradients against central finite differences.

    loss_fn must recompute the scalar loss from the live arrays in params;
    each entry is perturbed in place by +/- epsilon and then restored.
    Returns the max over all entries of |a - n| / max(1, |a|, |n|).
    """
    if not 1e-6 <= epsilon <= 1e-4:
        raise ValueError(f"epsilon {epsilon} outside [1e-6, 1e-4]")
    worst = 0.0
    for name, grad in analytic.items():
        p = params[name].reshape(-1)
        a = as_f64(grad).reshape(-1)
        if p.shape != a.shape:
            raise ShapeError(f"{name}: analytic grad shape mismatch")
        for i in range(p.size):
            orig = p[i]
            p[i] = orig + epsilon
            loss_plus = loss_fn()
            p[i] = orig - epsilon
            loss_minus = loss_fn()
            p[i] = orig
            numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
            err = abs(a[i] - numeric) / max(1.0, abs(a[i]), abs(numeric))
            if err > worst:
                worst = err
    return worst
