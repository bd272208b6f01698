"""Toy float64 MLP trainer showing that DP and MP execute the same update.

The network is a chain of affine layers with tanh between them and a linear
output. Loss is the mean over samples of the summed squared error, so the
gradient of a 1-layer model is ``(2/N) X^T (X W - Y)``. Backprop is written
out by hand; no autodiff library is involved.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .rng import Xoshiro256


@dataclass
class ToyModel:
    dims: tuple
    theta: np.ndarray

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) < 2 or any(d < 1 for d in self.dims):
            raise ValidationError("a toy model needs >= 2 positive layer dimensions")
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (param_count(self.dims),):
            raise ValidationError(f"theta has {self.theta.size} entries, dims need {param_count(self.dims)}")
        if not np.all(np.isfinite(self.theta)):
            raise ValidationError("theta contains non-finite values")

    @property
    def n_layers(self):
        return len(self.dims) - 1

    @classmethod
    def init(cls, dims, seed=0):
        rng = Xoshiro256.stream(seed, "toy-init", 0)
        dims = tuple(dims)
        theta = []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            scale = 1.0 / math.sqrt(d_in)
            theta.extend(rng.normal(0.0, scale) for _ in range(d_in * d_out))
            theta.extend([0.0] * d_out)
        return cls(dims, np.array(theta))

    def copy(self, theta=None):
        return ToyModel(self.dims, self.theta.copy() if theta is None else theta)


def param_count(dims):
    return sum((a + 1) * b for a, b in zip(dims[:-1], dims[1:]))


def unpack(theta, dims):
    """Views (W, b) per layer; W has shape (d_in, d_out)."""
    layers = []
    pos = 0
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        w = theta[pos:pos + d_in * d_out].reshape(d_in, d_out)
        pos += d_in * d_out
        b = theta[pos:pos + d_out]
        pos += d_out
        layers.append((w, b))
    return layers


@dataclass
class ToyDataset:
    inputs: np.ndarray
    targets: np.ndarray
    seed: int = 0

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.targets.ndim != 2 or len(self.inputs) != len(self.targets):
            raise ValidationError("inputs and targets must be N x d matrices with matching N")
        if len(self.inputs) < 1:
            raise ValidationError("dataset needs at least one sample")

    def __len__(self):
        return len(self.inputs)

    @classmethod
    def generate(cls, n, d_in, d_out, seed=0, noise=0.1):
        rng = Xoshiro256.stream(seed, "toy-data", 0)
        x = np.array([[rng.normal() for _ in range(d_in)] for _ in range(n)]).reshape(n, d_in)
        w = np.array([[rng.normal() for _ in range(d_out)] for _ in range(d_in)]).reshape(d_in, d_out)
        eps = np.array([[rng.normal(0.0, noise) for _ in range(d_out)] for _ in range(n)]).reshape(n, d_out)
        return cls(x, x @ w + eps, seed)


def _stage_forward(layers, x, first, last_layer):
    """Run a contiguous block of layers; returns output and per-layer inputs/pre-activations."""
    cache = []
    h = x
    for j, (w, b) in enumerate(layers):
        idx = first + j
        z = h @ w + b
        cache.append((h, z))
        h = z if idx == last_layer else np.tanh(z)
    return h, cache


def _stage_backward(layers, cache, g_out, first, last_layer):
    """Backprop through a block given dL/d(block output); returns grads and dL/d(block input)."""
    grads = [None] * len(layers)
    g = g_out
    for j in reversed(range(len(layers))):
        idx = first + j
        w, _ = layers[j]
        h, z = cache[j]
        gz = g if idx == last_layer else g * (1.0 - np.tanh(z) ** 2)
        grads[j] = (h.T @ gz, gz.sum(axis=0))
        g = gz @ w.T
    return grads, g


def _flatten(grads):
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])


def loss(theta, dims, x, y):
    layers = unpack(theta, dims)
    out, _ = _stage_forward(layers, x, 0, len(layers) - 1)
    return float(np.sum((out - y) ** 2) / len(x))


def gradient(theta, dims, x, y):
    """Loss and its gradient for one batch."""
    layers = unpack(theta, dims)
    last = len(layers) - 1
    out, cache = _stage_forward(layers, x, 0, last)
    diff = out - y
    value = float(np.sum(diff ** 2) / len(x))
    grads, _ = _stage_backward(layers, cache, 2.0 * diff / len(x), 0, last)
    return value, _flatten(grads)


def _check_finite(value, step):
    if not math.isfinite(value):
        raise ValidationError(f"loss became non-finite at step {step}; lower the learning rate")


def _check_args(eta, steps):
    if eta < 0:
        raise ValidationError("eta must be >= 0")
    if steps < 0:
        raise ValidationError("steps must be >= 0")


def train_single(model, data, eta, steps):
    """Full-batch gradient descent."""
    _check_args(eta, steps)
    theta = model.theta.copy()
    for step in range(steps):
        value, g = gradient(theta, model.dims, data.inputs, data.targets)
        _check_finite(value, step)
        theta = theta - eta * g
    return theta


def train_dp(model, data, eta, steps, shards):
    """Equal shards, per-shard mean gradients averaged in shard order, one update per step."""
    _check_args(eta, steps)
    n = len(data)
    if shards < 1 or n % shards:
        raise ValidationError(f"{n} samples cannot be split into {shards} equal shards")
    if shards == 1:
        return train_single(model, data, eta, steps)
    size = n // shards
    theta = model.theta.copy()
    for step in range(steps):
        total = np.zeros_like(theta)
        value = 0.0
        for s in range(shards):
            part = slice(s * size, (s + 1) * size)
            v, g = gradient(theta, model.dims, data.inputs[part], data.targets[part])
            total += g
            value += v
        _check_finite(value, step)
        theta = theta - eta * (total / shards)
    return theta


def train_mp(model, data, eta, steps, cut):
    """Two sequential stages split at layer ``cut``; activations and their gradients cross by copy."""
    _check_args(eta, steps)
    n_layers = model.n_layers
    if not 0 < cut < n_layers:
        raise ValidationError(f"cut must satisfy 0 < cut < {n_layers}, got {cut}")
    dims = model.dims
    split = sum((a + 1) * b for a, b in zip(dims[:cut], dims[1:cut + 1]))
    theta_a = model.theta[:split].copy()
    theta_b = model.theta[split:].copy()
    dims_a, dims_b = dims[:cut + 1], dims[cut:]
    last = n_layers - 1
    x, y = data.inputs, data.targets
    for step in range(steps):
        layers_a = unpack(theta_a, dims_a)
        layers_b = unpack(theta_b, dims_b)
        h_a, cache_a = _stage_forward(layers_a, x, 0, last)
        boundary = h_a.copy()
        out, cache_b = _stage_forward(layers_b, boundary, cut, last)
        diff = out - y
        value = float(np.sum(diff ** 2) / len(x))
        _check_finite(value, step)
        grads_b, g_boundary = _stage_backward(layers_b, cache_b, 2.0 * diff / len(x), cut, last)
        grads_a, _ = _stage_backward(layers_a, cache_a, g_boundary.copy(), 0, last)
        theta_a = theta_a - eta * _flatten(grads_a)
        theta_b = theta_b - eta * _flatten(grads_b)
    return np.concatenate([theta_a, theta_b])


def finite_difference(theta, dims, x, y, index, h=1e-4):
    plus = theta.copy()
    minus = theta.copy()
    plus[index] += h
    minus[index] -= h
    return (loss(plus, dims, x, y) - loss(minus, dims, x, y)) / (2 * h)


def max_relative_difference(a, b):
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b) / scale)) if a.size else 0.0


def gradient_check(model, data, probes=10, seed=0, h=1e-4):
    """Largest relative error between backprop and central differences over random parameters."""
    _, g = gradient(model.theta, model.dims, data.inputs, data.targets)
    rng = Xoshiro256.stream(seed, "fd-probes", 0)
    worst = 0.0
    for _ in range(probes):
        i = int(rng.random() * model.theta.size)
        fd = finite_difference(model.theta, model.dims, data.inputs, data.targets, i, h)
        denom = max(abs(fd), abs(g[i]), 1e-8)
        worst = max(worst, float(abs(fd - g[i]) / denom))
    return worst


def verify_suite(seed=0, shards=(1, 2, 4), steps=100, dims=(6, 16, 12, 3), n=32, eta=0.05):
    """Run the equivalence checks; returns a list of (name, value, tolerance, passed)."""
    model = ToyModel.init(dims, seed)
    data = ToyDataset.generate(n, dims[0], dims[-1], seed)
    ref = train_single(model, data, eta, steps)
    rows = []
    for k in list(shards) + [n]:
        if n % k:
            rows.append((f"dp shards={k}", float("nan"), 1e-6, False))
            continue
        diff = max_relative_difference(train_dp(model, data, eta, steps, k), ref)
        rows.append((f"dp shards={k}", diff, 1e-6, diff <= 1e-6))
    for cut in range(1, len(dims) - 1):
        same = np.array_equal(train_mp(model, data, eta, steps, cut), ref)
        rows.append((f"mp cut={cut}", 0.0 if same else 1.0, 0.0, same))
    fd = gradient_check(model, data, probes=10, seed=seed)
    rows.append(("backprop vs finite differences", fd, 1e-5, fd <= 1e-5))
    return rows
