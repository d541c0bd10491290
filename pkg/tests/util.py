"""Shared test helpers: random model builders and the finite-difference oracle."""

from __future__ import annotations

import numpy as np

from csfl.nn import Architecture, LayerParams, ModelParams, loss_and_grads


def rand_params(rng: np.random.Generator, dims: list[int], scale: float = 0.8) -> ModelParams:
    """Random dense float32 model for a dims[0] -> ... -> dims[-1] net."""
    layers = []
    for i in range(len(dims) - 1):
        name = f"fc{i + 1}" if i < len(dims) - 2 else "out"
        w = rng.uniform(-scale, scale, size=(dims[i], dims[i + 1])).astype(np.float32)
        b = rng.uniform(-scale, scale, size=dims[i + 1]).astype(np.float32)
        layers.append(LayerParams(name, w, b))
    return ModelParams(layers)


def rand_arch(rng: np.random.Generator, max_params: int = 200) -> Architecture:
    """Small random architecture with at most max_params weights+biases."""
    while True:
        d_in = int(rng.integers(2, 8))
        hidden = tuple(int(rng.integers(2, 8)) for _ in range(int(rng.integers(0, 3))))
        classes = int(rng.integers(2, 5))
        dims = (d_in, *hidden, classes)
        n = sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))
        if n <= max_params:
            return Architecture(d_in, hidden, classes)


def flatten(params: ModelParams) -> np.ndarray:
    parts = []
    for l in params.layers:
        parts.append(np.asarray(l.weights, dtype=np.float64).ravel())
        parts.append(np.asarray(l.bias, dtype=np.float64).ravel())
    return np.concatenate(parts)


def unflatten(vec: np.ndarray, template: ModelParams) -> ModelParams:
    layers = []
    pos = 0
    for l in template.layers:
        w = vec[pos : pos + l.weights.size].reshape(l.weights.shape)
        pos += l.weights.size
        b = vec[pos : pos + l.bias.size]
        pos += l.bias.size
        layers.append(LayerParams(l.name, w, b))
    return ModelParams(layers)


def fd_grads(
    params: ModelParams, inputs: np.ndarray, labels: np.ndarray, step: float = 1e-4
) -> np.ndarray:
    """Central-difference loss gradient, evaluated in float64."""
    base = flatten(params)
    out = np.empty_like(base)
    for i in range(base.size):
        hi = base.copy()
        lo = base.copy()
        hi[i] += step
        lo[i] -= step
        lhi, _ = loss_and_grads(unflatten(hi, params), inputs, labels)
        llo, _ = loss_and_grads(unflatten(lo, params), inputs, labels)
        out[i] = (lhi - llo) / (2.0 * step)
    return out


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
