"""Dense feed-forward classifier: parameters, forward pass, gradients, optimizers.

Parameters are stored as float32 (the wire precision). All internal math runs
in float64 and results are rounded back to float32, so reductions accumulate
at high precision and analytic gradients survive a central-difference check.
Everything is deterministic given explicit inputs; the only RNG entry point is
``init_random(arch, seed)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import STREAM_INIT, substream


@dataclass(frozen=True)
class Architecture:
    """Fully-connected net: input_dim -> hidden widths (ReLU) -> softmax classes."""

    input_dim: int
    hidden: tuple[int, ...]
    output_classes: int
    activation: str = "relu"

    def __post_init__(self) -> None:
        dims = (self.input_dim, *self.hidden, self.output_classes)
        if any(int(d) <= 0 for d in dims):
            raise ValueError(f"layer widths must be positive, got {dims}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden, self.output_classes)
        return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    def layer_names(self) -> list[str]:
        n = len(self.hidden)
        return [f"fc{i + 1}" for i in range(n)] + ["out"]

    def weight_count(self) -> int:
        return sum(i * o for i, o in self.layer_dims())


@dataclass(frozen=True)
class Hyperparams:
    """Local-training knobs. Defaults follow the reference sentiment-analysis setup."""

    optimizer: str = "adam"
    learning_rate: float = 0.01
    batch_size: int = 64
    local_epochs: int = 5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-7

    def __post_init__(self) -> None:
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        # The aggregation-ratio bound 1/lr is only meaningful for lr in (0, 1).
        if not 0.0 < self.learning_rate < 1.0:
            raise ValueError(f"learning_rate must be in (0, 1), got {self.learning_rate}")
        if self.batch_size <= 0 or self.local_epochs <= 0:
            raise ValueError("batch_size and local_epochs must be positive")


@dataclass
class LayerParams:
    name: str
    weights: np.ndarray  # float32, shape (fan_in, fan_out)
    bias: np.ndarray  # float32, shape (fan_out,)


@dataclass
class ModelParams:
    layers: list[LayerParams]

    def copy(self) -> "ModelParams":
        return ModelParams(
            [LayerParams(l.name, l.weights.copy(), l.bias.copy()) for l in self.layers]
        )

    def weight_count(self) -> int:
        return sum(l.weights.size for l in self.layers)

    def same_shape_as(self, other: "ModelParams") -> bool:
        return len(self.layers) == len(other.layers) and all(
            a.name == b.name and a.weights.shape == b.weights.shape and a.bias.shape == b.bias.shape
            for a, b in zip(self.layers, other.layers)
        )


def init_random(arch: Architecture, seed: int) -> ModelParams:
    """He-uniform weights, bound sqrt(6 / fan_in); zero biases. Deterministic per seed."""
    rng = substream(seed, STREAM_INIT)
    layers = []
    for name, (fan_in, fan_out) in zip(arch.layer_names(), arch.layer_dims()):
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(np.float32)
        b = np.zeros(fan_out, dtype=np.float32)
        layers.append(LayerParams(name, w, b))
    return ModelParams(layers)


def _check_inputs(params: ModelParams, inputs: np.ndarray) -> None:
    fan_in = params.layers[0].weights.shape[0]
    if inputs.ndim != 2 or inputs.shape[1] != fan_in:
        raise ValueError(
            f"inputs shape {inputs.shape} incompatible with first layer fan-in {fan_in}"
        )


def _forward_full(params: ModelParams, inputs: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Float64 forward pass. Returns per-layer inputs (activations) and output probs."""
    acts = [np.asarray(inputs, dtype=np.float64)]
    a = acts[0]
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        z = a @ layer.weights.astype(np.float64) + layer.bias.astype(np.float64)
        if i < last:
            a = np.maximum(z, 0.0)
            acts.append(a)
        else:
            z -= z.max(axis=1, keepdims=True)  # shift for stability; softmax unchanged
            e = np.exp(z)
            probs = e / e.sum(axis=1, keepdims=True)
    return acts, probs


def forward(params: ModelParams, inputs: np.ndarray) -> np.ndarray:
    """Class probabilities, shape (n, classes), float32. Rows sum to 1."""
    _check_inputs(params, inputs)
    _, probs = _forward_full(params, inputs)
    return probs.astype(np.float32)


def loss_and_grads(
    params: ModelParams, inputs: np.ndarray, labels: np.ndarray
) -> tuple[float, ModelParams]:
    """Mean softmax cross-entropy over the batch and its analytic gradients.

    Gradients come back in a ModelParams of the same shapes, float32. The
    backward pass runs in float64 so the returned values agree with central
    finite differences to well under 1e-3 relative error.
    """
    _check_inputs(params, inputs)
    labels = np.asarray(labels)
    classes = params.layers[-1].weights.shape[1]
    if labels.ndim != 1 or labels.shape[0] != inputs.shape[0]:
        raise ValueError(f"labels shape {labels.shape} does not match batch {inputs.shape[0]}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"label out of range for {classes} classes")

    n = inputs.shape[0]
    acts, probs = _forward_full(params, inputs)
    # clip only inside the log; probs themselves feed the gradient untouched
    loss = float(-np.log(np.clip(probs[np.arange(n), labels], 1e-12, None)).mean())

    delta = probs.copy()
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    grads: list[LayerParams] = [None] * len(params.layers)  # type: ignore[list-item]
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        gw = acts[i].T @ delta
        gb = delta.sum(axis=0)
        grads[i] = LayerParams(layer.name, gw.astype(np.float32), gb.astype(np.float32))
        if i > 0:
            delta = (delta @ layer.weights.astype(np.float64).T) * (acts[i] > 0.0)
    return loss, ModelParams(grads)


@dataclass
class AdamState:
    """Per-tensor first/second moments plus the step counter. Fresh state per client update."""

    step: int = 0
    m: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    v: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)


def optimizer_step(
    params: ModelParams,
    grads: ModelParams,
    hp: Hyperparams,
    state: AdamState | None = None,
) -> tuple[ModelParams, AdamState | None]:
    """One optimizer update. Returns new params and the advanced optimizer state.

    sgd: p <- p - lr * g, computed in float32.
    adam: standard bias-corrected moments; pass state=None to start fresh.
    """
    if not params.same_shape_as(grads):
        raise ValueError("gradient shapes do not match parameters")
    lr = np.float32(hp.learning_rate)
    if hp.optimizer == "sgd":
        out = [
            LayerParams(l.name, l.weights - lr * g.weights, l.bias - lr * g.bias)
            for l, g in zip(params.layers, grads.layers)
        ]
        return ModelParams(out), None

    if state is None:
        state = AdamState()
    if state.step == 0:
        state.m = [
            (np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in params.layers
        ]
        state.v = [
            (np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in params.layers
        ]
    t = state.step + 1
    b1, b2, eps = np.float32(hp.adam_beta1), np.float32(hp.adam_beta2), np.float32(hp.adam_epsilon)
    c1 = np.float32(1.0 - hp.adam_beta1**t)
    c2 = np.float32(1.0 - hp.adam_beta2**t)
    out = []
    for i, (l, g) in enumerate(zip(params.layers, grads.layers)):
        mw, mb = state.m[i]
        vw, vb = state.v[i]
        mw = b1 * mw + (np.float32(1) - b1) * g.weights
        mb = b1 * mb + (np.float32(1) - b1) * g.bias
        vw = b2 * vw + (np.float32(1) - b2) * np.square(g.weights)
        vb = b2 * vb + (np.float32(1) - b2) * np.square(g.bias)
        state.m[i] = (mw, mb)
        state.v[i] = (vw, vb)
        w = l.weights - lr * (mw / c1) / (np.sqrt(vw / c2) + eps)
        b = l.bias - lr * (mb / c1) / (np.sqrt(vb / c2) + eps)
        out.append(LayerParams(l.name, w.astype(np.float32), b.astype(np.float32)))
    state.step = t
    return ModelParams(out), state
