"""Model evaluation, client-update sparsity stats, and the training-FLOPs model.

FLOPs accounting, per dense layer (fan_in x fan_out weights) and per sample:

    forward            nnz_server MACs + fan_out bias-adds
    input gradient     fan_in * fan_out MACs (dense regardless of sparsity)
    weight derivative  nnz_active MACs

where nnz_active counts weights that are nonzero in the server model or were
touched by the client (union, per layer). One MAC costs 2 FLOPs, a bias-add 1;
activation and softmax costs are excluded. The dense baseline replaces both
nnz terms with fan_in * fan_out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .nn import Architecture, ModelParams, forward
from .sparsify import Mask, sparsity


def evaluate(params: ModelParams, test_data: Dataset) -> tuple[float, float]:
    """Accuracy (argmax, first index wins ties) and mean cross-entropy on a dataset."""
    if len(test_data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    probs = forward(params, test_data.inputs)
    pred = probs.argmax(axis=1)
    acc = float((pred == test_data.labels).mean())
    picked = probs[np.arange(len(test_data)), test_data.labels].astype(np.float64)
    loss = float(-np.log(np.clip(picked, 1e-12, None)).mean())
    return acc, loss


def client_sparsity_stats(updates: list[ModelParams]) -> tuple[dict[str, float], float]:
    """Mean exact-zero fraction of client updates, per layer and full-model."""
    if not updates:
        raise ValueError("no client updates to summarize")
    per_layer: dict[str, list[float]] = {}
    full: list[float] = []
    for u in updates:
        layer_frac, total = sparsity(u)
        for name, f in layer_frac.items():
            per_layer.setdefault(name, []).append(f)
        full.append(total)
    return {n: float(np.mean(v)) for n, v in per_layer.items()}, float(np.mean(full))


@dataclass
class LayerFlops:
    name: str
    fan_in: int
    fan_out: int
    server_nnz: int
    active_nnz: int
    dense_flops: int  # per sample
    cs_flops: int  # per sample
    bias_flops: int  # per sample, included in both totals above
    savings: float


@dataclass
class FlopsReport:
    samples: int
    epochs: int
    layers: list[LayerFlops]
    dense_total: int  # scaled by samples * epochs
    cs_total: int
    savings: float


def training_flops(
    arch: Architecture,
    server_mask: Mask,
    active_nnz: dict[str, int],
    samples: int,
    epochs: int,
) -> FlopsReport:
    """FLOPs for one client's local training versus the dense baseline.

    active_nnz maps layer name to the per-layer count of weights needing a
    derivative MAC: nonzero in the received model or updated by the client.
    """
    if samples <= 0 or epochs <= 0:
        raise ValueError("samples and epochs must be positive")
    names = arch.layer_names()
    dims = arch.layer_dims()
    if [n for n, _ in server_mask.tensors] != names:
        raise ValueError("server mask layers do not match the architecture")
    if set(active_nnz) != set(names):
        raise ValueError(f"active_nnz keys {sorted(active_nnz)} do not match layers {names}")
    layers = []
    for (name, m), (fan_in, fan_out) in zip(server_mask.tensors, dims):
        if m.shape != (fan_in, fan_out):
            raise ValueError(f"mask for {name!r} has shape {m.shape}, expected {(fan_in, fan_out)}")
        w = fan_in * fan_out
        nnz_server = int(m.sum())
        nnz_active = int(active_nnz[name])
        if not nnz_server <= nnz_active <= w:
            raise ValueError(
                f"layer {name!r}: active count {nnz_active} outside [{nnz_server}, {w}]"
            )
        bias_flops = fan_out
        cs = 2 * (nnz_server + w + nnz_active) + bias_flops
        dense = 6 * w + bias_flops
        layers.append(
            LayerFlops(
                name, fan_in, fan_out, nnz_server, nnz_active, dense, cs, bias_flops,
                1.0 - cs / dense,
            )
        )
    scale = samples * epochs
    dense_total = sum(l.dense_flops for l in layers) * scale
    cs_total = sum(l.cs_flops for l in layers) * scale
    return FlopsReport(samples, epochs, layers, dense_total, cs_total, 1.0 - cs_total / dense_total)
