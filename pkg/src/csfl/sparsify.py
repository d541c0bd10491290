"""Magnitude pruning and binary mask algebra over model weights.

Masks cover weight matrices only; biases are never pruned or masked. A mask
entry of 1 marks a kept (nonzero) weight, 0 marks a zeroed one. Pruning uses
one global threshold across all weight tensors, zeroes exactly
floor(fraction * weight_count) entries, and breaks magnitude ties by
(layer index, flat index) ascending, so results are fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ModelParams


@dataclass
class Mask:
    tensors: list[tuple[str, np.ndarray]]  # uint8 per weight tensor, same order as params

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "Mask":
        return cls([(l.name, np.zeros(l.weights.shape, dtype=np.uint8)) for l in params.layers])

    @classmethod
    def ones_like(cls, params: ModelParams) -> "Mask":
        return cls([(l.name, np.ones(l.weights.shape, dtype=np.uint8)) for l in params.layers])

    def nnz(self) -> int:
        return int(sum(int(m.sum()) for _, m in self.tensors))

    def layer_nnz(self) -> dict[str, int]:
        return {name: int(m.sum()) for name, m in self.tensors}

    def congruent_with(self, params: ModelParams) -> bool:
        return len(self.tensors) == len(params.layers) and all(
            n == l.name and m.shape == l.weights.shape
            for (n, m), l in zip(self.tensors, params.layers)
        )


def _require_congruent(mask: Mask, params: ModelParams) -> None:
    if not mask.congruent_with(params):
        raise ValueError("mask shape does not match model weights")


def derive_mask(params: ModelParams) -> Mask:
    """Mask with 1 exactly where a weight is nonzero (0.0 of either sign counts as zero)."""
    return Mask([(l.name, (l.weights != 0.0).astype(np.uint8)) for l in params.layers])


def invert_mask(mask: Mask) -> Mask:
    return Mask([(name, (1 - m).astype(np.uint8)) for name, m in mask.tensors])


def apply_mask(params: ModelParams, mask: Mask) -> ModelParams:
    """Zero out weights where mask is 0; biases pass through untouched.

    Implemented as a select rather than a multiply so masked positions come out
    as exact +0.0 (a multiply would leave -0.0 at negative weights, which the
    wire codec's bit-level nonzero test would then ship as present values).
    """
    _require_congruent(mask, params)
    out = params.copy()
    for layer, (_, m) in zip(out.layers, mask.tensors):
        layer.weights = np.where(m != 0, layer.weights, np.float32(0.0))
    return out


def prune(params: ModelParams, fraction: float) -> tuple[ModelParams, Mask]:
    """Zero the ``floor(fraction * W)`` smallest-magnitude weights across all layers.

    Returns the pruned copy and its mask (0 exactly where the result is 0.0).
    fraction must lie in [0, 1); 0 is a no-op.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"prune fraction must be in [0, 1), got {fraction}")
    out = params.copy()
    total = out.weight_count()
    k = int(np.floor(fraction * total))
    if k > 0:
        flat = np.concatenate([np.abs(l.weights).ravel() for l in out.layers])
        # stable sort keeps concatenation order (layer idx, flat idx) among ties
        doomed = np.argsort(flat, kind="stable")[:k]
        offset = 0
        for layer in out.layers:
            size = layer.weights.size
            local = doomed[(doomed >= offset) & (doomed < offset + size)] - offset
            if local.size:
                w = layer.weights.ravel()
                w[local] = np.float32(0.0)
                layer.weights = w.reshape(layer.weights.shape)
            offset += size
    return out, derive_mask(out)


def sparsity(params: ModelParams) -> tuple[dict[str, float], float]:
    """Fraction of exactly-zero weights, per layer and over the whole model.

    Biases are excluded from every denominator.
    """
    per_layer: dict[str, float] = {}
    zeros = 0
    total = 0
    for l in params.layers:
        z = int((l.weights == 0.0).sum())
        per_layer[l.name] = z / l.weights.size
        zeros += z
        total += l.weights.size
    return per_layer, zeros / total
