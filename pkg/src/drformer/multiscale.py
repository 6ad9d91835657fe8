"""Hierarchical max-pool scale extraction and transposed-convolution fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import ShapeError, Tensor, conv_transpose_1d, maxpool_1d


@dataclass(frozen=True)
class ScaleSet:
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"need at least one scale, got k={self.k}")

    @property
    def kernels(self) -> tuple[int, ...]:
        return tuple(2**j for j in range(self.k))

    def lengths(self, n: int) -> list[int]:
        return [math.ceil(n / kern) for kern in self.kernels]


@dataclass
class MultiScaleTokens:
    sequences: list[Tensor]  # each (..., D, ceil(N / K_j))
    base_len: int
    kernels: tuple[int, ...]
    coords: list[tuple[int, int]] = field(default_factory=list)  # (1-based scale, position) per token

    @property
    def lengths(self) -> list[int]:
        return [s.shape[-1] for s in self.sequences]

    @property
    def total_tokens(self) -> int:
        return sum(self.lengths)


def extract_scales(tokens, scales: ScaleSet) -> MultiScaleTokens:
    """Max-pool (..., D, N) tokens with window = stride = K_j for every scale."""
    n = tokens.shape[-1]
    if n < 1:
        raise ShapeError("need at least one token")
    seqs = [tokens if kern == 1 else maxpool_1d(tokens, kern) for kern in scales.kernels]
    coords = [(j + 1, m) for j, s in enumerate(seqs) for m in range(s.shape[-1])]
    return MultiScaleTokens(seqs, n, scales.kernels, coords)


def effective_receptive_field_bound(patch_len: int, stride: int, k: int) -> int:
    if k < 1:
        raise ValueError("k must be >= 1")
    return patch_len + (2 ** (k - 1) - 1) * stride


class FusionStack:
    """One learnable (D, D, K_j) transposed-convolution kernel per scale."""

    def __init__(self, dim: int, scales: ScaleSet, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        self.dim = dim
        self.scales = scales
        std = 1.0 / math.sqrt(dim * scales.k)
        self.kernels = [
            Tensor(rng.normal(0.0, std, (dim, dim, kern)), requires_grad=True) for kern in scales.kernels
        ]

    def parameters(self) -> dict[str, Tensor]:
        return {f"fuse.{j}": k for j, k in enumerate(self.kernels)}


def fuse(outputs, stack: FusionStack, n: int) -> Tensor:
    """Upsample each scale back to length ``n`` (trailing trim) and sum."""
    expected = stack.scales.lengths(n)
    if len(outputs) != len(expected):
        raise ShapeError(f"got {len(outputs)} scales, expected {len(expected)}")
    total = None
    for seq, kernel, kern, want in zip(outputs, stack.kernels, stack.scales.kernels, expected):
        if seq.shape[-1] != want:
            raise ShapeError(f"scale K={kern} has {seq.shape[-1]} tokens, expected {want}")
        up = conv_transpose_1d(seq, kernel, kern)
        if up.shape[-1] != n:
            up = up[..., :n]
        total = up if total is None else total + up
    return total
