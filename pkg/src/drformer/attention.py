"""Group-aware rotary attention and the post-LN transformer layer.

Every token carries a (scale index j, position m) coordinate. Queries and
keys are rotated twice: once by the normalized in-scale position m / L_j
(intra) and once by the 1-based scale index j (inter). Both rotations share
one theta table, and the attention logits are the sum of the two rotated
dot products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import ShapeError, Tensor, gelu, layer_norm, matmul, rotary, softmax_rows

PE_MODES = ("none", "rope", "grope")


class RotaryAngles:
    def __init__(self, head_dim: int, base: float = 10000.0):
        if head_dim % 2:
            raise ValueError(f"rotary head dim must be even, got {head_dim}")
        self.head_dim = head_dim
        i = np.arange(head_dim // 2)
        self.theta = base ** (-2.0 * i / head_dim)

    def tables(self, scales: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-row (cos, sin) tables, shape (len(scales), head_dim), pair entries repeated."""
        ang = np.repeat(np.outer(np.asarray(scales, dtype=np.float64), self.theta), 2, axis=1)
        return np.cos(ang), np.sin(ang)


def rotate(x, angle_scale: float, angles: RotaryAngles) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] % 2:
        raise ShapeError(f"cannot rotate odd-length vector ({x.shape[-1]})")
    if x.shape[-1] != angles.head_dim:
        raise ShapeError(f"vector length {x.shape[-1]} does not match rotary dim {angles.head_dim}")
    cos, sin = angles.tables(np.array([angle_scale]))
    return rotary(x, cos[0], sin[0]).data


@dataclass(frozen=True)
class TokenPosition:
    group: int  # 1-based scale index
    pos: int
    group_len: int

    def __post_init__(self):
        if not 0 <= self.pos < self.group_len:
            raise ValueError(f"position {self.pos} outside group of length {self.group_len}")


def intra_angle(p: TokenPosition) -> float:
    return p.pos / p.group_len


def inter_angle(p: TokenPosition) -> float:
    return float(p.group)


def positions_for(lengths) -> list[TokenPosition]:
    return [TokenPosition(j + 1, m, n) for j, n in enumerate(lengths) for m in range(n)]


class RotaryCache:
    """Precomputed rotation tables for one concatenated multi-scale sequence."""

    def __init__(self, positions: list[TokenPosition], angles: RotaryAngles, mode: str = "grope"):
        if mode not in PE_MODES:
            raise ValueError(f"unknown position encoding mode {mode!r}; choose from {PE_MODES}")
        self.mode = mode
        self.angles = angles
        self.positions = list(positions)
        if mode == "grope":
            self.intra = angles.tables(np.array([intra_angle(p) for p in positions]))
            self.inter = angles.tables(np.array([inter_angle(p) for p in positions]))
        elif mode == "rope":
            # absolute index over the concatenated sequence, no group term
            self.intra = angles.tables(np.arange(len(positions), dtype=np.float64))
            self.inter = None
        else:
            self.intra = self.inter = None

    def __len__(self) -> int:
        return len(self.positions)


class AttentionParams:
    def __init__(self, dim: int, heads: int, rng=None):
        if dim % heads:
            raise ValueError(f"model dim {dim} is not divisible by {heads} heads")
        if (dim // heads) % 2:
            raise ValueError(f"head dim {dim // heads} must be even for rotary encoding")
        rng = np.random.default_rng() if rng is None else rng
        self.dim, self.heads = dim, heads
        s = 1.0 / math.sqrt(dim)
        s4 = 1.0 / math.sqrt(4 * dim)

        def p(scale, *shape):
            return Tensor(rng.uniform(-scale, scale, shape), requires_grad=True)

        self.wq, self.wk, self.wv = p(s, dim, dim), p(s, dim, dim), p(s, dim, dim)
        self.w1, self.b1 = p(s, dim, 4 * dim), p(s, 4 * dim)
        self.w2, self.b2 = p(s4, 4 * dim, dim), p(s4, dim)
        self.ln1_gain = Tensor(np.ones(dim), requires_grad=True)
        self.ln1_shift = Tensor(np.zeros(dim), requires_grad=True)
        self.ln2_gain = Tensor(np.ones(dim), requires_grad=True)
        self.ln2_shift = Tensor(np.zeros(dim), requires_grad=True)

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def parameters(self) -> dict[str, Tensor]:
        names = ("wq", "wk", "wv", "w1", "b1", "w2", "b2", "ln1_gain", "ln1_shift", "ln2_gain", "ln2_shift")
        return {n: getattr(self, n) for n in names}


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, t, d = x.shape
    return x.reshape(*lead, t, heads, d // heads).swapaxes(-2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, t, d = x.shape
    return x.swapaxes(-2, -3).reshape(*lead, t, h * d)


def attention_logits(q: Tensor, k: Tensor, cache: RotaryCache) -> Tensor:
    """Unscaled (..., H, T, T) logits for the cache's position-encoding mode."""
    if cache.mode == "none":
        return matmul(q, k.swapaxes(-1, -2))
    cos, sin = cache.intra
    logits = matmul(rotary(q, cos, sin), rotary(k, cos, sin).swapaxes(-1, -2))
    if cache.mode == "grope":
        cos, sin = cache.inter
        logits = logits + matmul(rotary(q, cos, sin), rotary(k, cos, sin).swapaxes(-1, -2))
    return logits


def group_aware_attention(F: Tensor, cache: RotaryCache, params: AttentionParams) -> Tensor:
    """(..., T, D) -> (..., T, D); values are F @ W_V with no output projection."""
    if F.shape[-2] != len(cache):
        raise ShapeError(f"{F.shape[-2]} tokens but {len(cache)} positions")
    q = _split_heads(matmul(F, params.wq), params.heads)
    k = _split_heads(matmul(F, params.wk), params.heads)
    v = _split_heads(matmul(F, params.wv), params.heads)
    logits = attention_logits(q, k, cache) * (1.0 / math.sqrt(params.head_dim))
    return _merge_heads(matmul(softmax_rows(logits), v))


def feed_forward(F: Tensor, params: AttentionParams) -> Tensor:
    return matmul(gelu(matmul(F, params.w1) + params.b1), params.w2) + params.b2


def transformer_layer(F: Tensor, cache: RotaryCache, params: AttentionParams) -> Tensor:
    """F1 = F + LN(Attn(F)); out = F1 + LN(FFN(F1))."""
    F1 = F + layer_norm(group_aware_attention(F, cache, params), params.ln1_gain, params.ln1_shift)
    return F1 + layer_norm(feed_forward(F1, params), params.ln2_gain, params.ln2_shift)
