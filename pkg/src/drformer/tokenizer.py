"""Static patching and the sparse, group-partitioned patch embedding.

The embedding weight is a (P, D) matrix whose columns are split into G equal
groups. Group g (1-based) may only activate weights in the last ceil(g*P/G)
rows, and at most floor((1 - SR) * ceil(g*P/G) * D/G) of them. The binary
mask is updated outside of backprop by periodic prune-and-grow steps.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .numerics import ShapeError, Tensor, as_tensor, matmul

MASK_STRATEGIES = ("magnitude", "large_magnitude", "magnitude_gradient")


def compute_num_patches(input_len: int, patch_len: int, stride: int) -> int:
    if input_len < patch_len:
        raise ValueError(f"input length {input_len} is shorter than patch length {patch_len}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    return (input_len - patch_len) // stride + 2


@dataclass(frozen=True)
class PatchConfig:
    input_len: int
    patch_len: int
    stride: int

    @property
    def num_patches(self) -> int:
        return compute_num_patches(self.input_len, self.patch_len, self.stride)


def patchify(x: np.ndarray, cfg: PatchConfig) -> np.ndarray:
    """Cut (..., I) series into (..., P, N) patches after end-padding with S copies of the last value."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != cfg.input_len:
        raise ShapeError(f"expected series of length {cfg.input_len}, got {x.shape[-1]}")
    pad = np.repeat(x[..., -1:], cfg.stride, axis=-1)
    padded = np.concatenate([x, pad], axis=-1)
    win = np.lib.stride_tricks.sliding_window_view(padded, cfg.patch_len, axis=-1)[..., :: cfg.stride, :]
    win = win[..., : cfg.num_patches, :]
    return np.ascontiguousarray(np.swapaxes(win, -1, -2))


class DynamicLinearLayer:
    """Masked (P, D) patch embedding with per-group exploration regions."""

    def __init__(self, patch_len: int, dim: int, num_groups: int, sparse_ratio: float, rng=None, dynamic: bool = True):
        if dim % num_groups:
            raise ValueError(f"embedding dim {dim} is not divisible by {num_groups} groups")
        if not 0.0 <= sparse_ratio <= 1.0:
            raise ValueError(f"sparse ratio must lie in [0, 1], got {sparse_ratio}")
        self.patch_len = patch_len
        self.dim = dim
        self.num_groups = num_groups
        self.sparse_ratio = sparse_ratio
        self.dynamic = dynamic
        rng = np.random.default_rng() if rng is None else rng
        bound = 1.0 / math.sqrt(patch_len)
        self.weight = Tensor(rng.uniform(-bound, bound, (patch_len, dim)), requires_grad=True)
        self.bias = Tensor(rng.uniform(-bound, bound, dim), requires_grad=True)
        self.mask = np.ones((patch_len, dim), dtype=bool)

    @property
    def group_width(self) -> int:
        return self.dim // self.num_groups

    def group_columns(self, g: int) -> slice:
        """Column slice of 1-based group ``g``."""
        w = self.group_width
        return slice((g - 1) * w, g * w)

    def region_rows(self, g: int) -> int:
        return math.ceil(g * self.patch_len / self.num_groups)

    def exploration_region(self, g: int) -> slice:
        """Row slice a group may activate: the last ceil(gP/G) rows."""
        return slice(self.patch_len - self.region_rows(g), self.patch_len)

    def group_budget(self, g: int) -> int:
        return math.floor((1.0 - self.sparse_ratio) * self.region_rows(g) * self.group_width)

    def region_mask(self) -> np.ndarray:
        """Boolean (P, D) map of every position any group may activate."""
        allowed = np.zeros((self.patch_len, self.dim), dtype=bool)
        for g in range(1, self.num_groups + 1):
            allowed[self.exploration_region(g), self.group_columns(g)] = True
        return allowed

    def active_counts(self) -> list[int]:
        return [int(self.mask[:, self.group_columns(g)].sum()) for g in range(1, self.num_groups + 1)]

    def apply_mask(self) -> None:
        self.weight.data[~self.mask] = 0.0

    def check_invariants(self) -> list[str]:
        """Return human-readable violations (empty when the layer is consistent)."""
        problems = []
        if np.any(self.weight.data[~self.mask] != 0.0):
            problems.append("masked weights hold non-zero values")
        if not self.dynamic:
            return problems
        outside = self.mask & ~self.region_mask()
        if outside.any():
            problems.append(f"{int(outside.sum())} active weights outside their exploration region")
        for g, count in enumerate(self.active_counts(), start=1):
            if count > self.group_budget(g):
                problems.append(f"group {g} has {count} active weights, budget {self.group_budget(g)}")
        return problems


def init_mask(layer: DynamicLinearLayer, rng) -> DynamicLinearLayer:
    """Activate exactly ``group_budget(g)`` random positions inside each group's region."""
    mask = np.zeros_like(layer.mask)
    for g in range(1, layer.num_groups + 1):
        rows, cols = layer.exploration_region(g), layer.group_columns(g)
        block = np.zeros((layer.region_rows(g), layer.group_width), dtype=bool)
        chosen = rng.choice(block.size, size=layer.group_budget(g), replace=False)
        block.flat[chosen] = True
        mask[rows, cols] = block
    layer.mask = mask
    layer.apply_mask()
    return layer


def dense_mask(layer: DynamicLinearLayer) -> DynamicLinearLayer:
    layer.mask = np.ones_like(layer.mask)
    layer.dynamic = False
    return layer


def masked_weight(layer: DynamicLinearLayer) -> Tensor:
    return layer.weight * layer.mask.astype(np.float64)


def dynamic_forward(patches, layer: DynamicLinearLayer) -> Tensor:
    """(..., P, N) patches -> (..., D, N) tokens; the mask is a constant in differentiation."""
    patches = as_tensor(patches)
    if patches.shape[-2] != layer.patch_len:
        raise ShapeError(f"patch length {patches.shape[-2]} does not match layer ({layer.patch_len})")
    w = masked_weight(layer)  # (P, D)
    tokens = matmul(w.transpose(), patches)  # (..., D, N)
    return tokens + layer.bias.reshape(layer.dim, 1)


def token_receptive_field(mask_column) -> int:
    active = np.flatnonzero(np.asarray(mask_column))
    if active.size == 0:
        return 0
    return int(active[-1] - active[0] + 1)


def trf_histogram(layer: DynamicLinearLayer) -> dict[int, Counter]:
    """Per 1-based group: Counter mapping tRF -> number of columns."""
    out = {}
    for g in range(1, layer.num_groups + 1):
        cols = layer.mask[:, layer.group_columns(g)]
        out[g] = Counter(token_receptive_field(cols[:, j]) for j in range(cols.shape[1]))
    return out


@dataclass(frozen=True)
class PruneGrowSchedule:
    total_iters: int
    update_every: int
    alpha: float = 0.5
    strategy: str = "magnitude"

    def __post_init__(self):
        if self.update_every < 1:
            raise ValueError("update_every must be >= 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.strategy not in MASK_STRATEGIES:
            raise ValueError(f"unknown masking strategy {self.strategy!r}; choose from {MASK_STRATEGIES}")


def anneal_count(t: int, total: int, alpha: float, active_count: int) -> int:
    """Cosine-annealed number of weights to swap at step ``t`` of ``total``."""
    if not 0 <= t <= total:
        raise ValueError(f"step {t} outside [0, {total}]")
    if t == total:
        return 0
    return math.floor(alpha / 2.0 * (1.0 + math.cos(t * math.pi / total)) * active_count)


def prune_grow_step(layer: DynamicLinearLayer, t: int, schedule: PruneGrowSchedule, rng, grad=None):
    """Swap n active weights for n fresh ones in every group.

    Returns a boolean (P, D) map of positions whose mask bit changed, so the
    caller can reset optimizer state there. Grow candidates are the region's
    positions that were inactive before this step's pruning.
    """
    changed = np.zeros_like(layer.mask)
    if not layer.dynamic:
        return changed
    w = layer.weight.data
    if schedule.strategy == "magnitude_gradient" and grad is None:
        raise ValueError("magnitude_gradient strategy needs the weight gradient")
    for g in range(1, layer.num_groups + 1):
        rows, cols = layer.exploration_region(g), layer.group_columns(g)
        r0, c0 = rows.start, cols.start
        block_mask = layer.mask[rows, cols]
        active = np.flatnonzero(block_mask)
        n = anneal_count(t, schedule.total_iters, schedule.alpha, active.size)
        if n == 0:
            continue
        block_w = w[rows, cols].reshape(-1)[active]
        if schedule.strategy == "magnitude":
            score = np.abs(block_w)
        elif schedule.strategy == "large_magnitude":
            score = -np.abs(block_w)
        else:
            score = np.abs(block_w * grad[rows, cols].reshape(-1)[active])
        # stable sort: ties go to the lowest flat index
        pruned = active[np.argsort(score, kind="stable")[:n]]
        candidates = np.flatnonzero(~block_mask)
        grown = rng.choice(candidates, size=min(n, candidates.size), replace=False) if candidates.size else candidates
        width = block_mask.shape[1]
        for flat_idx, bit in ((pruned, False), (grown, True)):
            rr, cc = np.divmod(flat_idx, width)
            layer.mask[r0 + rr, c0 + cc] = bit
            w[r0 + rr, c0 + cc] = 0.0
            changed[r0 + rr, c0 + cc] = True
    return changed
