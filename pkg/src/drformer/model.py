"""Forecast model assembly: config, parameters and the forward pass."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .attention import PE_MODES, AttentionParams, RotaryAngles, RotaryCache, positions_for, transformer_layer
from .dataset import instance_normalize
from .multiscale import FusionStack, ScaleSet, extract_scales, fuse
from .numerics import ShapeError, Tensor, as_tensor, concat, matmul
from .tokenizer import (
    MASK_STRATEGIES,
    DynamicLinearLayer,
    PatchConfig,
    compute_num_patches,
    dense_mask,
    dynamic_forward,
    init_mask,
    patchify,
)


class ConfigError(ValueError):
    """Invalid hyperparameter value; the message names the offending key."""


@dataclass(frozen=True)
class ModelConfig:
    input_len: int = 96
    horizon: int = 96
    patch_len: int = 16
    stride: int = 4
    dim: int = 128
    groups: int = 8
    sparse_ratio: float = 0.5
    scales: int = 3
    layers: int = 3
    heads: int = 4
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 10
    max_steps: int = 0  # 0: run all epochs
    patience: int = 0  # 0: no early stopping
    dt_fraction: float = 0.3
    alpha: float = 0.5
    mask_strategy: str = "magnitude"
    dynamic_tokenizer: bool = True
    pe_mode: str = "grope"
    seed: int = 2024

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = ("input_len", "horizon", "patch_len", "stride", "dim", "groups", "scales", "heads", "batch_size")
        for key in positive:
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        for key in ("layers", "epochs", "max_steps", "patience"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be >= 0, got {getattr(self, key)}")
        if self.input_len < self.patch_len:
            raise ConfigError(f"input_len ({self.input_len}) must be >= patch_len ({self.patch_len})")
        if not 0.0 <= self.sparse_ratio <= 1.0:
            raise ConfigError(f"sparse_ratio must lie in [0, 1], got {self.sparse_ratio}")
        if self.dim % self.groups:
            raise ConfigError(f"groups: dim ({self.dim}) is not divisible by groups ({self.groups})")
        if self.dim % self.heads:
            raise ConfigError(f"heads: dim ({self.dim}) is not divisible by heads ({self.heads})")
        if (self.dim // self.heads) % 2:
            raise ConfigError(f"heads: head dim {self.dim // self.heads} must be even")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 < self.dt_fraction <= 1.0:
            raise ConfigError(f"dt_fraction must lie in (0, 1], got {self.dt_fraction}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.mask_strategy not in MASK_STRATEGIES:
            raise ConfigError(f"mask_strategy must be one of {MASK_STRATEGIES}, got {self.mask_strategy!r}")
        if self.pe_mode not in PE_MODES:
            raise ConfigError(f"pe_mode must be one of {PE_MODES}, got {self.pe_mode!r}")

    @property
    def num_patches(self) -> int:
        return compute_num_patches(self.input_len, self.patch_len, self.stride)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)


class ForecastModel:
    """Channel-independent forecaster: one set of weights applied to every variate."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        c = config
        self.patch_cfg = PatchConfig(c.input_len, c.patch_len, c.stride)
        self.num_patches = self.patch_cfg.num_patches
        self.tokenizer = DynamicLinearLayer(c.patch_len, c.dim, c.groups, c.sparse_ratio, rng)
        if c.dynamic_tokenizer:
            init_mask(self.tokenizer, rng)
        else:
            dense_mask(self.tokenizer)
        self.scales = ScaleSet(c.scales)
        self.scale_lengths = self.scales.lengths(self.num_patches)
        # one theta table shared by intra and inter rotations and by every layer
        self.angles = RotaryAngles(c.dim // c.heads)
        self.rotary = RotaryCache(positions_for(self.scale_lengths), self.angles, c.pe_mode)
        self.blocks = [AttentionParams(c.dim, c.heads, rng) for _ in range(c.layers)]
        self.fusion = FusionStack(c.dim, self.scales, rng)
        flat = c.dim * self.num_patches
        bound = 1.0 / math.sqrt(flat)
        self.head_weight = Tensor(rng.uniform(-bound, bound, (flat, c.horizon)), requires_grad=True)
        self.head_bias = Tensor(rng.uniform(-bound, bound, c.horizon), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        params = {"tokenizer.weight": self.tokenizer.weight, "tokenizer.bias": self.tokenizer.bias}
        for i, blk in enumerate(self.blocks):
            params.update({f"layers.{i}.{k}": v for k, v in blk.parameters().items()})
        params.update(self.fusion.parameters())
        params["head.weight"] = self.head_weight
        params["head.bias"] = self.head_bias
        return params

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters().values())

    def num_active_parameters(self) -> int:
        masked = int((~self.tokenizer.mask).sum())
        return self.num_parameters() - masked

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray], mask: np.ndarray | None = None) -> None:
        params = self.parameters()
        if set(arrays) != set(params):
            missing = sorted(set(params) - set(arrays))
            extra = sorted(set(arrays) - set(params))
            raise ShapeError(f"parameter names differ (missing {missing}, unexpected {extra})")
        for k, arr in arrays.items():
            if arr.shape != params[k].shape:
                raise ShapeError(f"{k}: expected shape {params[k].shape}, got {arr.shape}")
            params[k].data = np.array(arr, dtype=np.float64)
        if mask is not None:
            self.tokenizer.mask = np.array(mask, dtype=bool)

    # -- forward ---------------------------------------------------------

    def encode(self, x_norm) -> Tensor:
        """Normalized (B, I) windows -> fused (B, D, N) representation."""
        patches = patchify(x_norm, self.patch_cfg)
        tokens = dynamic_forward(patches, self.tokenizer)
        ms = extract_scales(tokens, self.scales)
        F = concat(ms.sequences, axis=-1).swapaxes(-1, -2)  # (B, T_tot, D)
        for blk in self.blocks:
            F = transformer_layer(F, self.rotary, blk)
        out = F.swapaxes(-1, -2)
        cuts = np.cumsum([0] + self.scale_lengths)
        per_scale = [out[..., cuts[j] : cuts[j + 1]] for j in range(len(self.scale_lengths))]
        return fuse(per_scale, self.fusion, self.num_patches)

    def forward_batch(self, x: np.ndarray) -> Tensor:
        """(B, I) raw windows -> (B, O) predictions on the same scale."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.input_len:
            raise ShapeError(f"expected (batch, {self.config.input_len}) windows, got {x.shape}")
        x_norm, mean, std = instance_normalize(x)
        fused = self.encode(x_norm)
        flat = fused.reshape(x.shape[0], -1)
        y = matmul(flat, self.head_weight) + self.head_bias
        return y * std + mean

    def predict(self, x: np.ndarray) -> np.ndarray:
        """(n, I, C) windows -> (n, O, C) predictions; channels share all weights."""
        x = np.asarray(x, dtype=np.float64)
        n, i, c = x.shape
        flat = x.transpose(0, 2, 1).reshape(n * c, i)
        y = self.forward_batch(flat).data
        return y.reshape(n, c, -1).transpose(0, 2, 1)


def forward(model: ForecastModel, x: np.ndarray) -> np.ndarray:
    """Forecast one (I, C) window, returning (O, C)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != model.config.input_len:
        raise ShapeError(f"expected a ({model.config.input_len}, C) window, got {x.shape}")
    return model.predict(x[None])[0]


def mse_loss(pred, target) -> Tensor:
    """Mean squared error averaged over horizon, channels and batch."""
    pred = as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} does not match target {target.shape}")
    diff = pred - target
    return (diff * diff).mean()
