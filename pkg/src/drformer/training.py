"""Optimizer, training loop with interleaved mask updates, and evaluation."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataset import WindowedDataset
from .model import ForecastModel, mse_loss
from .numerics import Tensor
from .tokenizer import PruneGrowSchedule, prune_grow_step

log = logging.getLogger(__name__)

EVAL_CHUNK = 512


class TrainingError(RuntimeError):
    pass


class TrainingDiverged(TrainingError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became {loss} at step {step}")
        self.step = step
        self.loss = loss


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def reset(self, param: Tensor, where: np.ndarray) -> None:
        """Clear moment estimates of ``param`` at the positions flagged in ``where``."""
        for p, m, v in zip(self.params, self.m, self.v):
            if p is param:
                m[where] = 0.0
                v[where] = 0.0
                return
        raise KeyError("parameter is not managed by this optimizer")


def fold_channels(x: np.ndarray) -> np.ndarray:
    """(n, L, C) -> (n*C, L); each channel becomes an independent sample."""
    n, length, c = x.shape
    return x.transpose(0, 2, 1).reshape(n * c, length)


def batched_predict(model: ForecastModel, x: np.ndarray) -> np.ndarray:
    """(B, I) -> (B, O) without building more than EVAL_CHUNK rows of graph at a time."""
    out = [model.forward_batch(x[i : i + EVAL_CHUNK]).data for i in range(0, len(x), EVAL_CHUNK)]
    return np.concatenate(out) if out else np.empty((0, model.config.horizon))


def _fsum_mean(a: np.ndarray) -> float:
    return math.fsum(a.ravel()) / a.size


@dataclass
class EpochRecord:
    epoch: int
    step: int
    train_loss: float
    val_mse: float


@dataclass
class History:
    epochs: list[EpochRecord] = field(default_factory=list)
    mask_updates: int = 0
    best_epoch: int = -1
    total_steps: int = 0
    update_every: int = 0

    def __len__(self) -> int:
        return len(self.epochs)

    @property
    def val_mse(self) -> list[float]:
        return [r.val_mse for r in self.epochs]


def update_interval(iters_per_epoch: int, fraction: float) -> int:
    return max(1, math.floor(fraction * iters_per_epoch))


def train(
    model: ForecastModel,
    dataset: WindowedDataset,
    on_mask_update: Callable[[int, ForecastModel], None] | None = None,
) -> tuple[ForecastModel, History]:
    """Adam training with prune-and-grow every ``update_interval`` steps; keeps the best-val weights."""
    cfg = model.config
    history = History()
    if cfg.epochs == 0 and cfg.max_steps == 0:
        return model, history
    x_tr, y_tr = dataset.windows("train")
    x_va, y_va = dataset.windows("val")
    if len(x_tr) == 0 or len(x_va) == 0:
        raise TrainingError("train and val splits must both contain at least one window")
    x_tr, y_tr = fold_channels(x_tr), fold_channels(y_tr)
    x_va, y_va = fold_channels(x_va), fold_channels(y_va)

    samples = len(x_tr)
    iters = math.ceil(samples / cfg.batch_size)
    if cfg.max_steps:
        total = cfg.max_steps
        epochs = math.ceil(total / iters)
    else:
        total = cfg.epochs * iters
        epochs = cfg.epochs
    every = update_interval(iters, cfg.dt_fraction)
    history.total_steps, history.update_every = total, every
    schedule = PruneGrowSchedule(total, every, cfg.alpha, cfg.mask_strategy)
    rng = np.random.default_rng(cfg.seed + 1)
    params = model.parameters()
    opt = Adam(list(params.values()), lr=cfg.lr)
    layer = model.tokenizer

    best = (math.inf, None, None)
    stale = 0
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(samples)
        losses = []
        for start in range(0, samples, cfg.batch_size):
            if step == total:
                break
            step += 1
            idx = order[start : start + cfg.batch_size]
            model.zero_grad()
            loss = mse_loss(model.forward_batch(x_tr[idx]), y_tr[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(step, value)
            loss.backward()
            opt.step()
            layer.apply_mask()
            losses.append(value)
            if layer.dynamic and step % every == 0:
                changed = prune_grow_step(layer, step, schedule, rng, grad=layer.weight.grad)
                opt.reset(layer.weight, changed)
                history.mask_updates += 1
                if on_mask_update is not None:
                    on_mask_update(step, model)
        val = _fsum_mean((batched_predict(model, x_va) - y_va) ** 2)
        history.epochs.append(EpochRecord(epoch, step, float(np.mean(losses)) if losses else math.nan, val))
        log.info("epoch %d step %d train %.6f val %.6f", epoch, step, history.epochs[-1].train_loss, val)
        if val < best[0]:
            best = (val, model.state_arrays(), layer.mask.copy())
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if cfg.patience and stale >= cfg.patience:
                break
        if step == total:
            break
    if best[1] is not None:
        model.load_state_arrays(best[1], best[2])
    return model, history


@dataclass
class MetricsReport:
    split: str
    mse: float
    mae: float
    per_horizon_mse: list[float]
    per_horizon_mae: list[float]
    seconds: float
    params: int
    windows: int
    scale: str = "standardized"

    def summary(self) -> dict:
        return {"mse": self.mse, "mae": self.mae, "params": self.params, "seconds": self.seconds}


def metrics_from_predictions(pred: np.ndarray, target: np.ndarray) -> tuple[float, float, list, list]:
    err = pred - target
    sq, ab = err**2, np.abs(err)
    axes = tuple(i for i in range(err.ndim) if i != 1)
    return _fsum_mean(sq), _fsum_mean(ab), sq.mean(axis=axes).tolist(), ab.mean(axis=axes).tolist()


def evaluate(model: ForecastModel, dataset: WindowedDataset, split: str = "test") -> MetricsReport:
    """MSE/MAE over every window and channel of ``split`` on the standardized scale."""
    x, y = dataset.windows(split)
    if len(x) == 0:
        raise TrainingError(f"split {split!r} has no windows")
    t0 = time.perf_counter()
    n, _, c = x.shape
    pred = batched_predict(model, fold_channels(x)).reshape(n, c, -1).transpose(0, 2, 1)
    mse, mae, ph_mse, ph_mae = metrics_from_predictions(pred, y)
    return MetricsReport(split, mse, mae, ph_mse, ph_mae, time.perf_counter() - t0, model.num_parameters(), n)
