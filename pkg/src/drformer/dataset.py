"""CSV ingestion, chronological splits, standardization and window construction."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

INSTANCE_EPS = 1e-8
SPLITS = ("train", "val", "test")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class RawSeries:
    channel_names: list[str]
    values: np.ndarray  # (T, C)
    timestamps: list[str] | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != len(self.channel_names):
            raise DataError(f"values shape {v.shape} does not match {len(self.channel_names)} channels")
        if np.isnan(v).any():
            raise DataError("series contains NaN")
        if self.timestamps is not None and len(self.timestamps) != v.shape[0]:
            raise DataError("timestamp count does not match series length")
        object.__setattr__(self, "values", v)

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def num_channels(self) -> int:
        return self.values.shape[1]


def load_csv(path, has_timestamp_column: bool = False) -> RawSeries:
    """Read a header-first numeric CSV. Row/column numbers in errors are 1-based file positions."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if len(rows) < 2:
        raise DataError(f"{path}: empty file or header only")
    header = [h.strip() for h in rows[0]]
    width = len(header)
    first = 1 if has_timestamp_column else 0
    if width - first < 1:
        raise DataError(f"{path}: no value columns")
    values = np.empty((len(rows) - 1, width - first))
    stamps = [] if has_timestamp_column else None
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise DataError(f"{path}: row {i} has {len(row)} columns, expected {width}")
        if stamps is not None:
            stamps.append(row[0].strip())
        for j in range(first, width):
            cell = row[j].strip()
            try:
                val = float(cell)
            except ValueError:
                raise DataError(f"{path}: non-numeric cell {cell!r} at row {i}, column {j + 1}") from None
            if math.isnan(val):
                raise DataError(f"{path}: missing value at row {i}, column {j + 1}")
            values[i - 2, j - first] = val
    return RawSeries(header[first:], values, stamps)


def save_csv(series: RawSeries, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        head = (["date"] if series.timestamps is not None else []) + list(series.channel_names)
        w.writerow(head)
        for t in range(series.length):
            row = [repr(float(v)) for v in series.values[t]]
            if series.timestamps is not None:
                row.insert(0, series.timestamps[t])
            w.writerow(row)


def num_windows(split_len: int, input_len: int, horizon: int) -> int:
    return max(split_len - input_len - horizon + 1, 0)


@dataclass(frozen=True)
class WindowedDataset:
    """Globally standardized series cut into chronological splits.

    ``bounds[name]`` is a half-open (start, stop) index range into the full
    series; windows for a split never leave that range.
    """

    input_len: int
    horizon: int
    bounds: dict[str, tuple[int, int]]
    standardize_mean: np.ndarray
    standardize_std: np.ndarray
    values: np.ndarray  # standardized (T, C)
    channel_names: list[str] = field(default_factory=list)

    @property
    def num_channels(self) -> int:
        return self.values.shape[1]

    def split_values(self, split: str) -> np.ndarray:
        start, stop = self.bounds[split]
        return self.values[start:stop]

    def num_windows(self, split: str) -> int:
        start, stop = self.bounds[split]
        return num_windows(stop - start, self.input_len, self.horizon)

    def windows(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        """Return (inputs (n, I, C), targets (n, O, C)) for every window in ``split``."""
        if split not in self.bounds:
            raise KeyError(f"unknown split {split!r}")
        n = self.num_windows(split)
        c = self.num_channels
        if n == 0:
            return np.empty((0, self.input_len, c)), np.empty((0, self.horizon, c))
        seg = self.split_values(split)
        span = self.input_len + self.horizon
        win = np.lib.stride_tricks.sliding_window_view(seg, span, axis=0)  # (n, C, span)
        win = np.ascontiguousarray(win.transpose(0, 2, 1))
        return win[:, : self.input_len], win[:, self.input_len :]

    def window_indices(self, split: str) -> list[tuple[range, range]]:
        """Absolute (input, target) index ranges for every window of ``split``."""
        start, _ = self.bounds[split]
        out = []
        for w in range(self.num_windows(split)):
            a = start + w
            out.append((range(a, a + self.input_len), range(a + self.input_len, a + self.input_len + self.horizon)))
        return out


def split_and_standardize(
    raw: RawSeries,
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    input_len: int = 96,
    horizon: int = 96,
) -> WindowedDataset:
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    total = raw.length
    n_train = int(total * ratios[0])
    n_val = int(total * ratios[1])
    bounds = {
        "train": (0, n_train),
        "val": (n_train, n_train + n_val),
        "test": (n_train + n_val, total),
    }
    if input_len + horizon > n_train:
        raise DataError(f"input_len + horizon = {input_len + horizon} exceeds train length {n_train}")
    train = raw.values[:n_train]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    flat = [raw.channel_names[c] for c in np.flatnonzero(std == 0)]
    if flat:
        raise DataError(f"constant channel(s) in train split: {', '.join(flat)}")
    values = (raw.values - mean) / std
    return WindowedDataset(input_len, horizon, bounds, mean, std, values, list(raw.channel_names))


def instance_normalize(x: np.ndarray, eps: float = INSTANCE_EPS):
    """Normalize along the time axis (axis -1). Returns (normalized, mean, std)."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    std = x.std(axis=-1, keepdims=True) + eps
    out = (x - mean) / std
    if out.ndim == 1:
        return out, float(mean[0]), float(std[0])
    return out, mean, std


def instance_denormalize(y, mean, std):
    return np.asarray(y, dtype=np.float64) * std + mean


@dataclass(frozen=True)
class SyntheticSpec:
    length: int
    channels: int
    components: list[list[tuple[float, float, float]]]  # per channel: (period, amplitude, phase)
    slope: float = 0.0
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if len(self.components) != self.channels:
            raise DataError(f"need one component list per channel ({self.channels}), got {len(self.components)}")
        for comps in self.components:
            for period, _, _ in comps:
                if period < 2:
                    raise DataError(f"periods must be >= 2, got {period}")
        if self.noise_std < 0:
            raise DataError("noise std must be non-negative")


def generate_synthetic(spec: SyntheticSpec) -> RawSeries:
    rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.length, dtype=np.float64)
    values = np.zeros((spec.length, spec.channels))
    for c, comps in enumerate(spec.components):
        for period, amp, phase in comps:
            values[:, c] += amp * np.sin(2 * np.pi * t / period + phase)
        values[:, c] += spec.slope * t
    if spec.noise_std > 0:
        values += rng.normal(0.0, spec.noise_std, size=values.shape)
    names = [f"ch{c}" for c in range(spec.channels)]
    return RawSeries(names, values)
