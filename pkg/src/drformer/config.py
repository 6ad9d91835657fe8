"""Flat key=value run configuration with command-line overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import SyntheticSpec
from .model import ConfigError, ModelConfig

MODEL_KEYS = tuple(f.name for f in dataclasses.fields(ModelConfig))


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: str = ""  # CSV path; empty means generate synthetic data
    timestamp_column: bool = False
    train_ratio: float = 0.7
    val_ratio: float = 0.1
    test_ratio: float = 0.2
    out_dir: str = "runs/default"
    checkpoint: str = ""
    split: str = "test"
    dump_predictions: bool = False
    synth_length: int = 2000
    synth_channels: int = 1
    synth_periods: str = "24,96"
    synth_amplitudes: str = "1.0,1.0"
    synth_phases: str = "0.0,0.0"
    synth_phase_step: float = 0.0  # extra phase added per channel index
    synth_slope: float = 0.0
    synth_noise: float = 0.1
    explicit: frozenset = frozenset()  # keys set by the user rather than defaulted

    @property
    def ratios(self) -> tuple[float, float, float]:
        return (self.train_ratio, self.val_ratio, self.test_ratio)

    def synthetic_spec(self) -> SyntheticSpec:
        periods = _floats("synth_periods", self.synth_periods)
        amps = _floats("synth_amplitudes", self.synth_amplitudes)
        phases = _floats("synth_phases", self.synth_phases)
        if not len(periods) == len(amps) == len(phases):
            raise ConfigError("synth_periods, synth_amplitudes and synth_phases must have equal lengths")
        comps = [
            [(p, a, ph + c * self.synth_phase_step) for p, a, ph in zip(periods, amps, phases)]
            for c in range(self.synth_channels)
        ]
        return SyntheticSpec(
            self.synth_length, self.synth_channels, comps, self.synth_slope, self.synth_noise, self.model.seed
        )


RUN_KEYS = tuple(f.name for f in dataclasses.fields(RunConfig) if f.name not in ("model", "explicit"))
ALL_KEYS = MODEL_KEYS + RUN_KEYS


def _floats(key: str, text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {text!r}") from None


def _default(key: str):
    if key in MODEL_KEYS:
        return getattr(ModelConfig(), key)
    return getattr(RunConfig(), key)


def coerce(key: str, text: str):
    if key not in ALL_KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = type(_default(key))
    text = text.strip()
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {text!r}") from None


def read_config_file(path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in ALL_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = value
    return out


def build_config(values: dict[str, str]) -> RunConfig:
    typed = {k: coerce(k, v) for k, v in values.items()}
    model = ModelConfig(**{k: v for k, v in typed.items() if k in MODEL_KEYS})
    run = {k: v for k, v in typed.items() if k in RUN_KEYS}
    cfg = RunConfig(model=model, explicit=frozenset(typed), **run)
    validate_run(cfg)
    return cfg


def validate_run(cfg: RunConfig) -> None:
    for key in ("train_ratio", "val_ratio", "test_ratio"):
        if not 0.0 < getattr(cfg, key) < 1.0:
            raise ConfigError(f"{key} must lie in (0, 1), got {getattr(cfg, key)}")
    if abs(sum(cfg.ratios) - 1.0) > 1e-9:
        raise ConfigError(f"train_ratio + val_ratio + test_ratio must equal 1, got {sum(cfg.ratios)}")
    if cfg.split not in ("train", "val", "test"):
        raise ConfigError(f"split must be train, val or test, got {cfg.split!r}")
    if cfg.synth_length < 2 or cfg.synth_channels < 1:
        raise ConfigError("synth_length must be >= 2 and synth_channels >= 1")
    if cfg.synth_noise < 0:
        raise ConfigError(f"synth_noise must be >= 0, got {cfg.synth_noise}")


def parse_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """File values first, then ``overrides`` (command-line flags) on top."""
    values = read_config_file(path) if path else {}
    for key, value in (overrides or {}).items():
        if key not in ALL_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = value
    return build_config(values)


def config_items(cfg: RunConfig) -> list[tuple[str, object]]:
    items = [(k, getattr(cfg.model, k)) for k in MODEL_KEYS]
    items += [(k, getattr(cfg, k)) for k in RUN_KEYS]
    return items


def format_config(cfg: RunConfig) -> str:
    lines = []
    for key, value in config_items(cfg):
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def write_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(format_config(cfg), encoding="utf-8")
    return path
