"""Command-line front end: ``drformer {train,eval,synth,inspect}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ALL_KEYS, MODEL_KEYS, RunConfig, parse_config, write_config
from .dataset import generate_synthetic, load_csv, save_csv, split_and_standardize
from .model import ForecastModel
from .tokenizer import trf_histogram
from .training import MetricsReport, evaluate, fold_channels, batched_predict, train

log = logging.getLogger("drformer")

CHECKPOINT_NAME = "checkpoint.drf"


class RunFailure(RuntimeError):
    pass


class Outputs:
    """Tracks files written by a command so a failed run can remove them."""

    def __init__(self):
        self.files: list[Path] = []

    def path(self, p) -> Path:
        p = Path(p)
        if not p.exists():
            self.files.append(p)
        return p

    def cleanup(self) -> None:
        for p in self.files:
            p.unlink(missing_ok=True)


def load_series(cfg: RunConfig):
    if cfg.data:
        if not Path(cfg.data).is_file():
            raise RunFailure(f"data file not found: {cfg.data}")
        return load_csv(cfg.data, cfg.timestamp_column)
    return generate_synthetic(cfg.synthetic_spec())


def format_metrics(summary: dict, extra: dict | None = None) -> str:
    lines = [f"{k}: {v}" for k, v in {**summary, **(extra or {})}.items() if not isinstance(v, (list, dict))]
    block = json.dumps(summary, sort_keys=True)
    return "\n".join(lines) + "\n\n```json\n" + block + "\n```\n"


def read_metrics(path) -> dict:
    """Parse the fenced JSON block of a metrics file."""
    text = Path(path).read_text(encoding="utf-8")
    start = text.index("```json\n") + len("```json\n")
    return json.loads(text[start : text.index("```", start)])


def report_summary(report: MetricsReport) -> dict:
    return {
        "mse": report.mse,
        "mae": report.mae,
        "params": report.params,
        "seconds": report.seconds,
        "split": report.split,
        "windows": report.windows,
        "scale": report.scale,
        "per_horizon_mse": report.per_horizon_mse,
        "per_horizon_mae": report.per_horizon_mae,
    }


def run_train(cfg: RunConfig, out: Outputs) -> int:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out.path(out_dir / "config.txt"))
    ds = split_and_standardize(load_series(cfg), cfg.ratios, cfg.model.input_len, cfg.model.horizon)
    model = ForecastModel(cfg.model)
    t0 = time.perf_counter()
    model, history = train(model, ds)
    seconds = time.perf_counter() - t0
    meta = {"data": cfg.data or "synthetic", "ratios": list(cfg.ratios), "scale": "standardized"}
    save_checkpoint(model, out.path(out_dir / CHECKPOINT_NAME), meta)
    val = evaluate(model, ds, "val")
    summary = {
        "mse": val.mse,
        "mae": val.mae,
        "params": model.num_parameters(),
        "seconds": seconds,
        "split": "val",
        "scale": "standardized",
        "active_params": model.num_active_parameters(),
        "steps": history.total_steps,
        "mask_updates": history.mask_updates,
        "best_epoch": history.best_epoch,
        "epochs": [vars(r) for r in history.epochs],
    }
    out.path(out_dir / "metrics.txt").write_text(format_metrics(summary), encoding="utf-8")
    print(f"trained {history.total_steps} steps, val mse {val.mse:.6f}, checkpoint {out_dir / CHECKPOINT_NAME}")
    return 0


def checkpoint_path(cfg: RunConfig) -> Path:
    return Path(cfg.checkpoint) if cfg.checkpoint else Path(cfg.out_dir) / CHECKPOINT_NAME


def explicit_model_fields(cfg: RunConfig) -> dict:
    return {k: getattr(cfg.model, k) for k in MODEL_KEYS if k in cfg.explicit}


def run_eval(cfg: RunConfig, out: Outputs) -> int:
    model, _ = load_checkpoint(checkpoint_path(cfg), explicit_model_fields(cfg))
    mc = model.config
    ds = split_and_standardize(load_series(cfg), cfg.ratios, mc.input_len, mc.horizon)
    report = evaluate(model, ds, cfg.split)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out.path(out_dir / f"eval_{cfg.split}.txt")
    path.write_text(format_metrics(report_summary(report)), encoding="utf-8")
    if cfg.dump_predictions:
        x, y = ds.windows(cfg.split)
        n, _, c = x.shape
        pred = batched_predict(model, fold_channels(x)).reshape(n, c, -1).transpose(0, 2, 1)
        np.savez(out.path(out_dir / f"predictions_{cfg.split}.npz"), inputs=x, targets=y, predictions=pred)
    print(f"{cfg.split} mse {report.mse:.6f} mae {report.mae:.6f} ({report.windows} windows)")
    return 0


def run_synth(cfg: RunConfig, out: Outputs) -> int:
    path = Path(cfg.data) if cfg.data else Path(cfg.out_dir) / "synthetic.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    series = generate_synthetic(cfg.synthetic_spec())
    save_csv(series, out.path(path))
    print(f"wrote {series.length} rows x {series.num_channels} channels to {path}")
    return 0


def run_inspect(cfg: RunConfig, out: Outputs) -> int:
    """Print tRF histograms; uses a fresh model from the config when no checkpoint is named."""
    if cfg.checkpoint:
        model, _ = load_checkpoint(cfg.checkpoint)
        source = cfg.checkpoint
    else:
        model = ForecastModel(cfg.model)
        source = "fresh model"
    layer = model.tokenizer
    print(f"# {source}: P={layer.patch_len} D={layer.dim} G={layer.num_groups} SR={layer.sparse_ratio}")
    hist = trf_histogram(layer)
    for g in range(1, layer.num_groups + 1):
        active = layer.active_counts()[g - 1]
        budget = layer.group_budget(g) if layer.dynamic else layer.patch_len * layer.group_width
        cells = layer.region_rows(g) * layer.group_width if layer.dynamic else layer.patch_len * layer.group_width
        counts = " ".join(f"{trf}:{n}" for trf, n in sorted(hist[g].items()))
        print(f"group {g}: active {active}/{budget} (region {cells}, occupancy {active / cells:.3f}) tRF {counts}")
    return 0


COMMANDS = {"train": run_train, "eval": run_eval, "synth": run_synth, "inspect": run_inspect}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drformer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("-v", "--verbose", action="store_true")
        for key in ALL_KEYS:
            p.add_argument(f"--{key}", dest=f"opt_{key}", metavar="VALUE")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    out = Outputs()
    try:
        overrides = {k: getattr(args, f"opt_{k}") for k in ALL_KEYS if getattr(args, f"opt_{k}") is not None}
        cfg = parse_config(args.config, overrides)
        return COMMANDS[args.command](cfg, out)
    except (ValueError, OSError, RuntimeError, CheckpointError) as exc:
        out.cleanup()
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
