"""Command-line entry point: ``mrssm synth|forecast|compare``.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 file I/O
problems, 4 numerical failures.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .data import SplitSpec, generate_synthetic, load_csv, write_components_csv, write_csv
from .errors import DataError, MrssmError, NumericalSingularityError, ValidationError
from .evaluation import (
    choose_starts,
    decile_means,
    evaluate,
    run_protocol,
    write_latent_csv,
    write_per_sample_csv,
    write_trajectory_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


class StageError(Exception):
    """Wraps an error with the pipeline stage it came from."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def exit_code(exc: BaseException) -> int:
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, (NumericalSingularityError, np.linalg.LinAlgError, FloatingPointError, ArithmeticError)):
        return EXIT_NUMERICAL
    if isinstance(cause, (DataError, OSError, cfgmod.ConfigFileError)):
        return EXIT_IO
    if isinstance(cause, ValidationError):
        return EXIT_CONFIG
    raise exc


# -- data --------------------------------------------------------------------------

def _load_dataset(cfg):
    """Returns ``(series, name, synthetic_dataset_or_None)``."""
    if cfg.data.path is None:
        ds = generate_synthetic(cfg.seed, cfg.synthetic.spec())
        return ds.series, cfg.data.name or "synthetic", ds
    columns = {"timestamp": cfg.data.timestamp_column, "value": cfg.data.value_column}
    series = load_csv(cfg.data.path, columns, np.timedelta64(cfg.data.sample_minutes, "m"))
    return series, cfg.data.name or Path(cfg.data.path).stem, None


def _prepare_out(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(cfgmod.dump_config(cfg))
    return out


# -- commands ------------------------------------------------------------------------

def cmd_synth(cfg) -> list[Path]:
    with stage("synthesize"):
        ds = generate_synthetic(cfg.seed, cfg.synthetic.spec())
    with stage("write"):
        out = _prepare_out(cfg)
        write_csv(ds.series, out / "series.csv")
        write_components_csv(ds, out / "components.csv")
    lo, hi = ds.series.value_range()
    print(f"synth: {len(ds.series)} samples ({cfg.synthetic.days} days, seed {cfg.seed}), "
          f"range [{lo:.3f}, {hi:.3f}], {len(ds.inflections)} inflections -> {out}")
    return [out / "series.csv", out / "components.csv"]


def _forecast_start(cfg, series, synthetic) -> int:
    if cfg.forecast.split_index is not None:
        return cfg.forecast.split_index
    if synthetic is not None:
        return cfg.synthetic.split_index or len(series) // 2
    return len(series) - cfg.forecast.horizon


def cmd_forecast(cfg) -> dict:
    with stage("load"):
        series, name, synthetic = _load_dataset(cfg)
    with stage("split"):
        start = _forecast_start(cfg, series, synthetic)
        SplitSpec(start, cfg.forecast.horizon).validate(len(series))
        variant = cfg.variant()
        variant.training_window(series, start)
    with stage("forecast"):
        result = evaluate(variant, series, start, cfg.forecast.horizon)
    first, last = decile_means(result.nrmse_per_sample)
    summary = {
        "dataset": name,
        "model": variant.name,
        "kind": variant.spec.model_kind,
        "reversion": None if variant.reversion is None else {
            "components": list(variant.reversion.components),
            "weighting": variant.reversion.weighting,
            "lam": variant.reversion.lam,
            "pseudo_obs_cov": variant.reversion.pseudo_obs_cov,
            "attractor_mean": [float(x) for x in result.attractor_mean],
        },
        "start": start,
        "horizon": result.horizon,
        "nrmse": result.nrmse_total,
        "nrmse_first_decile": first,
        "nrmse_last_decile": last,
        "wall_time": result.wall_time,
    }
    with stage("write"):
        out = _prepare_out(cfg)
        write_trajectory_csv(result, out / "forecast.csv")
        write_latent_csv(result, out / "latent.csv")
        write_per_sample_csv(result, out / "per_sample_nrmse.csv")
        (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        (out / "report.txt").write_text(
            f"dataset   {name}\nmodel     {variant.name} ({variant.spec.model_kind})\n"
            f"start     {start}\nhorizon   {result.horizon}\nNRMSE (%) {result.nrmse_total:.2f}\n"
            f"first/last decile per-sample NRMSE (%) {first:.2f} / {last:.2f}\n"
        )
    print(f"forecast: {variant.name} on {name} from {start}, {result.horizon} steps, NRMSE {result.nrmse_total:.2f}% -> {out}")
    return summary


def cmd_compare(cfg):
    with stage("load"):
        series, name, synthetic = _load_dataset(cfg)
    with stage("starts"):
        p = cfg.protocol
        candidates = synthetic.inflections if (p.at_inflections and synthetic is not None) else None
        starts = choose_starts(len(series), p.starts, p.horizon, p.train_len,
                               cfgmod.default_seed_sequence(cfg.seed, 1), candidates)
        variants = cfg.variants()
    with stage("protocol"):
        report, results = run_protocol(variants, series, starts, p.horizon, name, keep_results=True)
    with stage("write"):
        out = _prepare_out(cfg)
        (out / "report.json").write_text(report.to_json() + "\n")
        (out / "report.txt").write_text(report.to_text())
        _write_mean_curves(report, results, name, out / "per_sample_nrmse.csv")
    print(report.to_text(), end="")
    print(f"compare: {len(variants)} models x {len(starts)} starts -> {out}")
    return report


def _write_mean_curves(report, results, dataset, path: Path) -> None:
    """Per-sample NRMSE averaged over the successful starts of each model."""
    curves = {}
    for m in report.models:
        rows = [results[m, s].nrmse_per_sample for s in report.starts[dataset] if (m, s) in results]
        curves[m] = np.nanmean(rows, axis=0) if rows else np.full(report.horizon, np.nan)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step"] + list(report.models))
        for k in range(report.horizon):
            w.writerow([k + 1] + ["" if not np.isfinite(curves[m][k]) else repr(float(curves[m][k])) for m in report.models])


# -- argument handling ------------------------------------------------------------------

COMMANDS = {"synth": cmd_synth, "forecast": cmd_forecast, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrssm", description="State-space forecasting with mean reversion.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("synth", "write a synthetic dataset and its components"),
        ("forecast", "filter a training window and forecast from its end"),
        ("compare", "run the multi-start comparison protocol"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        if name != "synth":
            p.add_argument("--no-reversion", action="store_true", help="skip pseudo-observation updates")
            p.add_argument("--weighted-lambda", type=float, metavar="X", help="use weighted reversion with decay X")
            p.add_argument("--horizon", type=int, metavar="N")
            p.add_argument("--model", choices=["linear", "nonlinear", "dlm"])
    return parser


def resolve_config(args) -> "cfgmod.RunConfig":
    cfg = cfgmod.load_config(args.config) if args.config else cfgmod.RunConfig()
    return cfgmod.apply_overrides(
        cfg,
        seed=args.seed,
        out=args.out,
        horizon=getattr(args, "horizon", None),
        model=getattr(args, "model", None),
        no_reversion=getattr(args, "no_reversion", False),
        weighted_lambda=getattr(args, "weighted_lambda", None),
        scope="compare" if args.command == "compare" else "forecast",
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg)
    except (StageError, MrssmError, OSError) as exc:
        code = exit_code(exc)
        print(f"mrssm {args.command}: error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
