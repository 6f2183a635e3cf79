"""Forecast scoring and the multi-start comparison protocol.

A forecaster is anything with a ``name`` and a
``forecast(series, start, horizon) -> Forecast`` method.  :class:`ModelVariant`
is the state-space implementation: it filters a training window ending at
``start``, optionally builds an attractor from the filtered beliefs, and
forecasts ``horizon`` steps.  :func:`run_protocol` scores every
forecaster at every start and collects the numbers into a
:class:`ComparisonReport`.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import filter_sequence, forecast
from .data import HANDHELD_TIMES, TimeSeries, resample_handheld
from .errors import MrssmError, ValidationError
from .meanrev import EXPONENTIAL, UNIFORM, build_attractor, forecast_with_reversion
from .models import StructuralSpec, attractor_emission, build_model, initial_belief

DEFAULT_LAMBDA = 0.1
DEFAULT_PSEUDO_COV = 1.0
NOT_IMPLEMENTED = ("SARIMA", "Prophet")


# -- metrics -------------------------------------------------------------------

def _check_metric_args(truth, fc, y_min, y_max):
    truth = np.asarray(truth, dtype=float)
    fc = np.asarray(fc, dtype=float)
    if truth.ndim != 1 or truth.shape != fc.shape or truth.size == 0:
        raise ValidationError(
            f"truth and forecast must be equal-length non-empty vectors, got {truth.shape} and {fc.shape}",
            fields=["truth", "forecast"],
        )
    if not y_max > y_min:
        raise ValidationError(f"normalisation range must be positive, got [{y_min}, {y_max}]", fields=["y_range"])
    return truth, fc, float(y_max) - float(y_min)


def nrmse(truth, fc, y_min: float, y_max: float) -> float:
    """Root mean squared error as a percentage of ``y_max - y_min``."""
    truth, fc, span = _check_metric_args(truth, fc, y_min, y_max)
    return float(100.0 * np.sqrt(np.mean((truth - fc) ** 2)) / span)


def nrmse_per_sample(truth, fc, y_min: float, y_max: float) -> np.ndarray:
    """Absolute error per sample as a percentage of the range."""
    truth, fc, span = _check_metric_args(truth, fc, y_min, y_max)
    return 100.0 * np.abs(truth - fc) / span


# -- forecasts -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Forecast:
    """Raw forecaster output: per-step observation moments and latent means."""

    obs_mean: np.ndarray
    obs_std: np.ndarray
    latent: np.ndarray = None
    latent_names: tuple = ()
    attractor_mean: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class ForecastResult:
    start: int
    obs_mean: np.ndarray
    obs_std: np.ndarray
    latent: np.ndarray
    latent_names: tuple
    truth: np.ndarray
    nrmse_total: float
    nrmse_per_sample: np.ndarray
    wall_time: float
    attractor_mean: Optional[np.ndarray] = None

    def __post_init__(self):
        h = len(self.obs_mean)
        for name in ("obs_std", "truth", "nrmse_per_sample"):
            if len(getattr(self, name)) != h:
                raise ValidationError(f"{name} length differs from horizon {h}", fields=[name])
        if self.latent is not None and len(self.latent) != h:
            raise ValidationError("latent length differs from horizon", fields=["latent"])
        if np.any(self.obs_std < 0):
            raise ValidationError("obs_std must be non-negative", fields=["obs_std"])

    @property
    def horizon(self) -> int:
        return len(self.obs_mean)


def score_forecast(fc: Forecast, series: TimeSeries, start: int, y_range, wall_time: float = 0.0) -> ForecastResult:
    """Score ``fc`` against the full-resolution truth following ``start``.

    Samples missing from the truth are left out of the total and are NaN in
    the per-sample curve.
    """
    horizon = len(fc.obs_mean)
    truth_ts = series.slice(start, start + horizon)
    ok = truth_ts.observed
    if not ok.any():
        raise ValidationError(f"no observed truth in [{start}, {start + horizon})", fields=["start"])
    y_min, y_max = y_range
    per = np.full(horizon, np.nan)
    per[ok] = nrmse_per_sample(truth_ts.values[ok], fc.obs_mean[ok], y_min, y_max)
    total = nrmse(truth_ts.values[ok], fc.obs_mean[ok], y_min, y_max)
    return ForecastResult(
        start=int(start),
        obs_mean=fc.obs_mean,
        obs_std=fc.obs_std,
        latent=fc.latent,
        latent_names=tuple(fc.latent_names),
        truth=truth_ts.values,
        nrmse_total=total,
        nrmse_per_sample=per,
        wall_time=float(wall_time),
        attractor_mean=fc.attractor_mean,
    )


@dataclass(frozen=True)
class AttractorSettings:
    """How a variant builds its attractor from the training-window beliefs."""

    components: tuple = ("trend",)
    pseudo_obs_cov: float = DEFAULT_PSEUDO_COV
    weighting: str = UNIFORM
    lam: float = DEFAULT_LAMBDA
    burn_in: Optional[int] = None  # None: one seasonal period

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        bad = []
        if not self.components:
            bad.append("components")
        if not np.all(np.asarray(self.pseudo_obs_cov, dtype=float) >= 0):
            bad.append("pseudo_obs_cov")
        if self.weighting not in (UNIFORM, EXPONENTIAL):
            bad.append("weighting")
        if not 0 < self.lam <= 1:
            bad.append("lam")
        if self.burn_in is not None and self.burn_in < 0:
            bad.append("burn_in")
        if bad:
            raise ValidationError(f"invalid attractor settings: {', '.join(bad)}", fields=bad)


@dataclass(frozen=True)
class ModelVariant:
    """A structural model plus (optionally) mean reversion.

    ``train_len`` samples before the start are filtered (all of them if
    None).  With ``handheld`` the training window is reduced to the
    ``handheld_times`` samples per day; the truth is never masked.
    """

    name: str
    spec: StructuralSpec = field(default_factory=StructuralSpec)
    reversion: Optional[AttractorSettings] = None
    train_len: Optional[int] = None
    handheld: bool = False
    handheld_times: tuple = HANDHELD_TIMES
    prior_var: float = 1e2

    def training_window(self, series: TimeSeries, start: int) -> TimeSeries:
        lo = 0 if self.train_len is None else start - self.train_len
        if lo < 0 or start > len(series):
            raise ValidationError(
                f"start {start} needs {self.train_len} training samples inside a series of {len(series)}",
                fields=["start"],
            )
        window = series.slice(lo, start)
        if self.handheld:
            window = resample_handheld(window, self.handheld_times)
        if not window.observed.any():
            raise ValidationError(f"training window before {start} has no observations", fields=["start"])
        return window

    def forecast(self, series: TimeSeries, start: int, horizon: int) -> Forecast:
        model, layout = build_model(self.spec)
        window = self.training_window(series, start)
        prior = initial_belief(self.spec, layout, window.values, window.missing_mask, self.prior_var)
        filtered = filter_sequence(model, prior, window.values, window.missing_mask)
        last = filtered[-1]
        target = None
        if self.reversion is None:
            preds = forecast(model, last, horizon)
        else:
            r = self.reversion
            burn_in = self.spec.period if r.burn_in is None else r.burn_in
            burn_in = min(burn_in, len(filtered) - 1)
            att = build_attractor(
                filtered,
                attractor_emission(layout, r.components),
                r.pseudo_obs_cov,
                weighting=r.weighting,
                lam=r.lam,
                burn_in=burn_in,
            )
            preds = [p for p, _ in forecast_with_reversion(model, last, att, horizon)]
            target = att.mean
        return Forecast(
            obs_mean=np.array([p.obs_mean[0] for p in preds]),
            obs_std=np.array([p.obs_std[0] for p in preds]),
            latent=np.array([p.state_mean for p in preds]),
            latent_names=layout.names,
            attractor_mean=target,
        )


def evaluate(forecaster, series: TimeSeries, start: int, horizon: int, y_range=None) -> ForecastResult:
    """Run one forecaster at one start and score it."""
    if y_range is None:
        y_range = series.value_range()
    t0 = time.perf_counter()
    fc = forecaster.forecast(series, start, horizon)
    elapsed = time.perf_counter() - t0
    return score_forecast(fc, series, start, y_range, elapsed)


def standard_variants(
    spec_kwargs: Optional[dict] = None,
    train_len: Optional[int] = None,
    pseudo_obs_cov: float = DEFAULT_PSEUDO_COV,
    lam: float = DEFAULT_LAMBDA,
    handheld: bool = False,
) -> list[ModelVariant]:
    """LDS, DLM and the nonlinear model with and without reversion.

    Reversion acts on the trend for LDS and DLM and on trend plus amplitude
    for the nonlinear model.
    """
    spec_kwargs = dict(spec_kwargs or {})
    out = []
    for label, kind, comps, weightings in (
        ("LDS", "linear", ("trend",), (None, UNIFORM, EXPONENTIAL)),
        ("DLM", "dlm", ("trend",), (None, UNIFORM, EXPONENTIAL)),
        ("NL", "nonlinear", ("trend", "amplitude"), (None, UNIFORM)),
    ):
        spec = StructuralSpec(model_kind=kind, **spec_kwargs)
        for w in weightings:
            suffix = {None: "", UNIFORM: "_MR", EXPONENTIAL: "_WMR"}[w]
            rev = None if w is None else AttractorSettings(comps, pseudo_obs_cov, w, lam)
            out.append(ModelVariant(label + suffix, spec, rev, train_len, handheld))
    return out


# -- protocol --------------------------------------------------------------------

def choose_starts(
    length: int,
    count: int,
    horizon: int,
    min_train: int,
    seed: int,
    candidates: Optional[Sequence[int]] = None,
) -> list[int]:
    """``count`` distinct sorted starts drawn with a seeded generator.

    Every start leaves ``min_train`` samples before it and ``horizon``
    after it.  ``candidates`` restricts the draw (e.g. to inflection points).
    """
    lo, hi = min_train, length - horizon
    if candidates is None:
        pool = np.arange(lo, hi + 1)
    else:
        pool = np.array(sorted({int(c) for c in candidates if lo <= c <= hi}), dtype=int)
    if count < 1 or pool.size < count:
        raise ValidationError(
            f"cannot draw {count} starts from {pool.size} admissible positions", fields=["starts.count"]
        )
    rng = np.random.default_rng(seed)
    return sorted(int(s) for s in rng.choice(pool, size=count, replace=False))


def box_stats(values) -> Optional[dict]:
    """Mean, median, quartiles and 1.5 IQR whiskers (clipped to the data)."""
    v = np.asarray([x for x in values if x is not None], dtype=float)
    if v.size == 0:
        return None
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    return {
        "mean": float(v.mean()),
        "median": float(med),
        "q1": float(q1),
        "q3": float(q3),
        "whisker_low": float(inside.min()),
        "whisker_high": float(inside.max()),
        "outliers": sorted(float(x) for x in v[(v < inside.min()) | (v > inside.max())]),
    }


@dataclass
class ComparisonReport:
    """NRMSE per (dataset, model, start); ``None`` marks a failed cell."""

    models: list
    datasets: list
    starts: dict
    horizon: int
    nrmse: dict = field(default_factory=dict)  # (dataset, model) -> list per start
    errors: dict = field(default_factory=dict)  # (dataset, model) -> list per start
    wall_time: dict = field(default_factory=dict)  # (dataset, model) -> list per start

    def values(self, dataset: str, model: str) -> list:
        return self.nrmse[dataset, model]

    def mean(self, dataset: str, model: str) -> Optional[float]:
        s = box_stats(self.values(dataset, model))
        return None if s is None else s["mean"]

    def mean_wall_time(self, model: str) -> float:
        times = [t for d in self.datasets for t in self.wall_time[d, model]]
        return float(np.mean(times))

    def merge(self, other: "ComparisonReport") -> "ComparisonReport":
        if other.models != self.models or other.horizon != self.horizon:
            raise ValidationError("reports must share models and horizon", fields=["models"])
        dup = set(self.datasets) & set(other.datasets)
        if dup:
            raise ValidationError(f"duplicate datasets {sorted(dup)}", fields=["datasets"])
        return ComparisonReport(
            self.models,
            self.datasets + other.datasets,
            {**self.starts, **other.starts},
            self.horizon,
            {**self.nrmse, **other.nrmse},
            {**self.errors, **other.errors},
            {**self.wall_time, **other.wall_time},
        )

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {"horizon": self.horizon, "models": list(self.models), "datasets": {}}
        for d in self.datasets:
            rows = {}
            for m in self.models:
                rows[m] = {
                    "nrmse": list(self.nrmse[d, m]),
                    "failed": [e for e in self.errors[d, m] if e is not None],
                    "summary": box_stats(self.nrmse[d, m]),
                }
            out["datasets"][d] = {"starts": list(self.starts[d]), "models": rows}
        if include_timing:
            out["timing"] = {
                "mean_wall_time": {m: self.mean_wall_time(m) for m in self.models},
                "per_cell": {d: {m: list(self.wall_time[d, m]) for m in self.models} for d in self.datasets},
            }
        return out

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)

    def to_text(self, decimals: int = 2) -> str:
        """Aligned table: one row per dataset plus an average row."""
        header = ["Dataset"] + list(self.models) + list(NOT_IMPLEMENTED)
        rows = []
        for d in self.datasets:
            rows.append([d] + [self._fmt(self.mean(d, m), decimals) for m in self.models] + ["n/a"] * len(NOT_IMPLEMENTED))
        if len(self.datasets) > 1:
            avg = []
            for m in self.models:
                ms = [self.mean(d, m) for d in self.datasets]
                avg.append(self._fmt(None if None in ms else float(np.mean(ms)), decimals))
            rows.append(["Average"] + avg + ["n/a"] * len(NOT_IMPLEMENTED))
        rows.append(["Time (s)"] + [f"{self.mean_wall_time(m):.3f}" for m in self.models] + ["n/a"] * len(NOT_IMPLEMENTED))
        widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
        fmt = lambda r: "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths)))
        lines = [fmt(header), "  ".join("-" * w for w in widths)] + [fmt(r) for r in rows]
        return "\n".join(lines) + "\n"

    @staticmethod
    def _fmt(x, decimals):
        return "failed" if x is None else f"{x:.{decimals}f}"


def run_protocol(
    forecasters: Sequence,
    series: TimeSeries,
    starts: Sequence[int],
    horizon: int,
    dataset_name: str = "dataset",
    y_range=None,
    keep_results: bool = False,
):
    """Score every forecaster at every start.

    Normalisation uses the range of the whole series.  A cell that raises a
    library error is recorded as ``None`` and the run carries on.  Returns the
    report, or ``(report, results)`` with ``keep_results`` where ``results``
    maps ``(model, start)`` to :class:`ForecastResult`.
    """
    names = [f.name for f in forecasters]
    if len(set(names)) != len(names):
        raise ValidationError(f"forecaster names must be unique: {names}", fields=["models"])
    if horizon < 1:
        raise ValidationError("horizon must be >= 1", fields=["horizon"])
    for s in starts:
        if not 0 <= s <= len(series) - horizon:
            raise ValidationError(f"start {s} + horizon {horizon} exceeds series length {len(series)}", fields=["starts"])
    if y_range is None:
        y_range = series.value_range()
    report = ComparisonReport(names, [dataset_name], {dataset_name: [int(s) for s in starts]}, horizon)
    results = {}
    for f in forecasters:
        scores, errs, times = [], [], []
        for s in starts:
            t0 = time.perf_counter()
            try:
                res = evaluate(f, series, s, horizon, y_range)
            except (MrssmError, np.linalg.LinAlgError, FloatingPointError) as exc:
                scores.append(None)
                errs.append(f"start {s}: {type(exc).__name__}: {exc}")
                times.append(time.perf_counter() - t0)
                continue
            scores.append(res.nrmse_total)
            errs.append(None)
            times.append(res.wall_time)
            if keep_results:
                results[f.name, int(s)] = res
        report.nrmse[dataset_name, f.name] = scores
        report.errors[dataset_name, f.name] = errs
        report.wall_time[dataset_name, f.name] = times
    return (report, results) if keep_results else report


# -- output ------------------------------------------------------------------------

def _fmt_float(x) -> str:
    return "" if x is None or not np.isfinite(x) else repr(float(x))


def write_trajectory_csv(result: ForecastResult, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "mean", "std", "truth"])
        for k in range(result.horizon):
            w.writerow([k + 1, _fmt_float(result.obs_mean[k]), _fmt_float(result.obs_std[k]), _fmt_float(result.truth[k])])


def write_latent_csv(result: ForecastResult, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step"] + list(result.latent_names))
        for k, row in enumerate(result.latent):
            w.writerow([k + 1] + [_fmt_float(x) for x in row])


def write_per_sample_csv(result: ForecastResult, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "nrmse"])
        for k, v in enumerate(result.nrmse_per_sample):
            w.writerow([k + 1, _fmt_float(v)])


def decile_means(curve) -> tuple[float, float]:
    """Mean of the first and the last 10% of a per-sample error curve."""
    curve = np.asarray(curve, dtype=float)
    k = max(1, len(curve) // 10)
    return float(np.nanmean(curve[:k])), float(np.nanmean(curve[-k:]))
