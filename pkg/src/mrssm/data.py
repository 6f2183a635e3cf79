"""Sensor time series: CSV ingestion, handheld resampling, splits and
synthetic data.

Series live on a regular grid (15 minutes by default).  Missing samples are
flagged in ``missing_mask`` and hold NaN in ``values``; the mask is the
source of truth.

CSV layout: a header row with ``timestamp,value``; timestamps are ISO-8601
local wall-clock times (``2019-01-01T05:00:00``); an empty value cell is a
missing sample.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from datetime import datetime, time
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

from .errors import (
    DataFileNotFoundError,
    MissingColumnError,
    NonMonotonicTimestampError,
    TimestampParseError,
    ValidationError,
)

DEFAULT_INTERVAL = np.timedelta64(15, "m")
HANDHELD_TIMES = ("05:00", "12:00", "20:30")
DEFAULT_START = "2019-01-01T00:00:00"


def _ro(a):
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TimeSeries:
    timestamps: np.ndarray
    values: np.ndarray
    missing_mask: np.ndarray
    sample_interval: np.timedelta64 = DEFAULT_INTERVAL

    def __post_init__(self):
        ts = np.array(self.timestamps, dtype="datetime64[s]")
        values = np.array(self.values, dtype=float)
        mask = np.array(self.missing_mask, dtype=bool)
        if not (ts.shape == values.shape == mask.shape) or ts.ndim != 1:
            raise ValidationError("timestamps, values and missing_mask must be equal-length vectors",
                                  fields=["timestamps", "values", "missing_mask"])
        if ts.size > 1 and not np.all(np.diff(ts) > np.timedelta64(0, "s")):
            raise ValidationError("timestamps must be strictly increasing", fields=["timestamps"])
        values[mask] = np.nan
        object.__setattr__(self, "timestamps", _ro(ts))
        object.__setattr__(self, "values", _ro(values))
        object.__setattr__(self, "missing_mask", _ro(mask))
        object.__setattr__(self, "sample_interval", np.timedelta64(self.sample_interval, "s"))

    def __len__(self) -> int:
        return self.values.size

    @property
    def observed(self) -> np.ndarray:
        return ~self.missing_mask

    def slice(self, start: int, stop: int) -> "TimeSeries":
        return TimeSeries(self.timestamps[start:stop], self.values[start:stop],
                          self.missing_mask[start:stop], self.sample_interval)

    def with_mask(self, missing_mask) -> "TimeSeries":
        """Same grid, different mask.  Values under a lifted mask stay NaN."""
        return TimeSeries(self.timestamps, self.values, missing_mask, self.sample_interval)

    def value_range(self) -> tuple[float, float]:
        obs = self.values[self.observed]
        if obs.size == 0:
            raise ValidationError("series has no observed values", fields=["values"])
        return float(obs.min()), float(obs.max())


def regular_grid(start, n: int, interval=DEFAULT_INTERVAL) -> np.ndarray:
    return np.datetime64(start, "s") + np.arange(n) * np.timedelta64(interval, "s")


def _parse_timestamp(text: str, row: int) -> np.datetime64:
    try:
        stamp = datetime.fromisoformat(text.strip())
    except ValueError:
        raise TimestampParseError(row, text) from None
    # timestamps are local wall-clock; drop any offset
    return np.datetime64(stamp.replace(tzinfo=None), "s")


def _parse_value(text) -> float:
    if text is None:
        return math.nan
    try:
        v = float(text)
    except ValueError:
        return math.nan
    return v if math.isfinite(v) else math.nan


def load_csv(
    path,
    columns: Optional[Mapping[str, str]] = None,
    sample_interval=DEFAULT_INTERVAL,
) -> TimeSeries:
    """Read a ``timestamp,value`` CSV onto a regular grid.

    ``columns`` maps the logical names ``timestamp``/``value`` to header
    names in the file.  Rows are snapped to the nearest grid slot counted
    from the first timestamp; grid slots without a row, and rows with an
    empty or unparsable value, become missing.
    """
    cols = {"timestamp": "timestamp", "value": "value"}
    cols.update(columns or {})
    path = Path(path)
    if not path.is_file():
        raise DataFileNotFoundError(f"no such data file: {path}")
    interval = np.timedelta64(sample_interval, "s")
    stamps, vals = [], []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for key in ("timestamp", "value"):
            if cols[key] not in header:
                raise MissingColumnError(cols[key], list(header))
        for row_no, row in enumerate(reader, start=2):
            text = row[cols["timestamp"]] or ""
            ts = _parse_timestamp(text, row_no)
            if stamps and ts <= stamps[-1][0]:
                raise NonMonotonicTimestampError(row_no, text)
            stamps.append((ts, row_no, text))
            vals.append(_parse_value(row[cols["value"]]))
    if not stamps:
        return TimeSeries(np.array([], "datetime64[s]"), [], [], interval)

    origin = stamps[0][0]
    slots = []
    for ts, row_no, text in stamps:
        slot = int(round((ts - origin) / interval))
        if slots and slot <= slots[-1]:
            raise NonMonotonicTimestampError(row_no, text)
        slots.append(slot)
    n = slots[-1] + 1
    values = np.full(n, np.nan)
    values[slots] = vals
    return TimeSeries(regular_grid(origin, n, interval), values, np.isnan(values), interval)


def _format_timestamp(ts: np.datetime64) -> str:
    return str(np.datetime64(ts, "s"))


def write_csv(series: TimeSeries, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "value"])
        for ts, v, miss in zip(series.timestamps, series.values, series.missing_mask):
            w.writerow([_format_timestamp(ts), "" if miss else repr(float(v))])


def _parse_time_of_day(t) -> np.timedelta64:
    if isinstance(t, time):
        parsed = t
    else:
        try:
            parsed = time.fromisoformat(str(t))
        except ValueError:
            raise ValidationError(f"bad time of day {t!r}", fields=["times_of_day"]) from None
    return np.timedelta64(parsed.hour * 3600 + parsed.minute * 60 + parsed.second, "s")


def _time_of_day(ts: np.ndarray) -> np.ndarray:
    return ts - ts.astype("datetime64[D]")


def resample_handheld(series: TimeSeries, times_of_day: Iterable = HANDHELD_TIMES) -> TimeSeries:
    """Keep only samples taken at the given local times of day.

    The grid is not decimated; every other sample is masked as missing.
    """
    times_of_day = list(times_of_day)
    wanted = [_parse_time_of_day(t) for t in times_of_day]
    interval = series.sample_interval
    if len(series):
        origin = _time_of_day(series.timestamps[:1])[0]
        for t, raw in zip(wanted, times_of_day):
            if (t - origin) % interval != np.timedelta64(0, "s"):
                raise ValidationError(f"time of day {raw} is not on the sampling grid", fields=["times_of_day"])
    keep = np.isin(_time_of_day(series.timestamps), np.array(wanted, dtype="timedelta64[s]"))
    return series.with_mask(series.missing_mask | ~keep)


@dataclass(frozen=True)
class SplitSpec:
    split_index: int
    horizon: int

    def validate(self, length: int) -> None:
        bad = []
        if self.split_index < 0:
            bad.append("split_index")
        if self.horizon < 0:
            bad.append("horizon")
        if self.split_index + self.horizon > length:
            bad.append("split_index+horizon")
        if bad:
            raise ValidationError(
                f"split {self.split_index}+{self.horizon} does not fit a series of length {length}",
                fields=bad,
            )


def split(series: TimeSeries, spec: SplitSpec) -> tuple[TimeSeries, TimeSeries]:
    """``train = [0, split)``, ``test = [split, split + horizon)``.

    Resample the training part afterwards if needed; the test part is scored
    at full resolution.
    """
    spec.validate(len(series))
    s, h = spec.split_index, spec.horizon
    return series.slice(0, s), series.slice(s, s + h)


# -- synthetic data ----------------------------------------------------------

OU_WANDER = "ou-wander"
PIECEWISE = "piecewise-inflection"
CONSTANT = "constant"
SLOW_VARYING = "slow-varying"


@dataclass(frozen=True)
class SyntheticSpec:
    """Settings for :func:`generate_synthetic` (noise given as std devs)."""

    days: int = 88
    period: int = 96
    trend_kind: str = PIECEWISE
    amplitude_kind: str = CONSTANT
    level: float = 6.0
    amplitude: float = 1.5
    trend_scale: float = 1.0
    noise_std: float = 0.1
    ou_theta: float = 0.01
    split_index: Optional[int] = None
    knot_spacing_days: tuple = (3.0, 5.0)
    phase: float = 0.0
    start: str = DEFAULT_START

    def validate(self) -> None:
        bad = []
        if not isinstance(self.days, (int, np.integer)) or self.days < 1:
            bad.append("days")
        if not isinstance(self.period, (int, np.integer)) or self.period < 2:
            bad.append("period")
        if self.trend_kind not in (OU_WANDER, PIECEWISE):
            bad.append("trend_kind")
        if self.amplitude_kind not in (CONSTANT, SLOW_VARYING):
            bad.append("amplitude_kind")
        for name in ("amplitude", "trend_scale", "noise_std"):
            if not getattr(self, name) >= 0:
                bad.append(name)
        if not 0 < self.ou_theta <= 1:
            bad.append("ou_theta")
        lo, hi = self.knot_spacing_days
        if not 0 < lo <= hi:
            bad.append("knot_spacing_days")
        if self.split_index is not None and not 0 < self.split_index < self.days * self.period:
            bad.append("split_index")
        if bad:
            raise ValidationError(f"invalid synthetic spec fields: {', '.join(bad)}", fields=bad)


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    series: TimeSeries
    trend: np.ndarray
    amplitude: np.ndarray
    seasonal: np.ndarray
    inflections: np.ndarray
    spec: SyntheticSpec


def _ou_path(rng, n: int, theta: float, std: float) -> np.ndarray:
    step_std = std * math.sqrt(1.0 - (1.0 - theta) ** 2)
    x = np.empty(n)
    x[0] = rng.normal(scale=std)
    eps = rng.normal(scale=step_std, size=n)
    for k in range(1, n):
        x[k] = (1.0 - theta) * x[k - 1] + eps[k]
    return x


def _piecewise_path(rng, n: int, period: int, scale: float, split_at: int, spacing) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = (int(round(d * period)) for d in spacing)
    right = [split_at]
    while right[-1] < n - 1:
        right.append(min(n - 1, right[-1] + int(rng.integers(lo, hi + 1))))
    left = [split_at]
    while left[-1] > 0:
        left.append(max(0, left[-1] - int(rng.integers(lo, hi + 1))))
    knots = np.array(sorted(set(left) | set(right)))
    # knot values alternate above/below zero so every interior knot is a slope sign change
    k0 = int(np.flatnonzero(knots == split_at)[0])
    first_sign = 1.0 if rng.random() < 0.5 else -1.0
    signs = first_sign * (-1.0) ** (np.arange(knots.size) - k0)
    heights = signs * scale * rng.uniform(0.5, 1.0, size=knots.size)
    path = np.interp(np.arange(n), knots, heights)
    return path, knots[1:-1]


def generate_synthetic(seed: int, spec: Optional[SyntheticSpec] = None, **overrides) -> SyntheticDataset:
    """Diurnal sinusoid on top of an irregular trend, plus Gaussian noise.

    ``ou-wander`` trends follow a discretised Ornstein-Uhlenbeck process
    (AR(1) with coefficient ``1 - ou_theta``) whose stationary std is
    ``trend_scale``.  ``piecewise-inflection`` trends are piecewise linear
    with knots alternating above and below ``level``; one knot sits exactly
    at ``split_index`` (default: mid-series) and all interior knots are
    returned as ``inflections``.
    """
    spec = replace(spec or SyntheticSpec(), **overrides)
    spec.validate()
    rng = np.random.default_rng(seed)
    n = spec.days * spec.period
    t = np.arange(n)
    if spec.trend_kind == OU_WANDER:
        wander = _ou_path(rng, n, spec.ou_theta, spec.trend_scale)
        inflections = np.array([], dtype=int)
    else:
        split_at = spec.split_index if spec.split_index is not None else n // 2
        wander, inflections = _piecewise_path(rng, n, spec.period, spec.trend_scale, split_at, spec.knot_spacing_days)
    trend = spec.level + wander
    if spec.amplitude_kind == CONSTANT:
        amplitude = np.full(n, float(spec.amplitude))
    else:
        phase = rng.uniform(0, 2 * np.pi)
        amplitude = spec.amplitude * (1.0 + 0.3 * np.sin(2 * np.pi * t / (7 * spec.period) + phase))
    seasonal = amplitude * np.sin(2 * np.pi * t / spec.period + spec.phase)
    values = trend + seasonal + rng.normal(scale=spec.noise_std, size=n)
    series = TimeSeries(regular_grid(spec.start, n), values, np.zeros(n, bool))
    return SyntheticDataset(series, _ro(trend), _ro(amplitude), _ro(seasonal), _ro(inflections), spec)


def write_components_csv(dataset: SyntheticDataset, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "trend", "amplitude", "seasonal"])
        for row in zip(dataset.series.timestamps, dataset.trend, dataset.amplitude, dataset.seasonal):
            w.writerow([_format_timestamp(row[0])] + [repr(float(x)) for x in row[1:]])
