"""Run configuration: YAML file <-> dataclasses.

Every section is a plain dataclass so the whole run is validated before any
work starts.  Validation errors carry the dotted path of the offending
field, e.g. ``models[1].reversion.lam``.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .data import HANDHELD_TIMES, SyntheticSpec, _parse_time_of_day
from .errors import MrssmError, ValidationError
from .evaluation import DEFAULT_LAMBDA, DEFAULT_PSEUDO_COV, AttractorSettings, ModelVariant, standard_variants
from .meanrev import EXPONENTIAL, UNIFORM
from .models import StructuralSpec, attractor_emission, build_model, resolve_kind


class ConfigError(ValidationError):
    """Invalid configuration; ``fields`` holds dotted paths."""


@dataclass
class ReversionConfig:
    components: list = field(default_factory=lambda: ["trend"])
    pseudo_obs_cov: float = DEFAULT_PSEUDO_COV
    weighting: str = UNIFORM
    lam: float = DEFAULT_LAMBDA
    burn_in: Optional[int] = None

    def build(self) -> AttractorSettings:
        return AttractorSettings(tuple(self.components), self.pseudo_obs_cov, self.weighting, self.lam, self.burn_in)


@dataclass
class ModelConfig:
    name: Optional[str] = None  # None: derived from kind and reversion, e.g. LDS_MR
    kind: str = "linear"
    period: int = 96
    sample_interval: float = 1.0
    state_noise_diag: Optional[list] = None
    obs_noise: float = 1e-2
    prior_var: float = 1e2
    reversion: Optional[ReversionConfig] = field(default_factory=ReversionConfig)

    def label(self) -> str:
        if self.name:
            return self.name
        base = {"linear-seasonal": "LDS", "dlm-freeform": "DLM", "nonlinear-amplitude": "NL"}[resolve_kind(self.kind)]
        if self.reversion is None:
            return base
        return base + ("_WMR" if self.reversion.weighting == EXPONENTIAL else "_MR")

    def spec(self) -> StructuralSpec:
        noise = None if self.state_noise_diag is None else tuple(self.state_noise_diag)
        return StructuralSpec(self.period, self.sample_interval, noise, self.obs_noise, resolve_kind(self.kind))


@dataclass
class DataConfig:
    path: Optional[str] = None  # None: synthetic data
    name: Optional[str] = None
    timestamp_column: str = "timestamp"
    value_column: str = "value"
    sample_minutes: int = 15
    handheld: bool = False
    handheld_times: list = field(default_factory=lambda: list(HANDHELD_TIMES))


@dataclass
class SyntheticConfig:
    days: int = 88
    period: int = 96
    trend_kind: str = "piecewise-inflection"
    amplitude_kind: str = "constant"
    level: float = 6.0
    amplitude: float = 1.5
    trend_scale: float = 1.0
    noise_std: float = 0.1
    ou_theta: float = 0.01
    split_index: Optional[int] = None
    knot_spacing_days: list = field(default_factory=lambda: [3.0, 5.0])

    def spec(self) -> SyntheticSpec:
        kw = dataclasses.asdict(self)
        kw["knot_spacing_days"] = tuple(kw["knot_spacing_days"])
        return SyntheticSpec(**kw)


@dataclass
class ForecastConfig:
    split_index: Optional[int] = None  # None: synthetic split point, or len - horizon for files
    horizon: int = 960
    train_len: Optional[int] = 2880


@dataclass
class ProtocolConfig:
    starts: int = 10
    horizon: int = 960
    train_len: int = 2880
    at_inflections: bool = False


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "out"
    data: DataConfig = field(default_factory=DataConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    models: Optional[list] = None  # None: the standard eight variants
    forecast: ForecastConfig = field(default_factory=ForecastConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)

    def variant(self) -> ModelVariant:
        return _variant(self.model, self.forecast.train_len, self.data)

    def variants(self) -> list[ModelVariant]:
        period = self.synthetic.period if self.data.path is None else self.model.period
        models = self.models if self.models is not None else standard_models(period)
        return [_variant(m, self.protocol.train_len, self.data) for m in models]


def _variant(m: ModelConfig, train_len, data: DataConfig) -> ModelVariant:
    rev = None if m.reversion is None else m.reversion.build()
    return ModelVariant(m.label(), m.spec(), rev, train_len, data.handheld, tuple(data.handheld_times), m.prior_var)


# -- dict <-> dataclass --------------------------------------------------------------

_SECTIONS = {
    "data": DataConfig,
    "synthetic": SyntheticConfig,
    "model": ModelConfig,
    "forecast": ForecastConfig,
    "protocol": ProtocolConfig,
}


def _scalar(value, default, path: str):
    """Coerce YAML scalars towards the type of the field default."""
    if value is None:
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}", fields=[path])
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
            raise ConfigError(f"{path}: expected an integer, got {value!r}", fields=[path])
        return int(value)
    if isinstance(default, float):
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}", fields=[path])
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string, got {value!r}", fields=[path])
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(f"{path}: expected a list, got {value!r}", fields=[path])
    return value


# fields whose default is None, with the type they take when set
_OPTIONAL_TYPES = {
    "split_index": 0,
    "burn_in": 0,
    "state_noise_diag": [],
    "path": "",
    "name": "",
}


def _build(cls, raw, path: str):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(raw).__name__}", fields=[path or "config"])
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(names))
    if unknown:
        paths = [_join(path, k) for k in unknown]
        raise ConfigError(f"unknown field(s): {', '.join(paths)}", fields=paths)
    default = cls()
    kwargs = {}
    for key, value in raw.items():
        p = _join(path, key)
        dv = getattr(default, key)
        if key == "reversion":
            kwargs[key] = None if value is None else _build(ReversionConfig, value, p)
        elif key == "models" and cls is RunConfig:
            if value is None:
                kwargs[key] = None
            elif not isinstance(value, list) or not value:
                raise ConfigError(f"{p}: expected a non-empty list of models", fields=[p])
            else:
                kwargs[key] = [_build(ModelConfig, v, f"{p}[{i}]") for i, v in enumerate(value)]
        elif key in _SECTIONS and cls is RunConfig:
            kwargs[key] = _build(_SECTIONS[key], value, p)
        else:
            kwargs[key] = _scalar(value, _OPTIONAL_TYPES.get(key, dv) if dv is None else dv, p)
    return cls(**kwargs)


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _check(path: str, fn) -> None:
    """Run a library constructor and re-raise its errors with field paths."""
    try:
        fn()
    except ValidationError as exc:
        fields = [_join(path, _FIELD_MAP.get(f, f)) for f in (exc.fields or [])] or [path]
        raise ConfigError(f"{', '.join(fields)}: {exc}", fields=fields) from exc


_FIELD_MAP = {"model_kind": "kind", "lambda": "lam"}


def validate(cfg: RunConfig) -> RunConfig:
    """Whole-config semantic checks; raises :class:`ConfigError`."""
    _check("synthetic", cfg.synthetic.spec().validate)
    models = [("model", cfg.model)] + [(f"models[{i}]", m) for i, m in enumerate(cfg.models or [])]
    for path, m in models:
        _check(path, m.spec)
        if m.reversion is not None:
            r = m.reversion
            _check(f"{path}.reversion", r.build)
            spec = m.spec()
            _, layout = build_model(spec)
            _check(f"{path}.reversion", lambda: attractor_emission(layout, r.components))
    if cfg.models is not None:
        names = [m.label() for m in cfg.models]
        if len(set(names)) != len(names):
            raise ConfigError("models: names must be unique", fields=["models"])
    for path, v in (("forecast.horizon", cfg.forecast.horizon), ("protocol.horizon", cfg.protocol.horizon),
                    ("protocol.starts", cfg.protocol.starts)):
        if v < 1:
            raise ConfigError(f"{path}: must be >= 1", fields=[path])
    if cfg.forecast.train_len is not None and cfg.forecast.train_len < 1:
        raise ConfigError("forecast.train_len: must be >= 1", fields=["forecast.train_len"])
    if cfg.protocol.train_len < 1:
        raise ConfigError("protocol.train_len: must be >= 1", fields=["protocol.train_len"])
    if cfg.data.sample_minutes < 1:
        raise ConfigError("data.sample_minutes: must be >= 1", fields=["data.sample_minutes"])
    if cfg.data.handheld:
        for i, t in enumerate(cfg.data.handheld_times):
            path = f"data.handheld_times[{i}]"
            _check(path, lambda t=t: _parse_time_of_day(t))
            if _parse_time_of_day(t) % np.timedelta64(cfg.data.sample_minutes, "m"):
                raise ConfigError(f"{path}: {t} is not on the {cfg.data.sample_minutes}-minute grid", fields=[path])
    return cfg


def from_dict(raw) -> RunConfig:
    return validate(_build(RunConfig, raw, ""))


def to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigFileError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}", fields=["config"]) from exc
    return from_dict(raw)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=None)


class ConfigFileError(MrssmError, OSError):
    """The config file itself could not be read."""


def standard_models(period: int = 96) -> list[ModelConfig]:
    """The eight comparison variants as explicit model configs."""
    out = []
    for v in standard_variants({"period": period}):
        rev = None
        if v.reversion is not None:
            r = v.reversion
            rev = ReversionConfig(list(r.components), r.pseudo_obs_cov, r.weighting, r.lam, r.burn_in)
        kind = {"linear-seasonal": "linear", "dlm-freeform": "dlm", "nonlinear-amplitude": "nonlinear"}[v.spec.model_kind]
        out.append(ModelConfig(name=v.name, kind=kind, period=period, reversion=rev))
    return out


def apply_overrides(cfg: RunConfig, seed=None, horizon=None, model=None, no_reversion=False,
                    weighted_lambda=None, out=None, scope: str = "forecast") -> RunConfig:
    """Command-line flags win over the file.

    In ``forecast`` scope the model flags edit ``model``.  In ``compare``
    scope they act on the variant list: ``model`` keeps only that kind,
    ``no_reversion`` drops reversion variants and ``weighted_lambda`` sets
    the decay of the exponentially weighted ones.
    """
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.out = out
    if horizon is not None:
        cfg.forecast.horizon = horizon
        cfg.protocol.horizon = horizon
    if scope == "compare":
        if model is not None or no_reversion or weighted_lambda is not None:
            models = cfg.models if cfg.models is not None else standard_models(cfg.synthetic.period)
            if model is not None:
                models = [m for m in models if resolve_kind(m.kind) == resolve_kind(model)]
            if no_reversion:
                models = [m for m in models if m.reversion is None]
            if weighted_lambda is not None:
                for m in models:
                    if m.reversion is not None and m.reversion.weighting == EXPONENTIAL:
                        m.reversion.lam = weighted_lambda
            if not models:
                raise ConfigError("flags leave no models to compare", fields=["models"])
            cfg.models = models
        return validate(cfg)
    if model is not None:
        cfg.model.kind = model
        if resolve_kind(model) == resolve_kind("nonlinear") and cfg.model.reversion is not None:
            cfg.model.reversion.components = ["trend", "amplitude"]
    if weighted_lambda is not None:
        cfg.model.reversion = cfg.model.reversion or ReversionConfig()
        cfg.model.reversion.weighting = EXPONENTIAL
        cfg.model.reversion.lam = weighted_lambda
    if no_reversion:
        cfg.model.reversion = None
    return validate(cfg)


def default_seed_sequence(seed: int, stream: int) -> np.random.SeedSequence:
    """Independent child streams of the single run seed."""
    return np.random.SeedSequence([int(seed), int(stream)])
