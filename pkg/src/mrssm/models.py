"""Builders for the structural forecasting models.

Three model kinds are supported:

``linear-seasonal``
    State ``(trend, trend_velocity, seasonal, seasonal_velocity)``.  A local
    linear trend plus a harmonic oscillator with angular frequency
    ``omega = 2 pi / period``; the observation is ``trend + seasonal``.

``nonlinear-amplitude``
    State ``(trend, trend_velocity, amplitude, amplitude_velocity,
    harmonic_sin, harmonic_cos)``.  The observation is
    ``amplitude * harmonic_sin + trend``, filtered with an EKF.  The harmonic
    pair evolves under ``[[0, 1], [-omega^2, 0]]``, so ``harmonic_cos``
    carries ``omega * cos(omega t)`` when ``harmonic_sin = sin(omega t)``.

``dlm-freeform``
    One level plus ``period`` free-form seasonal factors rotated cyclically
    each step (dimension ``period + 1``).  Factor noise and prior covariance
    live on the zero-sum subspace so the factors stay centred.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import GaussianBelief, StateSpaceModel, discretize
from .errors import ValidationError

LINEAR = "linear-seasonal"
NONLINEAR = "nonlinear-amplitude"
DLM = "dlm-freeform"
MODEL_KINDS = (LINEAR, NONLINEAR, DLM)

# short names used on the command line
KIND_ALIASES = {"linear": LINEAR, "lds": LINEAR, "nonlinear": NONLINEAR, "ekf": NONLINEAR, "dlm": DLM}

COMPONENT_ALIASES = {
    "γ": "trend",
    "gamma": "trend",
    "level": "trend",
    "γ̇": "trend_velocity",
    "ψ": "seasonal",
    "psi": "seasonal",
    "ψ̇": "seasonal_velocity",
    "α": "amplitude",
    "alpha": "amplitude",
    "α̇": "amplitude_velocity",
    "sin": "harmonic_sin",
    "cos": "harmonic_cos",
}

DEFAULT_STATE_NOISE = {
    LINEAR: (0.0, 1e-7, 0.0, 1e-7),
    NONLINEAR: (0.0, 1e-7, 0.0, 1e-8, 0.0, 0.0),
    # (level, per-factor); factor noise is projected onto the zero-sum subspace
    DLM: (1e-4, 1e-5),
}
DEFAULT_OBS_NOISE = 1e-2


def resolve_kind(kind: str) -> str:
    kind = KIND_ALIASES.get(kind, kind)
    if kind not in MODEL_KINDS:
        raise ValidationError(f"unknown model kind {kind!r}", fields=["model_kind"])
    return kind


@dataclass(frozen=True)
class StructuralSpec:
    period: int = 96
    sample_interval: float = 1.0
    state_noise_diag: Optional[tuple] = None
    obs_noise: float = DEFAULT_OBS_NOISE
    model_kind: str = LINEAR

    def __post_init__(self):
        object.__setattr__(self, "model_kind", KIND_ALIASES.get(self.model_kind, self.model_kind))
        if self.state_noise_diag is not None:
            object.__setattr__(self, "state_noise_diag", tuple(float(x) for x in self.state_noise_diag))
        bad = []
        if not isinstance(self.period, (int, np.integer)) or self.period < 2:
            bad.append("period")
        if not self.sample_interval > 0:
            bad.append("sample_interval")
        if not self.obs_noise >= 0:
            bad.append("obs_noise")
        if self.state_noise_diag is not None and any(not v >= 0 for v in self.state_noise_diag):
            bad.append("state_noise_diag")
        if self.model_kind not in MODEL_KINDS:
            bad.append("model_kind")
        if bad:
            raise ValidationError(f"invalid structural spec fields: {', '.join(bad)}", fields=bad)

    @property
    def omega(self) -> float:
        return 2.0 * np.pi / self.period

    def noise_diag(self, n: int) -> np.ndarray:
        diag = self.state_noise_diag or DEFAULT_STATE_NOISE[self.model_kind]
        if self.model_kind == DLM and len(diag) == 2:
            return np.array([diag[0]] + [diag[1]] * (n - 1))
        if len(diag) != n:
            raise ValidationError(
                f"state_noise_diag needs {n} entries for {self.model_kind}, got {len(diag)}",
                fields=["state_noise_diag"],
            )
        return np.asarray(diag, dtype=float)


@dataclass(frozen=True)
class LatentLayout:
    """Names of the state-vector components, in order."""

    names: tuple

    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValidationError("duplicate component names", fields=["names"])
        object.__setattr__(self, "index", {n: i for i, n in enumerate(self.names)})

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name) -> bool:
        return COMPONENT_ALIASES.get(name, name) in self.index

    def __getitem__(self, name: str) -> int:
        key = COMPONENT_ALIASES.get(name, name)
        try:
            return self.index[key]
        except KeyError:
            raise ValidationError(
                f"unknown component {name!r}; layout has {list(self.names)[:8]}",
                fields=["components"],
            ) from None


def _check_kind(spec: StructuralSpec, kind: str) -> None:
    if spec.model_kind != kind:
        raise ValidationError(
            f"spec.model_kind is {spec.model_kind!r}, expected {kind!r}", fields=["model_kind"]
        )


def _trend_block() -> np.ndarray:
    return np.array([[0.0, 1.0], [0.0, 0.0]])


def _harmonic_block(omega: float) -> np.ndarray:
    return np.array([[0.0, 1.0], [-omega * omega, 0.0]])


def _block_diag(*blocks) -> np.ndarray:
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n))
    i = 0
    for b in blocks:
        k = b.shape[0]
        out[i:i + k, i:i + k] = b
        i += k
    return out


def build_linear_seasonal(spec: StructuralSpec) -> tuple[StateSpaceModel, LatentLayout]:
    _check_kind(spec, LINEAR)
    layout = LatentLayout(("trend", "trend_velocity", "seasonal", "seasonal_velocity"))
    Ac = _block_diag(_trend_block(), _harmonic_block(spec.omega))
    model = StateSpaceModel(
        transition=discretize(Ac, spec.sample_interval),
        emission=np.array([[1.0, 0.0, 1.0, 0.0]]),
        state_noise=np.diag(spec.noise_diag(4)),
        obs_noise=[[spec.obs_noise]],
        continuous_transition=Ac,
        sample_interval=spec.sample_interval,
    )
    return model, layout


def amplitude_emission(h: np.ndarray) -> np.ndarray:
    return np.array([h[2] * h[4] + h[0]])


def amplitude_jacobian(h: np.ndarray) -> np.ndarray:
    return np.array([[1.0, 0.0, h[4], 0.0, h[2], 0.0]])


def build_nonlinear_amplitude(spec: StructuralSpec) -> tuple[StateSpaceModel, LatentLayout]:
    _check_kind(spec, NONLINEAR)
    layout = LatentLayout(
        ("trend", "trend_velocity", "amplitude", "amplitude_velocity", "harmonic_sin", "harmonic_cos")
    )
    Ac = _block_diag(_trend_block(), _trend_block(), _harmonic_block(spec.omega))
    model = StateSpaceModel(
        transition=discretize(Ac, spec.sample_interval),
        emission=None,
        state_noise=np.diag(spec.noise_diag(6)),
        obs_noise=[[spec.obs_noise]],
        emission_fn=amplitude_emission,
        emission_jacobian=amplitude_jacobian,
        continuous_transition=Ac,
        sample_interval=spec.sample_interval,
    )
    return model, layout


def zero_sum_projector(p: int) -> np.ndarray:
    return np.eye(p) - np.full((p, p), 1.0 / p)


def build_dlm_freeform(spec: StructuralSpec) -> tuple[StateSpaceModel, LatentLayout]:
    _check_kind(spec, DLM)
    p = int(spec.period)
    n = p + 1
    layout = LatentLayout(("trend",) + tuple(f"seasonal_factor[{j}]" for j in range(p)))
    A = np.zeros((n, n))
    A[0, 0] = 1.0
    # factor in position j moves to position j - 1; position 0 wraps to p - 1
    A[1:, 1:] = np.roll(np.eye(p), 1, axis=1)
    B = np.zeros((1, n))
    B[0, 0] = B[0, 1] = 1.0
    diag = spec.noise_diag(n)
    Q = np.zeros((n, n))
    Q[0, 0] = diag[0]
    Q[1:, 1:] = np.sqrt(np.outer(diag[1:], diag[1:])) * zero_sum_projector(p)
    model = StateSpaceModel(transition=A, emission=B, state_noise=Q, obs_noise=[[spec.obs_noise]])
    return model, layout


BUILDERS = {
    LINEAR: build_linear_seasonal,
    NONLINEAR: build_nonlinear_amplitude,
    DLM: build_dlm_freeform,
}


def build_model(spec: StructuralSpec) -> tuple[StateSpaceModel, LatentLayout]:
    return BUILDERS[spec.model_kind](spec)


def attractor_emission(layout: LatentLayout, components: Iterable[str]) -> np.ndarray:
    """Selection matrix with one row per component (1 at its index)."""
    components = list(components)
    if not components:
        raise ValidationError("at least one attractor component is required", fields=["components"])
    rows = np.zeros((len(components), len(layout)))
    for r, name in enumerate(components):
        rows[r, layout[name]] = 1.0
    return rows


# -- initialisation ----------------------------------------------------------

def fit_harmonic(values, missing, period: int) -> tuple[float, float, float]:
    """Least-squares ``(offset, sin_coef, cos_coef)`` of ``y ~ c + a sin(wt) + b cos(wt)``.

    Uses the first ``period`` samples; falls back to everything supplied when
    the first cycle has fewer than three observations.
    """
    values = np.asarray(values, dtype=float)
    observed = ~np.asarray(missing, dtype=bool)
    t = np.arange(values.size)
    omega = 2.0 * np.pi / period
    window = observed & (t < period)
    if window.sum() < 3:
        window = observed
    if window.sum() == 0:
        return 0.0, 0.0, 0.0
    if window.sum() < 3:
        return float(values[window].mean()), 0.0, 0.0
    X = np.column_stack([np.ones(window.sum()), np.sin(omega * t[window]), np.cos(omega * t[window])])
    coef, *_ = np.linalg.lstsq(X, values[window], rcond=None)
    return float(coef[0]), float(coef[1]), float(coef[2])


def _seasonal_profile(values, missing, period: int) -> np.ndarray:
    """Per-slot mean of values minus their daily mean, centred."""
    values = np.asarray(values, dtype=float)
    observed = ~np.asarray(missing, dtype=bool)
    sums = np.zeros(period)
    counts = np.zeros(period)
    for start in range(0, values.size, period):
        seg = slice(start, min(start + period, values.size))
        obs = observed[seg]
        if obs.sum() == 0:
            continue
        resid = values[seg] - values[seg][obs].mean()
        slots = np.arange(seg.stop - seg.start)
        np.add.at(sums, slots[obs], resid[obs])
        np.add.at(counts, slots[obs], 1.0)
    profile = np.divide(sums, counts, out=np.zeros(period), where=counts > 0)
    if (counts > 0).any():
        profile[counts > 0] -= profile[counts > 0].mean()
    return profile


def initial_belief(
    spec: StructuralSpec,
    layout: LatentLayout,
    values,
    missing=None,
    prior_var: float = 1e2,
) -> GaussianBelief:
    """Prior at time index -1 for filtering ``values`` from sample 0.

    The trend starts at the fitted offset of the first observed cycle and the
    harmonic phase (or DLM seasonal profile) is fitted to the same data.
    Level-type components get variance ``prior_var``, velocities
    ``prior_var / period**2``.
    """
    values = np.asarray(values, dtype=float)
    if missing is None:
        missing = np.isnan(values)
    c, a, b = fit_harmonic(values, missing, spec.period)
    w = spec.omega
    p = spec.period
    vel_var = prior_var / p**2
    t0 = -spec.sample_interval
    if spec.model_kind == LINEAR:
        mean = [c, 0.0, a * np.sin(w * t0) + b * np.cos(w * t0), w * (a * np.cos(w * t0) - b * np.sin(w * t0))]
        cov = np.diag([prior_var, vel_var, prior_var, prior_var * w * w])
    elif spec.model_kind == NONLINEAR:
        amp = float(np.hypot(a, b))
        phase = float(np.arctan2(b, a))
        harmonic_var = 1e-4
        mean = [c, 0.0, amp, 0.0, np.sin(w * t0 + phase), w * np.cos(w * t0 + phase)]
        cov = np.diag([prior_var, vel_var, prior_var, vel_var, harmonic_var, harmonic_var * w * w])
    else:
        profile = _seasonal_profile(values, missing, p)
        # at t = -1 position j holds the factor for sample j - 1
        factors = np.roll(profile, 1)
        first = ~np.asarray(missing, dtype=bool)[:p]
        offset = float(values[:p][first].mean()) if first.any() else c
        mean = np.concatenate([[offset], factors])
        cov = np.zeros((p + 1, p + 1))
        cov[0, 0] = prior_var
        cov[1:, 1:] = 0.01 * prior_var * zero_sum_projector(p)
    return GaussianBelief(np.asarray(mean, dtype=float), cov, -1)


def simulate(model: StateSpaceModel, state, steps: int, rng: np.random.Generator | None = None):
    """Sample ``steps`` states and observations starting from ``state``.

    Returns ``(states, observations)`` where ``observations[k]`` is emitted
    from ``states[k]`` and ``states[0] == state``.  Without ``rng`` the run is
    noise-free.
    """
    h = np.asarray(state, dtype=float)
    states, obs = [], []
    for _ in range(steps):
        states.append(h)
        _, mean = model.linearize(h)
        if rng is not None:
            mean = mean + rng.multivariate_normal(np.zeros(model.n_obs), model.obs_noise)
        obs.append(mean)
        h = model.transition @ h
        if rng is not None:
            h = h + rng.multivariate_normal(np.zeros(model.n_state), model.state_noise)
    return np.array(states), np.array(obs)
