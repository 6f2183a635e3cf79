"""Linear-Gaussian state-space models: Kalman prediction/update, EKF emission
hook, RTS smoothing, forecasting and continuous-to-discrete conversion.

Conventions
-----------
* ``n`` is the state dimension, ``m`` the observation dimension.
* A belief with ``time_index = k`` summarises ``p(h_k | v_{0:k})``.  The
  initial prior of a filtering run conventionally sits at ``time_index = -1``
  so that the first prediction lands on sample 0.
* All arrays stored on the value types are float64 and read-only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DimensionError, NumericalSingularityError, ValidationError

CONDITION_LIMIT = 1e12
SYMMETRY_TOL = 1e-9
_DISCRETIZE_TOL = 1e-14
_DISCRETIZE_MAX_TERMS = 50


def _frozen(a, ndim: int | None = None) -> np.ndarray:
    a = np.array(a, dtype=float)
    if ndim == 2 and a.ndim == 0:
        a = a.reshape(1, 1)
    elif ndim == 1 and a.ndim == 0:
        a = a.reshape(1)
    a.setflags(write=False)
    return a


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _check_psd(name: str, a: np.ndarray, dim: int) -> None:
    if a.shape != (dim, dim):
        raise DimensionError(name, (dim, dim), a.shape)
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    if not np.allclose(a, a.T, rtol=0.0, atol=SYMMETRY_TOL * scale):
        raise ValidationError(f"{name} is not symmetric", fields=[name])
    if dim and np.linalg.eigvalsh(a).min() < -SYMMETRY_TOL * scale:
        raise ValidationError(f"{name} is not positive semi-definite", fields=[name])


def _spd_factor(a: np.ndarray, name: str):
    """Cholesky factor of ``a`` with a condition-number guard."""
    eig = np.linalg.eigvalsh(a)
    lo, hi = eig[0], eig[-1]
    if hi <= 0.0 or lo <= hi / CONDITION_LIMIT:
        cond = np.inf if lo <= 0.0 else hi / lo
        raise NumericalSingularityError(name, cond)
    return cho_factor(a, lower=True)


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """Mean and covariance of a latent state estimate."""

    mean: np.ndarray
    covariance: np.ndarray
    time_index: int = -1

    def __post_init__(self):
        mean = _frozen(self.mean, 1)
        cov = _frozen(self.covariance, 2)
        if mean.ndim != 1:
            raise DimensionError("belief.mean", "(n,)", mean.shape)
        if cov.shape != (mean.size, mean.size):
            raise DimensionError("belief.covariance", (mean.size, mean.size), cov.shape)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "time_index", int(self.time_index))

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """``h_t = A h_{t-1} + noise(state_noise)``, ``v_t = B h_t + noise(obs_noise)``.

    For a nonlinear emission leave ``emission`` as ``None`` and supply
    ``emission_fn`` (state -> observation vector) together with
    ``emission_jacobian`` (state -> m x n matrix); prediction then linearises
    around the predicted mean (extended Kalman filter).

    When ``continuous_transition`` is given, ``transition`` must equal
    ``discretize(continuous_transition, sample_interval)``.
    """

    transition: np.ndarray
    emission: Optional[np.ndarray]
    state_noise: np.ndarray
    obs_noise: np.ndarray
    emission_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    emission_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    continuous_transition: Optional[np.ndarray] = None
    sample_interval: float = 1.0

    def __post_init__(self):
        A = _frozen(self.transition, 2)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError("transition", "(n, n)", A.shape)
        n = A.shape[0]
        R = _frozen(self.obs_noise, 2)
        if self.emission is not None:
            B = _frozen(self.emission, 2)
            if B.ndim == 1:
                B = _frozen(B.reshape(1, -1))
            if B.ndim != 2 or B.shape[1] != n:
                raise DimensionError("emission", ("m", n), B.shape)
            m = B.shape[0]
        else:
            if self.emission_fn is None or self.emission_jacobian is None:
                raise ValidationError(
                    "either an emission matrix or emission_fn + emission_jacobian is required",
                    fields=["emission"],
                )
            B = None
            m = R.shape[0]
        _check_psd("state_noise", _frozen(self.state_noise, 2), n)
        _check_psd("obs_noise", R, m)
        object.__setattr__(self, "transition", A)
        object.__setattr__(self, "emission", B)
        object.__setattr__(self, "state_noise", _frozen(self.state_noise, 2))
        object.__setattr__(self, "obs_noise", R)
        if self.sample_interval <= 0:
            raise ValidationError("sample_interval must be positive", fields=["sample_interval"])
        if self.continuous_transition is not None:
            Ac = _frozen(self.continuous_transition, 2)
            if Ac.shape != (n, n):
                raise DimensionError("continuous_transition", (n, n), Ac.shape)
            rederived = discretize(Ac, self.sample_interval)
            if not np.allclose(rederived, A, rtol=1e-9, atol=1e-9):
                raise ValidationError(
                    "transition is not the discretisation of continuous_transition",
                    fields=["transition", "continuous_transition"],
                )
            object.__setattr__(self, "continuous_transition", Ac)

    @property
    def n_state(self) -> int:
        return self.transition.shape[0]

    @property
    def n_obs(self) -> int:
        return self.obs_noise.shape[0]

    @property
    def is_linear(self) -> bool:
        return self.emission is not None

    def linearize(self, state: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Emission matrix and observation mean at ``state``."""
        if self.emission is not None:
            return self.emission, self.emission @ state
        B = np.atleast_2d(np.asarray(self.emission_jacobian(state), dtype=float))
        if B.shape != (self.n_obs, self.n_state):
            raise DimensionError("emission_jacobian", (self.n_obs, self.n_state), B.shape)
        return B, np.atleast_1d(np.asarray(self.emission_fn(state), dtype=float))


@dataclass(frozen=True, eq=False)
class Prediction:
    """One-step predictive moments of state and observation.

    ``emission`` and ``obs_noise`` record the (possibly linearised) emission
    used, so that :func:`update` does not have to re-derive it.
    """

    state_mean: np.ndarray
    state_cov: np.ndarray
    obs_mean: np.ndarray
    obs_cov: np.ndarray
    cross_cov: np.ndarray
    emission: np.ndarray
    obs_noise: np.ndarray
    time_index: int = 0

    @property
    def obs_std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.obs_cov), 0.0, None))

    def as_belief(self) -> GaussianBelief:
        return GaussianBelief(self.state_mean, self.state_cov, self.time_index)

    def subset(self, rows) -> "Prediction":
        """Restrict the observation part to ``rows`` (boolean or index array)."""
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        return Prediction(
            self.state_mean,
            self.state_cov,
            self.obs_mean[rows],
            self.obs_cov[np.ix_(rows, rows)],
            self.cross_cov[:, rows],
            self.emission[rows],
            self.obs_noise[np.ix_(rows, rows)],
            self.time_index,
        )


def project(
    state_mean: np.ndarray,
    state_cov: np.ndarray,
    emission: np.ndarray,
    obs_noise: np.ndarray,
    time_index: int = 0,
) -> Prediction:
    """Observation moments of a linear emission applied to a state Gaussian."""
    B = np.atleast_2d(np.asarray(emission, dtype=float))
    R = np.atleast_2d(np.asarray(obs_noise, dtype=float))
    n = state_mean.shape[0]
    if B.shape[1] != n:
        raise DimensionError("emission", (B.shape[0], n), B.shape)
    if R.shape != (B.shape[0], B.shape[0]):
        raise DimensionError("obs_noise", (B.shape[0], B.shape[0]), R.shape)
    cross = state_cov @ B.T
    return Prediction(
        state_mean=state_mean,
        state_cov=state_cov,
        obs_mean=B @ state_mean,
        obs_cov=_symmetrize(B @ cross + R),
        cross_cov=cross,
        emission=B,
        obs_noise=R,
        time_index=time_index,
    )


def predict(model: StateSpaceModel, belief: GaussianBelief) -> Prediction:
    """Propagate ``belief`` one step through the transition and emission."""
    n = model.n_state
    if belief.mean.shape != (n,):
        raise DimensionError("belief.mean", (n,), belief.mean.shape)
    A = model.transition
    mu = A @ belief.mean
    P = _symmetrize(A @ belief.covariance @ A.T + model.state_noise)
    B, obs_mean = model.linearize(mu)
    cross = P @ B.T
    return Prediction(
        state_mean=mu,
        state_cov=P,
        obs_mean=obs_mean,
        obs_cov=_symmetrize(B @ cross + model.obs_noise),
        cross_cov=cross,
        emission=B,
        obs_noise=model.obs_noise,
        time_index=belief.time_index + 1,
    )


def kalman_gain(pred: Prediction) -> np.ndarray:
    """``K = cross_cov @ inv(obs_cov)`` through a guarded Cholesky solve."""
    factor = _spd_factor(pred.obs_cov, "obs_cov")
    return cho_solve(factor, pred.cross_cov.T).T


def update(
    model: StateSpaceModel,
    pred: Prediction,
    observation,
    *,
    joseph: bool = True,
) -> GaussianBelief:
    """Condition a prediction on ``observation``.

    The covariance uses the Joseph form ``(I-KB) P (I-KB)^T + K R K^T`` by
    default; ``joseph=False`` gives the plain ``(I-KB) P``.  A noise-free
    square emission pins the state to ``solve(B, v)`` directly.
    """
    n = model.n_state
    if pred.state_mean.shape != (n,):
        raise DimensionError("prediction.state_mean", (n,), pred.state_mean.shape)
    v = np.atleast_1d(np.asarray(observation, dtype=float))
    m = pred.obs_mean.shape[0]
    if v.shape != (m,):
        raise DimensionError("observation", (m,), v.shape)
    B = pred.emission

    if m == n and not np.any(pred.obs_noise):
        if np.linalg.cond(B) > CONDITION_LIMIT:
            raise NumericalSingularityError("emission", float(np.linalg.cond(B)))
        return GaussianBelief(np.linalg.solve(B, v), np.zeros((n, n)), pred.time_index)

    K = kalman_gain(pred)
    mean = pred.state_mean + K @ (v - pred.obs_mean)
    IKB = np.eye(n) - K @ B
    if joseph:
        cov = IKB @ pred.state_cov @ IKB.T + K @ pred.obs_noise @ K.T
    else:
        cov = IKB @ pred.state_cov
    return GaussianBelief(mean, _symmetrize(cov), pred.time_index)


def filter_step(
    model: StateSpaceModel,
    belief: GaussianBelief,
    observation=None,
    observed=None,
) -> GaussianBelief:
    """Predict, then update if an observation is present.

    ``observed`` optionally flags which observation components are present;
    absent components are dropped from the update.
    """
    pred = predict(model, belief)
    if observation is None:
        return pred.as_belief()
    if observed is not None:
        observed = np.atleast_1d(np.asarray(observed, dtype=bool))
        if not observed.any():
            return pred.as_belief()
        if not observed.all():
            pred = pred.subset(observed)
            observation = np.atleast_1d(np.asarray(observation, dtype=float))[observed]
    return update(model, pred, observation)


def _as_observations(series, missing):
    if hasattr(series, "values") and hasattr(series, "missing_mask"):
        values = np.asarray(series.values, dtype=float)
        if missing is None:
            missing = series.missing_mask
    else:
        values = np.asarray(series, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if missing is None:
        missing = np.isnan(values)
    missing = np.asarray(missing, dtype=bool)
    if missing.ndim == 1:
        missing = np.repeat(missing[:, None], values.shape[1], axis=1)
    if missing.shape != values.shape:
        raise DimensionError("missing", values.shape, missing.shape)
    return values, missing


def filter_sequence(
    model: StateSpaceModel,
    initial: GaussianBelief,
    series,
    missing=None,
) -> list[GaussianBelief]:
    """Run the filter left to right over ``series``.

    ``series`` is a TimeSeries-like object (``values`` + ``missing_mask``) or
    an array of shape ``(T,)`` / ``(T, m)``.  ``missing`` overrides the mask
    and may be per-sample ``(T,)`` or per-component ``(T, m)``.
    """
    values, missing = _as_observations(series, missing)
    if values.shape[0] and values.shape[1] != model.n_obs:
        raise DimensionError("series", ("T", model.n_obs), values.shape)
    beliefs = []
    belief = initial
    for v, miss in zip(values, missing):
        if miss.all():
            belief = filter_step(model, belief)
        else:
            belief = filter_step(model, belief, v, ~miss)
        beliefs.append(belief)
    return beliefs


def rts_smooth(model: StateSpaceModel, filtered: Sequence[GaussianBelief]) -> list[GaussianBelief]:
    """Rauch-Tung-Striebel fixed-interval smoother.

    ``filtered`` must be consecutive filter outputs of ``model``.
    """
    if not filtered:
        raise ValidationError("rts_smooth needs at least one filtered belief", fields=["filtered"])
    A = model.transition
    Q = model.state_noise
    smoothed: list[GaussianBelief] = [None] * len(filtered)  # type: ignore[list-item]
    smoothed[-1] = filtered[-1]
    for k in range(len(filtered) - 2, -1, -1):
        f, F = filtered[k].mean, filtered[k].covariance
        mu_p = A @ f
        P_p = _symmetrize(A @ F @ A.T + Q)
        # gain G = F A^T inv(P_p); P_p symmetric so G^T = inv(P_p) A F
        G = cho_solve(_spd_factor(P_p, "predicted state covariance"), A @ F).T
        nxt = smoothed[k + 1]
        mean = f + G @ (nxt.mean - mu_p)
        cov = F + G @ (nxt.covariance - P_p) @ G.T
        smoothed[k] = GaussianBelief(mean, _symmetrize(cov), filtered[k].time_index)
    return smoothed


def discretize(continuous, dt: float) -> np.ndarray:
    """``exp(continuous * dt)`` by its Taylor series.

    Summation stops once a term's largest absolute entry drops below 1e-14,
    or after 50 terms.
    """
    Ac = np.asarray(continuous, dtype=float)
    if Ac.ndim != 2 or Ac.shape[0] != Ac.shape[1]:
        raise DimensionError("continuous_transition", "(n, n)", Ac.shape)
    M = Ac * float(dt)
    term = np.eye(Ac.shape[0])
    total = term.copy()
    for k in range(1, _DISCRETIZE_MAX_TERMS):
        term = term @ M / k
        if np.max(np.abs(term), initial=0.0) < _DISCRETIZE_TOL:
            break
        total += term
    return total


def forecast(model: StateSpaceModel, belief: GaussianBelief, steps: int) -> list[Prediction]:
    """Iterated prediction without updates."""
    if steps < 1:
        raise ValidationError("steps must be >= 1", fields=["steps"])
    out = []
    current = belief
    for _ in range(steps):
        pred = predict(model, current)
        out.append(pred)
        current = pred.as_belief()
    return out
