"""Mean reversion through an attractor distribution.

The attractor is a fixed Gaussian over selected state components whose mean
summarises the filtered history.  During forecasting its mean is fed back as
a pseudo-observation after every prediction, which pulls the selected
components (and, through their covariances, the rest of the state) towards
it.  The pseudo-observation covariance sets how quickly that happens: zero
pins the selected components immediately, very large values leave the plain
forecast untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import GaussianBelief, Prediction, StateSpaceModel, predict, project, update
from .errors import DimensionError, ValidationError

UNIFORM = "uniform"
EXPONENTIAL = "exponential"


def _selected_means(filtered: Sequence[GaussianBelief], selection, burn_in: int) -> np.ndarray:
    selection = np.atleast_2d(np.asarray(selection, dtype=float))
    if burn_in < 0:
        raise ValidationError("burn_in must be >= 0", fields=["burn_in"])
    if len(filtered) <= burn_in:
        raise ValidationError(
            f"burn_in={burn_in} leaves no filtered samples (have {len(filtered)})",
            fields=["burn_in"],
        )
    means = np.array([b.mean for b in filtered[burn_in:]])
    if means.shape[1] != selection.shape[1]:
        raise DimensionError("selection", (selection.shape[0], means.shape[1]), selection.shape)
    return means @ selection.T


def attractor_mean(filtered: Sequence[GaussianBelief], selection, burn_in: int = 0) -> np.ndarray:
    """Plain average of ``selection @ f_i`` over ``filtered[burn_in:]``."""
    return _selected_means(filtered, selection, burn_in).mean(axis=0)


def _check_lambda(lam: float) -> None:
    if not 0.0 < lam <= 1.0:
        raise ValidationError(f"lambda must be in (0, 1], got {lam}", fields=["lambda"])


def _geometric_weights(count: int, lam: float) -> np.ndarray:
    # weight of sample i is (1 - lam)^(t - i); the newest sample has weight 1
    return (1.0 - lam) ** np.arange(count - 1, -1, -1, dtype=float)


def weighted_attractor_mean(
    filtered: Sequence[GaussianBelief], selection, lam: float, burn_in: int = 0
) -> np.ndarray:
    """Exponentially weighted average, normalised by the sum of weights."""
    _check_lambda(lam)
    values = _selected_means(filtered, selection, burn_in)
    w = _geometric_weights(len(values), lam)
    return w @ values / w.sum()


def approx_weighted_attractor_mean(
    filtered: Sequence[GaussianBelief], selection, lam: float, burn_in: int = 0
) -> np.ndarray:
    """Unnormalised variant ``lam * sum_i f_i (1 - lam)^(t - i)``.

    Only close to :func:`weighted_attractor_mean` once ``lam * sum(weights)``
    is close to one, i.e. for windows much longer than ``1 / lam``.
    """
    _check_lambda(lam)
    values = _selected_means(filtered, selection, burn_in)
    return lam * (_geometric_weights(len(values), lam) @ values)


def _as_cov(cov, k: int) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        return float(cov) * np.eye(k)
    if cov.ndim == 1:
        return np.diag(cov)
    return cov


@dataclass(frozen=True, eq=False)
class AttractorDistribution:
    mean: np.ndarray
    emission: np.ndarray
    pseudo_obs_cov: np.ndarray
    weighting: str = UNIFORM
    lam: Optional[float] = None
    burn_in: int = 0

    def __post_init__(self):
        E = np.atleast_2d(np.asarray(self.emission, dtype=float))
        k = E.shape[0]
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = _as_cov(self.pseudo_obs_cov, k)
        if mean.shape != (k,):
            raise DimensionError("attractor.mean", (k,), mean.shape)
        if cov.shape != (k, k):
            raise DimensionError("attractor.pseudo_obs_cov", (k, k), cov.shape)
        if not np.allclose(cov, cov.T) or np.linalg.eigvalsh(cov).min() < -1e-12:
            raise ValidationError("pseudo_obs_cov must be symmetric PSD", fields=["pseudo_obs_cov"])
        if self.weighting not in (UNIFORM, EXPONENTIAL):
            raise ValidationError(f"unknown weighting {self.weighting!r}", fields=["weighting"])
        if self.weighting == EXPONENTIAL:
            _check_lambda(self.lam)
        for name, arr in (("mean", mean), ("emission", E), ("pseudo_obs_cov", cov)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_components(self) -> int:
        return self.emission.shape[0]


def build_attractor(
    filtered: Sequence[GaussianBelief],
    selection,
    pseudo_obs_cov,
    weighting: str = UNIFORM,
    lam: float = 0.1,
    burn_in: int = 0,
) -> AttractorDistribution:
    """Attractor from training-set filtered beliefs.

    ``pseudo_obs_cov`` may be a scalar (isotropic), a vector (diagonal) or a
    full matrix.
    """
    if weighting == UNIFORM:
        mean = attractor_mean(filtered, selection, burn_in)
        lam_used = None
    elif weighting == EXPONENTIAL:
        mean = weighted_attractor_mean(filtered, selection, lam, burn_in)
        lam_used = lam
    else:
        raise ValidationError(f"unknown weighting {weighting!r}", fields=["weighting"])
    return AttractorDistribution(mean, selection, pseudo_obs_cov, weighting, lam_used, burn_in)


def pseudo_update(model: StateSpaceModel, pred: Prediction, attractor: AttractorDistribution) -> GaussianBelief:
    """Condition a state prediction on the attractor mean."""
    pseudo = project(pred.state_mean, pred.state_cov, attractor.emission, attractor.pseudo_obs_cov, pred.time_index)
    return update(model, pseudo, attractor.mean)


def forecast_with_reversion(
    model: StateSpaceModel,
    belief: GaussianBelief,
    attractor: AttractorDistribution,
    steps: int,
) -> list[tuple[Prediction, GaussianBelief]]:
    """Multi-step forecast with a pseudo-observation after every prediction.

    Each entry holds the prediction (what gets reported as the forecast) and
    the belief after the pseudo-update (what seeds the next step).
    """
    if steps < 1:
        raise ValidationError("steps must be >= 1", fields=["steps"])
    if attractor.emission.shape[1] != model.n_state:
        raise DimensionError("attractor.emission", (attractor.n_components, model.n_state), attractor.emission.shape)
    out = []
    current = belief
    for _ in range(steps):
        pred = predict(model, current)
        current = pseudo_update(model, pred, attractor)
        out.append((pred, current))
    return out


@dataclass(frozen=True)
class SettlingReport:
    """``distances[k]`` is the distance after step ``k`` (index 0 = start)."""

    distances: np.ndarray
    settling_step: Optional[int]
    fraction: float


def reversion_settling_report(
    model: StateSpaceModel,
    belief: GaussianBelief,
    attractor: AttractorDistribution,
    steps: int,
    fraction: float = 0.05,
) -> SettlingReport:
    """Distance of the selected components from the attractor mean per step.

    Settling step: first step whose post-update distance falls below
    ``fraction`` of the starting distance (``None`` if never within
    ``steps``; 0 if the start already sits on the attractor).
    """
    E, target = attractor.emission, attractor.mean
    trajectory = forecast_with_reversion(model, belief, attractor, steps)
    distances = np.array(
        [np.linalg.norm(E @ belief.mean - target)]
        + [np.linalg.norm(E @ post.mean - target) for _, post in trajectory]
    )
    if distances[0] == 0.0:
        settle = 0
    else:
        hits = np.flatnonzero(distances[1:] < fraction * distances[0])
        settle = int(hits[0]) + 1 if hits.size else None
    return SettlingReport(distances, settle, fraction)
