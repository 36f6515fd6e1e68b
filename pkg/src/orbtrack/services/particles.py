"""Particle ensembles: sampling, constant-weight propagation, reweighting and resampling."""

import logging
from typing import Optional

import numpy as np
import numpy.typing as npt

from orbtrack.core.exceptions import (
    ConfigurationError,
    DegenerateEnsembleError,
    InvalidStateError,
    PropagationError,
    TotalDepletionError,
)
from orbtrack.models.estimation import GaussianBelief, Measurement, ParticleEnsemble, symmetrize
from orbtrack.services.dynamics import TransitionModel
from orbtrack.services.linalg import robust_cholesky
from orbtrack.services.observation import MeasurementModel

logger = logging.getLogger(__name__)

LOW_ESS_FRACTION = 0.01


def sample_from_gaussian(belief: GaussianBelief, n: int, rng: np.random.Generator) -> ParticleEnsemble:
    """Draw n i.i.d. particles from the belief with uniform weights."""
    if n < 2:
        raise ConfigurationError(f"an ensemble needs at least two particles, got {n}")
    factor = robust_cholesky(belief.cov)
    states = np.asarray(belief.mean) + rng.standard_normal((n, belief.dim)) @ factor.T
    return ParticleEnsemble(states, np.full(n, 1.0 / n), belief.t)


def _first_bad_row(states: npt.NDArray[np.float64]) -> Optional[int]:
    bad = ~np.all(np.isfinite(states), axis=1) | (np.linalg.norm(states[:, :3], axis=1) <= 0.0)
    rows = np.flatnonzero(bad)
    return int(rows[0]) if rows.size else None


def propagate_ensemble(
    ens: ParticleEnsemble,
    t1: float,
    dynamics: TransitionModel,
    rng: Optional[np.random.Generator] = None,
) -> ParticleEnsemble:
    """Move every particle to t1; weights are carried over untouched."""
    if t1 < ens.t:
        raise ConfigurationError(f"cannot propagate an ensemble backwards from {ens.t} to {t1}")
    if t1 == ens.t:
        return ens

    bad = _first_bad_row(np.asarray(ens.states))
    if bad is not None:
        raise PropagationError(f"particle {bad} is not a valid state at t={ens.t}", index=bad)
    try:
        states = dynamics.propagate(ens.states, ens.t, t1, rng)
    except InvalidStateError as exc:
        raise PropagationError(f"ensemble propagation failed: {exc}") from exc

    bad = _first_bad_row(states)
    if bad is not None:
        raise PropagationError(f"particle {bad} diverged while propagating to t={t1}", index=bad)
    return ParticleEnsemble(states, ens.weights, t1)


def effective_sample_size(ens: ParticleEnsemble) -> float:
    return float(1.0 / np.sum(np.square(ens.weights)))


def reweight(ens: ParticleEnsemble, z: Measurement, sensor: MeasurementModel) -> ParticleEnsemble:
    """Multiply prior weights by the measurement likelihood, in log space."""
    if not np.isclose(ens.t, z.t, rtol=0.0, atol=1e-9):
        raise ConfigurationError(f"measurement at t={z.t} does not match ensemble at t={ens.t}")
    with np.errstate(divide="ignore"):
        log_weights = np.log(ens.weights) + sensor.log_likelihood(z, ens.states)
    log_weights = np.where(np.isnan(log_weights), -np.inf, log_weights)

    peak = float(np.max(log_weights))
    if not np.isfinite(peak):
        raise TotalDepletionError(f"every particle has zero likelihood at t={z.t}")
    weights = np.exp(log_weights - peak)
    weights /= weights.sum()

    updated = ParticleEnsemble(ens.states, weights, ens.t)
    ess = effective_sample_size(updated)
    if ess < LOW_ESS_FRACTION * ens.size:
        logger.warning(f"Effective sample size {ess:.1f} of {ens.size} after reweighting at t={z.t}")
    return updated


def weighted_moments(ens: ParticleEnsemble) -> GaussianBelief:
    """Weighted mean and reliability-weighted covariance of the ensemble."""
    weights = np.asarray(ens.weights)
    square_sum = float(np.sum(np.square(weights)))
    if 1.0 - square_sum <= 1e-12:
        raise DegenerateEnsembleError(f"all weight sits on one particle at t={ens.t}")
    mean = weights @ ens.states
    deviations = ens.states - mean
    cov = (deviations.T * weights) @ deviations / (1.0 - square_sum)
    return GaussianBelief(mean, symmetrize(cov), ens.t)


def systematic_resample(ens: ParticleEnsemble, rng: np.random.Generator) -> ParticleEnsemble:
    """Low-variance resampling with a single uniform offset."""
    n = ens.size
    positions = (rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(ens.weights)
    cumulative[-1] = 1.0
    indices = np.minimum(np.searchsorted(cumulative, positions, side="right"), n - 1)
    return ParticleEnsemble(ens.states[indices], np.full(n, 1.0 / n), ens.t)
