"""Gaussian mixture recovery from particle clouds.

Component-wise EM with a minimum-message-length penalty: components whose
support cannot pay for their own parameters are annihilated, and the smallest
survivor is removed after each convergence so every k from k_max down to one
is visited. The visited model with the shortest message length wins.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import numpy.typing as npt
from joblib import Parallel, delayed
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from orbtrack.core.exceptions import ConfigurationError, InsufficientDataError
from orbtrack.models.estimation import GaussianBelief, GmmModel, symmetrize
from orbtrack.models.schemas import PropagationStudyConfig
from orbtrack.services.dynamics import TransitionModel
from orbtrack.services.particles import sample_from_gaussian

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

COVARIANCE_FLOOR = 1e-10
SAMPLES_PER_COMPONENT = 10


def _component_log_density(samples: FloatArray, mean: FloatArray, cov: FloatArray) -> FloatArray:
    return np.atleast_1d(multivariate_normal.logpdf(samples, mean=mean, cov=cov))


def message_length(log_likelihood: float, weights: FloatArray, n: int, d: int) -> float:
    """Two-part message length of a k-component full-covariance mixture."""
    n_params = d + d * (d + 1) / 2.0
    k = weights.size
    return float(
        -log_likelihood
        + 0.5 * n_params * np.sum(np.log(n * weights / 12.0))
        + 0.5 * k * math.log(n / 12.0)
        + 0.5 * k * (n_params + 1.0)
    )


class _MixtureState:
    """Mutable EM state with cached per-component log densities."""

    def __init__(self, weights: FloatArray, means: FloatArray, covs: FloatArray, samples: FloatArray):
        self.samples = samples
        self.weights = weights
        self.means = means
        self.covs = covs
        self.log_densities = np.vstack(
            [_component_log_density(samples, m, c) for m, c in zip(means, covs)]
        )

    @property
    def k(self) -> int:
        return int(self.weights.size)

    def log_likelihood(self) -> float:
        return float(np.sum(logsumexp(self.log_densities + np.log(self.weights)[:, None], axis=0)))

    def responsibilities(self, m: int) -> FloatArray:
        with np.errstate(divide="ignore"):
            joint = self.log_densities + np.log(self.weights)[:, None]
        return np.exp(joint[m] - logsumexp(joint, axis=0))

    def drop(self, m: int) -> None:
        keep = np.arange(self.k) != m
        self.weights = self.weights[keep] / self.weights[keep].sum()
        self.means = self.means[keep]
        self.covs = self.covs[keep]
        self.log_densities = self.log_densities[keep]

    def snapshot(self, length: float) -> GmmModel:
        order = np.argsort(-self.weights, kind="stable")
        return GmmModel(
            weights=self.weights[order] / self.weights[order].sum(),
            means=self.means[order].copy(),
            covs=self.covs[order].copy(),
            message_length=length,
        )


def _initial_state(samples: FloatArray, k_max: int, rng: np.random.Generator) -> _MixtureState:
    n, d = samples.shape
    picks = rng.choice(n, size=k_max, replace=False)
    sample_cov = np.atleast_2d(np.cov(samples, rowvar=False))
    base_cov = symmetrize(sample_cov / k_max ** (2.0 / d)) + COVARIANCE_FLOOR * np.eye(d)
    return _MixtureState(
        weights=np.full(k_max, 1.0 / k_max),
        means=samples[picks].copy(),
        covs=np.repeat(base_cov[None, :, :], k_max, axis=0),
        samples=samples,
    )


def _sweep(state: _MixtureState, n_params: float) -> None:
    """One component-wise EM pass with annihilation."""
    n, d = state.samples.shape
    m = 0
    while m < state.k:
        resp = state.responsibilities(m)
        support = float(resp.sum())
        weights = state.weights.copy()
        weights[m] = max(0.0, support - n_params / 2.0) / n
        if weights[m] <= 0.0 and state.k > 1:
            state.drop(m)
            continue
        if weights.sum() <= 0.0:
            m += 1
            continue
        state.weights = weights / weights.sum()
        mean = resp @ state.samples / support
        deviations = state.samples - mean
        cov = symmetrize((deviations.T * resp) @ deviations / support) + COVARIANCE_FLOOR * np.eye(d)
        state.means[m] = mean
        state.covs[m] = cov
        state.log_densities[m] = _component_log_density(state.samples, mean, cov)
        m += 1


def fit_gmm(
    samples: npt.ArrayLike,
    k_max: int,
    rng: np.random.Generator,
    tolerance: float = 1e-5,
    max_iterations: int = 500,
    k_min: int = 1,
) -> GmmModel:
    """Fit a mixture to ``samples`` (n, d), choosing k by minimum message length."""
    data = np.asarray(samples, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    n, d = data.shape
    if d < 1 or k_max < 1 or not 1 <= k_min <= k_max:
        raise ConfigurationError(f"invalid mixture dimensions d={d}, k_max={k_max}, k_min={k_min}")
    if n < SAMPLES_PER_COMPONENT * k_max:
        raise InsufficientDataError(
            f"{n} samples cannot support {k_max} components "
            f"(need {SAMPLES_PER_COMPONENT} per component)"
        )
    if not np.all(np.isfinite(data)):
        raise ConfigurationError("samples must be finite")

    n_params = d + d * (d + 1) / 2.0
    state = _initial_state(data, k_max, rng)
    best: Optional[GmmModel] = None

    while True:
        previous = math.inf
        length = math.inf
        for _ in range(max_iterations):
            _sweep(state, n_params)
            length = message_length(state.log_likelihood(), state.weights, n, d)
            if math.isfinite(previous) and abs(previous - length) < tolerance * abs(previous):
                break
            previous = length

        if best is None or length < best.message_length:
            best = state.snapshot(length)
        logger.debug(f"Converged with k={state.k}, message length {length:.3f}")

        if state.k <= k_min:
            break
        state.drop(int(np.argmin(state.weights)))

    logger.debug(f"Selected k={best.k} from k_max={k_max} on {n} samples")
    return best


def position_trace_report(model: GmmModel) -> List[float]:
    """Trace of each component's position block in km^2."""
    block = min(3, model.covs.shape[-1])
    return [float(np.trace(cov[:block, :block])) for cov in model.covs]


@dataclass(frozen=True)
class ClusterSnapshot:
    t: float
    model: GmmModel
    states: FloatArray
    retained: int
    dropped: int

    @property
    def traces(self) -> List[float]:
        return position_trace_report(self.model)


def propagate_and_cluster_study(
    initial: GaussianBelief,
    times: List[float],
    n: int,
    config: PropagationStudyConfig,
    dynamics: TransitionModel,
    rng: np.random.Generator,
    min_radius: float = 0.0,
    n_jobs: int = 1,
) -> List[ClusterSnapshot]:
    """Sample a cloud, carry it noise-free through ``times`` and fit a mixture at each."""
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ConfigurationError("study times must be sorted strictly ascending")
    if times and times[0] < initial.t:
        raise ConfigurationError(f"study time {times[0]} precedes the initial epoch {initial.t}")

    sample_rng, *fit_rngs = rng.spawn(len(times) + 1)
    states = np.array(sample_from_gaussian(initial, n, sample_rng).states)
    t = initial.t
    clouds = []
    for t_next in times:
        if t_next > t:
            states = dynamics.propagate(states, t, t_next)
        valid = np.all(np.isfinite(states), axis=1) & (
            np.linalg.norm(states[:, :3], axis=1) > min_radius
        )
        dropped = int(n - valid.sum())
        if dropped:
            logger.warning(f"{dropped} particles re-entered or diverged by t={t_next}")
        states = states[valid]
        clouds.append((t_next, states.copy(), n - dropped, dropped))
        t = t_next

    dims = slice(None) if config.full_state else slice(0, 3)
    models = Parallel(n_jobs=n_jobs)(
        delayed(fit_gmm)(
            cloud[:, dims], config.k_max, fit_rng, config.tolerance, config.max_iterations
        )
        for (_, cloud, _, _), fit_rng in zip(clouds, fit_rngs)
    )

    snapshots = []
    for (t_i, cloud, retained, dropped), model in zip(clouds, models):
        logger.info(f"Study t={t_i:.0f} s: k={model.k}, traces {np.round(position_trace_report(model), 4)}")
        snapshots.append(ClusterSnapshot(t_i, model, cloud, retained, dropped))
    return snapshots
