"""Likelihood retention after one orbital period.

A particle S drawn from N(S0, P) and propagated for the mean period T0 lands
near its start, shifted along-track by f(S0) (T(S) - T0). Linearising the
measurement of that shift gives the sensitivity M, the composite covariance
C = 2 M P M^T + R and a chi-square lower bound on the probability that the
particle still scores a likelihood above a threshold b. A Monte Carlo oracle
checks the bound against the full nonlinear flow.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import numpy.typing as npt
from joblib import Parallel, cpu_count, delayed

from orbtrack.core.exceptions import ConfigurationError, DomainError, EmptyThresholdSetError
from orbtrack.models.estimation import DepletionResult, as_state_vector, symmetrize
from orbtrack.models.schemas import DragParams, PhysicalConstants, StationModel
from orbtrack.services.dynamics import (
    keplerian_period,
    propagate,
    semi_major_axis,
    specific_energy,
    vector_field,
)
from orbtrack.services.linalg import robust_cholesky
from orbtrack.services.observation import AngleSensor, angle_residual, measure_batch

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

MEASUREMENT_DIM = 2
PERIODICITY_TOLERANCE_KM = 1e-3


@dataclass(frozen=True)
class DepletionConfig:
    """Mean state S0, initial covariance P, measurement covariance R and threshold b."""

    s0: FloatArray
    p: FloatArray
    r: FloatArray
    b: float
    strict_appendix_form: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "s0", as_state_vector(self.s0))
        for name, dim in (("p", 6), ("r", MEASUREMENT_DIM)):
            matrix = np.asarray(getattr(self, name), dtype=float)
            if matrix.shape != (dim, dim):
                raise ConfigurationError(f"{name} must be {dim}x{dim}, got {matrix.shape}")
            scale = max(1.0, float(np.abs(matrix).max()))
            if float(np.abs(matrix - matrix.T).max()) > 1e-12 * scale:
                raise ConfigurationError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(symmetrize(matrix)).min() < -1e-14 * scale:
                raise ConfigurationError(f"{name} must be positive semi-definite")
            object.__setattr__(self, name, symmetrize(matrix))
        if np.linalg.eigvalsh(self.r).min() <= 0.0:
            raise ConfigurationError("r must be invertible")
        if not self.b > 0.0:
            raise ConfigurationError(f"threshold b must be positive, got {self.b}")

    def log_argument(self) -> float:
        """log(1 / (b sqrt((2 pi)^k |R|))), positive exactly when the threshold set is non-empty."""
        det_r = float(np.linalg.det(self.r))
        return -math.log(self.b) - 0.5 * (MEASUREMENT_DIM * math.log(2.0 * math.pi) + math.log(det_r))


@dataclass(frozen=True)
class RetentionEstimate:
    fraction: float
    samples: int
    excluded: int

    @property
    def binomial_sigma(self) -> float:
        used = self.samples - self.excluded
        if used <= 0:
            return float("nan")
        return math.sqrt(self.fraction * (1.0 - self.fraction) / used)


def period_gradient(s0: npt.ArrayLike, consts: PhysicalConstants) -> FloatArray:
    """dT/dS through the vis-viva semi-major axis, in s per km and s per km/s."""
    state = as_state_vector(s0)
    a = semi_major_axis(state, consts)
    r_vec, v_vec = state[:3], state[3:]
    r = float(np.linalg.norm(r_vec))
    dt_da = 3.0 * math.pi * math.sqrt(a / consts.mu)
    da_dr = 2.0 * a**2 * r_vec / r**3
    da_dv = 2.0 * a**2 * v_vec / consts.mu
    return dt_da * np.concatenate([da_dr, da_dv])


def measurement_jacobian(s0: npt.ArrayLike, t: float, station: StationModel) -> FloatArray:
    return AngleSensor(station).jacobians(as_state_vector(s0), t)[0]


def sensitivity_matrix(
    s0: npt.ArrayLike,
    station: StationModel,
    consts: PhysicalConstants,
    drag: DragParams,
    period_grad: Optional[npt.ArrayLike] = None,
) -> FloatArray:
    """M = dg/dX (I - f(S0) dT/dS), with dg/dX taken at S0 one period later."""
    state = as_state_vector(s0)
    t0 = keplerian_period(state, consts)
    grad = period_gradient(state, consts) if period_grad is None else np.asarray(period_grad, dtype=float)
    flow = vector_field(state, consts, drag)
    return measurement_jacobian(state, t0, station) @ (np.eye(6) - np.outer(flow, grad))


def composite_covariance(config: DepletionConfig, sensitivity: npt.ArrayLike) -> FloatArray:
    m = np.asarray(sensitivity, dtype=float)
    return symmetrize(2.0 * m @ config.p @ m.T + config.r)


def ellipse_radii(config: DepletionConfig, sensitivity: npt.ArrayLike) -> Tuple[float, float]:
    """Return (n, m): the threshold radius under R and the guaranteed radius under C."""
    log_arg = config.log_argument()
    if log_arg <= 0.0:
        raise EmptyThresholdSetError(
            f"threshold {config.b:.3e} is at or above the measurement density peak"
        )
    n_squared = log_arg if config.strict_appendix_form else 2.0 * log_arg
    alpha_min = float(np.linalg.eigvalsh(config.r).min())
    lambda_max = float(np.linalg.eigvalsh(composite_covariance(config, sensitivity)).max())
    return math.sqrt(n_squared), math.sqrt(alpha_min / lambda_max * n_squared)


def chi2_2dof_cdf(radius: float) -> float:
    """Mass of a 2-D Gaussian inside its own radius-sigma ellipse."""
    return -math.expm1(-0.5 * radius**2)


def check_periodicity(
    s0: npt.ArrayLike, consts: PhysicalConstants, drag: DragParams, dt: float
) -> float:
    """Position miss in km after propagating S0 for its Keplerian period."""
    state = as_state_vector(s0)
    t0 = keplerian_period(state, consts)
    returned = propagate(state, 0.0, t0, dt, consts, drag)
    residual = float(np.linalg.norm(returned[:3] - state[:3]))
    if residual > PERIODICITY_TOLERANCE_KM:
        logger.warning(
            f"Mean orbit misses its start by {residual:.4e} km after one period; "
            "the bound assumes a periodic flow"
        )
    return residual


def depletion_lower_bound(
    config: DepletionConfig,
    station: StationModel,
    consts: PhysicalConstants,
    drag: DragParams,
    dt: float,
) -> DepletionResult:
    residual = check_periodicity(config.s0, consts, drag, dt)
    sensitivity = sensitivity_matrix(config.s0, station, consts, drag)
    composite = composite_covariance(config, sensitivity)
    try:
        n_radius, m_radius = ellipse_radii(config, sensitivity)
    except EmptyThresholdSetError as exc:
        logger.info(f"Empty threshold set: {exc}")
        return DepletionResult(
            m_radius=0.0,
            n_radius=0.0,
            sensitivity=sensitivity,
            composite_cov=composite,
            lower_bound=0.0,
            empty_threshold_set=True,
            periodicity_residual_km=residual,
        )
    return DepletionResult(
        m_radius=m_radius,
        n_radius=n_radius,
        sensitivity=sensitivity,
        composite_cov=composite,
        lower_bound=chi2_2dof_cdf(m_radius),
        periodicity_residual_km=residual,
    )


def monte_carlo_retention(
    config: DepletionConfig,
    n_samples: int,
    rng: np.random.Generator,
    station: StationModel,
    consts: PhysicalConstants,
    drag: DragParams,
    dt: float,
    n_jobs: int = 1,
) -> RetentionEstimate:
    """Fraction of sampled particles whose likelihood one period later exceeds b."""
    if n_samples < 1000:
        raise ConfigurationError(f"monte carlo retention needs at least 1000 samples, got {n_samples}")
    t0 = keplerian_period(config.s0, consts)
    factor = robust_cholesky(config.p)
    particles = config.s0 + rng.standard_normal((n_samples, 6)) @ factor.T
    truths = config.s0 + rng.standard_normal((n_samples, 6)) @ factor.T
    noise = rng.standard_normal((n_samples, MEASUREMENT_DIM)) @ np.linalg.cholesky(config.r).T

    stacked = np.vstack([particles, truths])
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = specific_energy(stacked, consts) < 0.0
    usable = (bound[:n_samples] & bound[n_samples:]) & np.all(
        np.linalg.norm(np.stack([particles[:, :3], truths[:, :3]]), axis=-1) > 0.0, axis=0
    )
    if not usable.all():
        logger.info(f"{int((~usable).sum())} sample pairs are not elliptic and were excluded")

    count = int(usable.sum())
    if count == 0:
        raise DomainError("every Monte Carlo sample was excluded")
    workers = cpu_count() if n_jobs < 0 else max(1, n_jobs)
    chunks = np.array_split(np.vstack([particles[usable], truths[usable]]), workers)
    flowed = np.vstack(
        Parallel(n_jobs=n_jobs)(
            delayed(propagate)(chunk, 0.0, t0, dt, consts, drag) for chunk in chunks if len(chunk)
        )
    )
    moved, moved_truth = flowed[:count], flowed[count:]
    finite = np.all(np.isfinite(moved), axis=1) & np.all(np.isfinite(moved_truth), axis=1)

    observed = measure_batch(moved_truth[finite], t0, station) + noise[usable][finite]
    innovation = angle_residual(observed, measure_batch(moved[finite], t0, station))
    quadratic = np.einsum("ij,jk,ik->i", innovation, np.linalg.inv(config.r), innovation)
    retained = quadratic < 2.0 * config.log_argument()

    excluded = n_samples - int(finite.sum())
    used = n_samples - excluded
    if used == 0:
        raise DomainError("every Monte Carlo sample was excluded")
    return RetentionEstimate(float(retained.sum()) / used, n_samples, excluded)
