"""Scaled unscented transform and the UKF predict/update cycle."""

import logging
import math
from typing import Tuple

import numpy as np
import numpy.typing as npt
import scipy.linalg

from orbtrack.core.exceptions import ConfigurationError, NumericalFailureError
from orbtrack.models.estimation import GaussianBelief, Measurement, symmetrize
from orbtrack.models.schemas import UtParams
from orbtrack.services.dynamics import TransitionModel
from orbtrack.services.linalg import robust_cholesky
from orbtrack.services.observation import MeasurementModel

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]


def ut_weights(n: int, params: UtParams) -> Tuple[FloatArray, FloatArray]:
    """Mean and covariance weights for 2n+1 sigma points."""
    spread = params.scaling(n)
    if spread <= 0.0:
        raise ConfigurationError(f"alpha^2 (n + kappa) = {spread} must be positive")
    lam = spread - n
    wm = np.full(2 * n + 1, 1.0 / (2.0 * spread))
    wc = wm.copy()
    wm[0] = lam / spread
    wc[0] = wm[0] + 1.0 - params.alpha**2 + params.beta
    return wm, wc


def sigma_points(
    belief: GaussianBelief, params: UtParams
) -> Tuple[FloatArray, FloatArray, FloatArray]:
    """Return (points, wm, wc); points has shape (2n+1, n) with the mean first."""
    n = belief.dim
    wm, wc = ut_weights(n, params)
    root = math.sqrt(params.scaling(n)) * robust_cholesky(belief.cov)
    mean = np.asarray(belief.mean)
    points = np.vstack([mean, mean + root.T, mean - root.T])
    return points, wm, wc


def _recombine(points: FloatArray, wm: FloatArray, wc: FloatArray) -> Tuple[FloatArray, FloatArray]:
    mean = wm @ points
    deviations = points - mean
    cov = (deviations.T * wc) @ deviations
    return mean, symmetrize(cov)


def ukf_predict(
    belief: GaussianBelief, t1: float, dynamics: TransitionModel, params: UtParams
) -> GaussianBelief:
    if t1 < belief.t:
        raise ConfigurationError(f"cannot predict backwards from {belief.t} to {t1}")
    if t1 == belief.t:
        return belief
    points, wm, wc = sigma_points(belief, params)
    propagated = dynamics.propagate(points, belief.t, t1)
    if not np.all(np.isfinite(propagated)):
        raise NumericalFailureError(f"sigma point propagation to t={t1} produced non-finite states")
    mean, cov = _recombine(propagated, wm, wc)
    return GaussianBelief(mean, symmetrize(cov + dynamics.process_noise(belief.t, t1)), t1)


def ukf_update(
    belief: GaussianBelief, z: Measurement, sensor: MeasurementModel, params: UtParams
) -> GaussianBelief:
    if not math.isclose(belief.t, z.t, rel_tol=0.0, abs_tol=1e-9):
        raise ConfigurationError(f"measurement at t={z.t} does not match belief at t={belief.t}")
    points, wm, wc = sigma_points(belief, params)
    predicted = sensor.predict(points, z.t)

    # residuals are taken relative to the central point so phi never straddles the cut
    offsets = sensor.residual(predicted, predicted[0])
    z_mean_offset = wm @ offsets
    z_deviations = offsets - z_mean_offset
    x_deviations = points - wm @ points

    innovation_cov = symmetrize((z_deviations.T * wc) @ z_deviations + sensor.noise_cov)
    cross_cov = (x_deviations.T * wc) @ z_deviations
    innovation = sensor.residual(z.vector, predicted[0] + z_mean_offset)

    try:
        gain = scipy.linalg.solve(innovation_cov, cross_cov.T, assume_a="sym").T
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NumericalFailureError(f"innovation covariance is singular at t={z.t}") from exc
    if not np.all(np.isfinite(gain)):
        raise NumericalFailureError(f"Kalman gain is not finite at t={z.t}")

    mean = np.asarray(belief.mean) + gain @ innovation
    cov = symmetrize(np.asarray(belief.cov) - gain @ innovation_cov @ gain.T)
    return GaussianBelief(mean, cov, belief.t)
