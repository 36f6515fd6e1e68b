"""Equatorial ground station: rotating frame, angle measurements and FOV gating.

The station frame coincides with the inertial frame at t = 0 and spins about
the polar axis. Angles are the topocentric inclination theta = asin(rho_z/rho)
and right ascension phi = atan2(rho_y, rho_x) of the station-frame line of
sight.
"""

import logging
import math
from typing import Optional, Protocol

import numpy as np
import numpy.typing as npt
from scipy.stats import multivariate_normal

from orbtrack.core.exceptions import ConfigurationError, DegenerateGeometryError
from orbtrack.models.estimation import Measurement, as_state_vector
from orbtrack.models.schemas import StationModel
from orbtrack.services.linalg import robust_cholesky

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
MEASUREMENT_DIM = 2


def station_rotation(t: float, omega: float) -> FloatArray:
    """Inertial-to-station rotation C(t)."""
    angle = omega * t
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def station_position_inertial(t: float, station: StationModel) -> FloatArray:
    return station_rotation(t, station.omega).T @ station.position_vector


def wrap_angle(angle: npt.ArrayLike) -> FloatArray:
    """Wrap to (-pi, pi]."""
    wrapped = np.mod(np.asarray(angle, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    return np.where(wrapped <= -math.pi, math.pi, wrapped)


def line_of_sight(states: npt.ArrayLike, t: float, station: StationModel) -> FloatArray:
    """Station-frame relative position C(t) (r - r_s(t)) for a state or batch."""
    positions = np.asarray(states, dtype=float)[..., :3]
    rotation = station_rotation(t, station.omega)
    return (positions - station_position_inertial(t, station)) @ rotation.T


def angles_from_los(rho: FloatArray) -> FloatArray:
    rho_norm = np.linalg.norm(rho, axis=-1)
    if np.any(rho_norm <= 0.0):
        raise DegenerateGeometryError("object coincides with the ground station")
    theta = np.arcsin(np.clip(rho[..., 2] / rho_norm, -1.0, 1.0))
    phi = wrap_angle(np.arctan2(rho[..., 1], rho[..., 0]))
    return np.stack([theta, phi], axis=-1)


def measure_batch(states: npt.ArrayLike, t: float, station: StationModel) -> FloatArray:
    """Noise-free (theta, phi) for a state (2,) or a batch (N, 2)."""
    return angles_from_los(line_of_sight(states, t, station))


def measure_ideal(state: npt.ArrayLike, t: float, station: StationModel) -> tuple[float, float]:
    theta, phi = measure_batch(as_state_vector(state), t, station)
    return float(theta), float(phi)


def _inside(angles: FloatArray, station: StationModel) -> npt.NDArray[np.bool_]:
    return (np.abs(angles[..., 1]) <= station.fov_azimuth_halfwidth) & (
        np.abs(angles[..., 0]) <= station.fov_polar_halfwidth
    )


def visible_batch(states: npt.ArrayLike, t: float, station: StationModel) -> npt.NDArray[np.bool_]:
    rho = line_of_sight(states, t, station)
    rho_norm = np.linalg.norm(rho, axis=-1)
    safe = np.where(rho_norm[..., None] > 0.0, rho, np.array([1.0, 0.0, 0.0]))
    return _inside(angles_from_los(safe), station) & (rho_norm > 0.0)


def in_fov(state: npt.ArrayLike, t: float, station: StationModel) -> bool:
    return bool(visible_batch(as_state_vector(state), t, station))


def try_measure(
    state: npt.ArrayLike, t: float, station: StationModel, rng: np.random.Generator
) -> Optional[Measurement]:
    """Simulate one scan: FOV gate, Bernoulli detection, Gaussian angle noise."""
    if not in_fov(state, t, station):
        return None
    if rng.random() >= station.detection_prob:
        return None
    theta, phi = measure_ideal(state, t, station)
    noise = robust_cholesky(station.noise_matrix) @ rng.standard_normal(MEASUREMENT_DIM)
    return Measurement(
        t=t,
        theta=float(np.clip(theta + noise[0], -math.pi / 2, math.pi / 2)),
        phi=float(wrap_angle(phi + noise[1])),
    )


def _noise_distribution(noise_cov: FloatArray):  # type: ignore[no-untyped-def]
    try:
        return multivariate_normal(mean=np.zeros(noise_cov.shape[0]), cov=noise_cov)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ConfigurationError(f"measurement noise covariance is singular: {exc}") from exc


def angle_residual(z: npt.ArrayLike, predicted: npt.ArrayLike) -> FloatArray:
    residual = np.asarray(z, dtype=float) - np.asarray(predicted, dtype=float)
    residual[..., 1] = wrap_angle(residual[..., 1])
    return residual


def measurement_log_likelihood(
    z: Measurement, state: npt.ArrayLike, t: float, station: StationModel
) -> float:
    residual = angle_residual(z.vector, measure_batch(as_state_vector(state), t, station))
    return float(_noise_distribution(station.noise_matrix).logpdf(residual))


class MeasurementModel(Protocol):
    """Measurement function H(X) with additive Gaussian noise."""

    noise_cov: FloatArray
    detection_prob: float

    def predict(self, states: npt.ArrayLike, t: float) -> FloatArray: ...

    def residual(self, z: npt.ArrayLike, predicted: npt.ArrayLike) -> FloatArray: ...

    def log_likelihood(self, z: Measurement, states: npt.ArrayLike) -> FloatArray: ...

    def jacobians(self, states: npt.ArrayLike, t: float) -> FloatArray: ...

    def visible(self, states: npt.ArrayLike, t: float) -> npt.NDArray[np.bool_]: ...

    def try_measure(
        self, state: npt.ArrayLike, t: float, rng: np.random.Generator
    ) -> Optional[Measurement]: ...


class AngleSensor:
    """MeasurementModel backed by a StationModel."""

    def __init__(self, station: StationModel) -> None:
        self.station = station
        self.noise_cov = station.noise_matrix
        self.detection_prob = station.detection_prob
        self._distribution = None

    def predict(self, states: npt.ArrayLike, t: float) -> FloatArray:
        return measure_batch(states, t, self.station)

    def residual(self, z: npt.ArrayLike, predicted: npt.ArrayLike) -> FloatArray:
        return angle_residual(z, predicted)

    def log_likelihood(self, z: Measurement, states: npt.ArrayLike) -> FloatArray:
        if self._distribution is None:
            self._distribution = _noise_distribution(self.noise_cov)
        residual = self.residual(z.vector, self.predict(states, z.t))
        return np.atleast_1d(self._distribution.logpdf(residual))

    def jacobians(self, states: npt.ArrayLike, t: float) -> FloatArray:
        """Central-difference dH/dX for a batch (M, 6) -> (M, 2, 6)."""
        x = np.atleast_2d(np.asarray(states, dtype=float))
        steps = np.maximum(1e-6, 1e-7 * np.abs(x))
        offsets = np.einsum("mi,ij->mij", steps, np.eye(x.shape[1]))
        plus = self.predict(x[:, None, :] + offsets, t)
        minus = self.predict(x[:, None, :] - offsets, t)
        return np.transpose(self.residual(plus, minus) / (2.0 * steps[:, :, None]), (0, 2, 1))

    def visible(self, states: npt.ArrayLike, t: float) -> npt.NDArray[np.bool_]:
        return visible_batch(states, t, self.station)

    def try_measure(
        self, state: npt.ArrayLike, t: float, rng: np.random.Generator
    ) -> Optional[Measurement]:
        return try_measure(state, t, self.station, rng)
