"""Perturbed two-body dynamics: gravity, J2 and exponential-atmosphere drag.

States are 6-vectors [x, y, z, vx, vy, vz] in km and km/s. Every propagation
routine also accepts a batch shaped (N, 6) so particle clouds and sigma-point
sets are integrated in one vectorised pass.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np
import numpy.typing as npt

from orbtrack.core.exceptions import ConfigurationError, DomainError, InvalidStateError
from orbtrack.models.estimation import STATE_DIM, StateVector, as_state_vector, symmetrize
from orbtrack.models.schemas import DragParams, PhysicalConstants
from orbtrack.services.linalg import robust_cholesky

logger = logging.getLogger(__name__)

MIN_STEP = 1e-6
# kg/m^3 * m^2/kg * (km/s)^2 -> km/s^2
DRAG_UNIT_SCALE = 1.0e3

FloatArray = npt.NDArray[np.float64]


@dataclass(frozen=True)
class ProcessNoise:
    """Continuous-time additive noise intensity on the 6-D state."""

    covariance: FloatArray
    factor: FloatArray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        cov = np.array(self.covariance, dtype=float)
        if cov.shape != (STATE_DIM, STATE_DIM):
            raise ConfigurationError(f"process noise must be 6x6, got {cov.shape}")
        scale = max(float(np.abs(cov).max()), np.finfo(float).tiny)
        if float(np.abs(cov - cov.T).max()) > 1e-12 * scale:
            raise ConfigurationError("process noise covariance is not symmetric")
        if np.linalg.eigvalsh(symmetrize(cov)).min() < -1e-14 * scale:
            raise ConfigurationError("process noise covariance has a negative eigenvalue")
        cov = symmetrize(cov)
        cov.setflags(write=False)
        object.__setattr__(self, "covariance", cov)
        factor = robust_cholesky(cov)
        factor.setflags(write=False)
        object.__setattr__(self, "factor", factor)

    @classmethod
    def isotropic(cls, scale: float) -> "ProcessNoise":
        return cls(scale * np.eye(STATE_DIM))

    def over(self, duration: float) -> FloatArray:
        """Discrete covariance accumulated over ``duration`` seconds."""
        return self.covariance * duration


def atmospheric_density(r: npt.ArrayLike, drag: DragParams) -> FloatArray:
    """Exponential atmosphere rho0 * exp(-(r - r0) / H) in kg/m^3."""
    radius = np.asarray(r, dtype=float)
    return drag.rho0 * np.exp(-(radius - drag.r0) / drag.scale_height)


def _acceleration(
    positions: FloatArray, velocities: FloatArray, consts: PhysicalConstants, drag: DragParams
) -> FloatArray:
    r = np.linalg.norm(positions, axis=-1, keepdims=True)
    accel = -consts.mu * positions / r**3

    if consts.j2 > 0.0:
        z_r = positions[..., 2:3] / r
        factor = -1.5 * consts.j2 * consts.mu / r**2 * (consts.r_eq / r) ** 2
        in_plane = 1.0 - 5.0 * z_r**2
        accel = accel + factor * np.concatenate(
            [
                in_plane * positions[..., 0:1] / r,
                in_plane * positions[..., 1:2] / r,
                (3.0 - 5.0 * z_r**2) * z_r,
            ],
            axis=-1,
        )

    if drag.area_to_mass > 0.0:
        spin = np.array([0.0, 0.0, consts.omega_earth])
        v_rel = velocities - np.cross(spin, positions)
        speed = np.linalg.norm(v_rel, axis=-1, keepdims=True)
        rho = atmospheric_density(r, drag)
        accel = accel - 0.5 * DRAG_UNIT_SCALE * drag.cd * drag.area_to_mass * rho * speed * v_rel

    return accel


def vector_field(states: npt.ArrayLike, consts: PhysicalConstants, drag: DragParams) -> FloatArray:
    """Time derivative f(X) of a state or a batch of states."""
    x = np.asarray(states, dtype=float)
    return np.concatenate([x[..., 3:], _acceleration(x[..., :3], x[..., 3:], consts, drag)], axis=-1)


def total_acceleration(state: npt.ArrayLike, consts: PhysicalConstants, drag: DragParams) -> FloatArray:
    """a_g + a_J2 + a_D for a single state (km/s^2)."""
    x = as_state_vector(state)
    return _acceleration(x[:3], x[3:], consts, drag)


def _rk4_step(x: FloatArray, h: float, consts: PhysicalConstants, drag: DragParams) -> FloatArray:
    k1 = vector_field(x, consts, drag)
    k2 = vector_field(x + 0.5 * h * k1, consts, drag)
    k3 = vector_field(x + 0.5 * h * k2, consts, drag)
    k4 = vector_field(x + h * k3, consts, drag)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _step_schedule(t0: float, t1: float, dt: float) -> list[float]:
    if dt < MIN_STEP:
        raise ConfigurationError(f"integrator step {dt} s is below the {MIN_STEP} s floor")
    if t1 < t0:
        raise ConfigurationError(f"cannot propagate backwards from {t0} to {t1}")
    span = t1 - t0
    full_steps = int(math.floor(span / dt + 1e-9))
    steps = [dt] * full_steps
    remainder = span - full_steps * dt
    if remainder > 1e-9 * dt:
        steps.append(remainder)
    return steps


def _check_batch(x: FloatArray) -> None:
    if x.shape[-1] != STATE_DIM:
        raise InvalidStateError(f"states must end in a length-6 axis, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidStateError("states must be finite")
    if np.any(np.linalg.norm(x[..., :3], axis=-1) <= 0.0):
        raise InvalidStateError("position norm must be positive")


def propagate(
    state: npt.ArrayLike,
    t0: float,
    t1: float,
    dt: float,
    consts: PhysicalConstants,
    drag: DragParams,
    noise: Optional[ProcessNoise] = None,
    rng: Optional[np.random.Generator] = None,
) -> FloatArray:
    """Fixed-step RK4 from t0 to t1; a shorter final step absorbs any remainder.

    With ``noise`` and ``rng`` supplied, sqrt(h) * L * xi is added after every
    step of length h, where L L^T is the noise covariance.
    """
    x = np.array(state, dtype=float)
    _check_batch(x)
    steps = _step_schedule(t0, t1, dt)
    factor = noise.factor if noise is not None else None
    if factor is not None and rng is None:
        logger.debug("process noise supplied without a generator; propagating noise-free")

    with np.errstate(over="ignore", invalid="ignore"):
        for h in steps:
            x = _rk4_step(x, h, consts, drag)
            if factor is not None and rng is not None:
                x = x + math.sqrt(h) * rng.standard_normal(x.shape) @ factor.T
    return x


def flow_jacobians(
    states: npt.ArrayLike,
    t0: float,
    t1: float,
    dt: float,
    consts: PhysicalConstants,
    drag: DragParams,
) -> FloatArray:
    """Central-difference Jacobians of the noise-free flow for a batch (M, 6) -> (M, 6, 6)."""
    x = np.atleast_2d(np.asarray(states, dtype=float))
    _check_batch(x)
    _step_schedule(t0, t1, dt)
    count = x.shape[0]
    if t1 == t0:
        return np.broadcast_to(np.eye(STATE_DIM), (count, STATE_DIM, STATE_DIM)).copy()

    steps = np.maximum(1e-6, 1e-7 * np.abs(x))
    offsets = np.einsum("mi,ij->mij", steps, np.eye(STATE_DIM))
    perturbed = np.concatenate([x[:, None, :] + offsets, x[:, None, :] - offsets], axis=1)
    flowed = propagate(perturbed.reshape(-1, STATE_DIM), t0, t1, dt, consts, drag)
    flowed = flowed.reshape(count, 2 * STATE_DIM, STATE_DIM)
    plus, minus = flowed[:, :STATE_DIM, :], flowed[:, STATE_DIM:, :]
    # column i of each Jacobian is d(flow)/d(x_i)
    return np.transpose((plus - minus) / (2.0 * steps[:, :, None]), (0, 2, 1))


def flow_jacobian(
    state: npt.ArrayLike,
    t0: float,
    t1: float,
    dt: float,
    consts: PhysicalConstants,
    drag: DragParams,
) -> FloatArray:
    return flow_jacobians(as_state_vector(state)[None, :], t0, t1, dt, consts, drag)[0]


def specific_energy(state: npt.ArrayLike, consts: PhysicalConstants) -> FloatArray:
    x = np.asarray(state, dtype=float)
    r = np.linalg.norm(x[..., :3], axis=-1)
    v2 = np.sum(x[..., 3:] ** 2, axis=-1)
    return 0.5 * v2 - consts.mu / r


def angular_momentum(state: npt.ArrayLike) -> FloatArray:
    x = np.asarray(state, dtype=float)
    return np.cross(x[..., :3], x[..., 3:])


def semi_major_axis(state: StateVector, consts: PhysicalConstants) -> float:
    """Vis-viva semi-major axis; raises DomainError for unbound orbits."""
    x = as_state_vector(state)
    energy = float(specific_energy(x, consts))
    if energy >= 0.0:
        raise DomainError(f"specific energy {energy:.6f} km^2/s^2 is not elliptic")
    return -consts.mu / (2.0 * energy)


def keplerian_period(state: StateVector, consts: PhysicalConstants) -> float:
    a = semi_major_axis(state, consts)
    return 2.0 * math.pi * math.sqrt(a**3 / consts.mu)


class TransitionModel(Protocol):
    """State transition used by the filters and the PCRB recursion."""

    def propagate(
        self, states: npt.ArrayLike, t0: float, t1: float, rng: Optional[np.random.Generator] = None
    ) -> FloatArray: ...

    def process_noise(self, t0: float, t1: float) -> FloatArray: ...

    def jacobians(self, states: npt.ArrayLike, t0: float, t1: float) -> FloatArray: ...


class OrbitalDynamics:
    """TransitionModel over the perturbed two-body flow with a fixed RK4 step."""

    def __init__(
        self,
        consts: PhysicalConstants,
        drag: DragParams,
        dt: float,
        noise: Optional[ProcessNoise] = None,
    ) -> None:
        if dt < MIN_STEP:
            raise ConfigurationError(f"integrator step {dt} s is below the {MIN_STEP} s floor")
        self.consts = consts
        self.drag = drag
        self.dt = dt
        self.noise = noise

    def propagate(
        self, states: npt.ArrayLike, t0: float, t1: float, rng: Optional[np.random.Generator] = None
    ) -> FloatArray:
        return propagate(states, t0, t1, self.dt, self.consts, self.drag, self.noise, rng)

    def process_noise(self, t0: float, t1: float) -> FloatArray:
        if self.noise is None:
            return np.zeros((STATE_DIM, STATE_DIM))
        return self.noise.over(t1 - t0)

    def jacobians(self, states: npt.ArrayLike, t0: float, t1: float) -> FloatArray:
        return flow_jacobians(states, t0, t1, self.dt, self.consts, self.drag)

    def vector_field(self, states: npt.ArrayLike) -> FloatArray:
        return vector_field(states, self.consts, self.drag)

    def period(self, state: StateVector) -> float:
        return keplerian_period(state, self.consts)
