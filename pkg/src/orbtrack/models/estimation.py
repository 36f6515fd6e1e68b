"""Immutable numeric value types shared by the estimation services."""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
import numpy.typing as npt

from orbtrack.core.exceptions import ConfigurationError, InvalidStateError, NumericalFailureError

StateVector = npt.NDArray[np.float64]
"""Inertial Cartesian state [x1, x2, x3, v1, v2, v3] in km and km/s."""

STATE_DIM = 6


def _frozen_array(values: npt.ArrayLike) -> npt.NDArray[np.float64]:
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


def as_state_vector(values: npt.ArrayLike) -> StateVector:
    """Validate and return a read-only 6-D state."""
    state = np.asarray(values, dtype=float)
    if state.shape != (STATE_DIM,):
        raise InvalidStateError(f"state must have shape (6,), got {state.shape}")
    if not np.all(np.isfinite(state)):
        raise InvalidStateError("state components must be finite")
    if float(np.linalg.norm(state[:3])) <= 0.0:
        raise InvalidStateError("position norm must be positive")
    return _frozen_array(state)


def symmetrize(matrix: npt.ArrayLike) -> npt.NDArray[np.float64]:
    array = np.asarray(matrix, dtype=float)
    return 0.5 * (array + array.T)


@dataclass(frozen=True)
class GaussianBelief:
    mean: StateVector
    cov: npt.NDArray[np.float64]
    t: float

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ConfigurationError(f"belief shapes disagree: mean {mean.shape}, cov {cov.shape}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise NumericalFailureError("belief contains non-finite entries")
        scale = max(1.0, float(np.abs(cov).max()))
        if float(np.abs(cov - cov.T).max()) > 1e-10 * scale:
            raise NumericalFailureError("belief covariance is not symmetric")
        eigenvalues = np.linalg.eigvalsh(symmetrize(cov))
        if eigenvalues.min() < -1e-12 - 1e-9 * max(0.0, float(eigenvalues.max())):
            raise NumericalFailureError(
                f"belief covariance is not positive semi-definite (min eigenvalue {eigenvalues.min():.3e})"
            )
        object.__setattr__(self, "mean", _frozen_array(mean))
        object.__setattr__(self, "cov", _frozen_array(cov))
        object.__setattr__(self, "t", float(self.t))

    @property
    def dim(self) -> int:
        return int(self.mean.size)


@dataclass(frozen=True)
class ParticleEnsemble:
    states: npt.NDArray[np.float64]
    weights: npt.NDArray[np.float64]
    t: float

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if states.ndim != 2 or weights.shape != (states.shape[0],):
            raise ConfigurationError(
                f"ensemble shapes disagree: states {states.shape}, weights {weights.shape}"
            )
        if states.shape[0] < 2:
            raise ConfigurationError("an ensemble needs at least two particles")
        if np.any(weights < 0.0) or not np.all(np.isfinite(weights)):
            raise ConfigurationError("particle weights must be finite and non-negative")
        if abs(float(weights.sum()) - 1.0) > 1e-9:
            raise ConfigurationError(f"particle weights sum to {weights.sum():.12f}, expected 1")
        object.__setattr__(self, "states", _frozen_array(states))
        object.__setattr__(self, "weights", _frozen_array(weights))
        object.__setattr__(self, "t", float(self.t))

    @property
    def size(self) -> int:
        return int(self.states.shape[0])

    @property
    def mean(self) -> StateVector:
        return self.weights @ self.states


@dataclass(frozen=True)
class Measurement:
    t: float
    theta: float
    phi: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.theta) and math.isfinite(self.phi)):
            raise ConfigurationError("measurement angles must be finite")
        if not -math.pi / 2 <= self.theta <= math.pi / 2:
            raise ConfigurationError(f"theta {self.theta} outside [-pi/2, pi/2]")
        if not -math.pi < self.phi <= math.pi:
            raise ConfigurationError(f"phi {self.phi} outside (-pi, pi]")

    @property
    def vector(self) -> npt.NDArray[np.float64]:
        return np.array([self.theta, self.phi])


class TrackerMode(str, Enum):
    GAUSSIAN = "gaussian"
    ENSEMBLE = "ensemble"


class TrackerEvent(str, Enum):
    NONE = "none"
    UKF_TO_PF = "ukf_to_pf"
    PF_TO_UKF = "pf_to_ukf"


@dataclass(frozen=True)
class TrackerState:
    mode: TrackerMode
    t: float
    belief: Optional[GaussianBelief] = None
    ensemble: Optional[ParticleEnsemble] = None
    event: TrackerEvent = TrackerEvent.NONE
    measured: bool = False
    boundary_update: bool = False

    def __post_init__(self) -> None:
        if self.mode is TrackerMode.GAUSSIAN:
            if self.belief is None or self.ensemble is not None:
                raise ConfigurationError("GaussianMode requires a belief and no ensemble")
            active_t = self.belief.t
        else:
            if self.ensemble is None or self.belief is not None:
                raise ConfigurationError("EnsembleMode requires an ensemble and no belief")
            active_t = self.ensemble.t
        if not math.isclose(active_t, self.t, rel_tol=0.0, abs_tol=1e-9):
            raise ConfigurationError(f"tracker time {self.t} disagrees with representation time {active_t}")


@dataclass(frozen=True)
class GmmModel:
    weights: npt.NDArray[np.float64]
    means: npt.NDArray[np.float64]
    covs: npt.NDArray[np.float64]
    message_length: float = float("nan")

    def __post_init__(self) -> None:
        if self.weights.ndim != 1 or self.means.shape[0] != self.weights.size:
            raise ConfigurationError("mixture parameter shapes disagree")
        if abs(float(self.weights.sum()) - 1.0) > 1e-9 or np.any(self.weights < 0.0):
            raise ConfigurationError("mixture weights must be non-negative and sum to 1")
        object.__setattr__(self, "weights", _frozen_array(self.weights))
        object.__setattr__(self, "means", _frozen_array(self.means))
        object.__setattr__(self, "covs", _frozen_array(self.covs))

    @property
    def k(self) -> int:
        return int(self.weights.size)


@dataclass(frozen=True)
class DepletionResult:
    m_radius: float
    n_radius: float
    sensitivity: npt.NDArray[np.float64]
    composite_cov: npt.NDArray[np.float64]
    lower_bound: float
    empty_threshold_set: bool = False
    periodicity_residual_km: float = 0.0


@dataclass(frozen=True)
class PcrbSeries:
    times: npt.NDArray[np.float64]
    information: npt.NDArray[np.float64]
    bounds: npt.NDArray[np.float64]
    regularized: npt.NDArray[np.bool_]


@dataclass(frozen=True)
class ConsistencyReport:
    times: npt.NDArray[np.float64]
    spectral_norms: npt.NDArray[np.float64]
    lambda_mins: npt.NDArray[np.float64]
    nees_times: npt.NDArray[np.float64]
    nees_values: npt.NDArray[np.float64]
    nees_outside_fraction: float
    roundoff_epochs: npt.NDArray[np.bool_]
    violation_epochs: npt.NDArray[np.bool_]
    nees_skipped: int = 0


@dataclass
class RunRecord:
    """Per-epoch history of one co-simulated tracking run."""

    index: int
    times: List[float] = field(default_factory=list)
    truth: List[StateVector] = field(default_factory=list)
    means: List[StateVector] = field(default_factory=list)
    covs: List[npt.NDArray[np.float64]] = field(default_factory=list)
    modes: List[TrackerMode] = field(default_factory=list)
    events: List[TrackerEvent] = field(default_factory=list)
    measured: List[bool] = field(default_factory=list)
    boundary_updates: List[bool] = field(default_factory=list)
    measurements: List[Measurement] = field(default_factory=list)
    snapshots: List[Tuple[float, ParticleEnsemble, ParticleEnsemble]] = field(default_factory=list)
    failed: bool = False
    failure_reason: Optional[str] = None

    @property
    def transitions(self) -> List[Tuple[float, TrackerEvent]]:
        return [
            (t, event)
            for t, event in zip(self.times, self.events)
            if event in (TrackerEvent.UKF_TO_PF, TrackerEvent.PF_TO_UKF)
        ]
