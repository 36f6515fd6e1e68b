import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pytest
from scipy.stats import multivariate_normal

root = Path(__file__).resolve().parents[1]
src = root / "src"
if str(src) not in sys.path:
    sys.path.insert(0, str(src))

from orbtrack.models.schemas import DragParams, PhysicalConstants  # noqa: E402


@dataclass(frozen=True)
class LinearMeasurement:
    """Unbounded linear observation; carries the same t and vector as an angle measurement."""

    t: float
    vector: np.ndarray


class LinearDynamics:
    """x_{k+1} = F x_k + w, w ~ N(0, Q), one application per call."""

    def __init__(self, f: np.ndarray, q: np.ndarray) -> None:
        self.f = np.asarray(f, dtype=float)
        self.q = np.asarray(q, dtype=float)

    def propagate(self, states, t0, t1, rng=None):
        x = np.asarray(states, dtype=float)
        if t1 == t0:
            return x.copy()
        x = x @ self.f.T
        if rng is not None and np.any(self.q):
            x = x + rng.standard_normal(x.shape) @ np.linalg.cholesky(self.q).T
        return x

    def process_noise(self, t0, t1):
        return self.q.copy() if t1 > t0 else np.zeros_like(self.q)

    def jacobians(self, states, t0, t1):
        count = np.atleast_2d(states).shape[0]
        f = self.f if t1 > t0 else np.eye(self.f.shape[0])
        return np.broadcast_to(f, (count,) + f.shape).copy()


class LinearSensor:
    """z = H x + v, v ~ N(0, R), with a scriptable visibility window."""

    def __init__(
        self,
        h: np.ndarray,
        r: np.ndarray,
        detection_prob: float = 1.0,
        visible_at: Optional[Callable[[float], bool]] = None,
    ) -> None:
        self.h = np.asarray(h, dtype=float)
        self.noise_cov = np.asarray(r, dtype=float)
        self.detection_prob = detection_prob
        self.visible_at = visible_at or (lambda t: True)

    def predict(self, states, t):
        return np.asarray(states, dtype=float) @ self.h.T

    def residual(self, z, predicted):
        return np.asarray(z, dtype=float) - np.asarray(predicted, dtype=float)

    def log_likelihood(self, z, states):
        residual = self.residual(z.vector, self.predict(states, z.t))
        return np.atleast_1d(
            multivariate_normal.logpdf(residual, mean=np.zeros(2), cov=self.noise_cov)
        )

    def jacobians(self, states, t):
        count = np.atleast_2d(states).shape[0]
        return np.broadcast_to(self.h, (count,) + self.h.shape).copy()

    def visible(self, states, t):
        shape = np.asarray(states).shape[:-1]
        return np.full(shape, bool(self.visible_at(t)))

    def try_measure(self, state, t, rng):
        if not self.visible_at(t):
            return None
        if rng.random() >= self.detection_prob:
            return None
        z = self.h @ np.asarray(state, dtype=float)
        if np.any(self.noise_cov):
            z = z + np.linalg.cholesky(self.noise_cov) @ rng.standard_normal(2)
        return LinearMeasurement(t=t, vector=z)


@pytest.fixture
def two_body() -> PhysicalConstants:
    return PhysicalConstants(j2=0.0)


@pytest.fixture
def no_drag() -> DragParams:
    return DragParams(area_to_mass=0.0)


@pytest.fixture
def case1_state() -> np.ndarray:
    return np.array([7800.0, 0.0, 0.0, 0.0, 6.8443 * np.cos(np.pi / 4), 6.8443 * np.sin(np.pi / 4)])


@pytest.fixture
def linear_system():
    """Well-conditioned 6-D linear-Gaussian system observed in its first two components."""
    rng = np.random.default_rng(7)
    f = 0.9 * np.eye(6) + 0.03 * rng.standard_normal((6, 6))
    q = 0.01 * np.eye(6)
    h = np.zeros((2, 6))
    h[0, 0] = 1.0
    h[1, 1] = 1.0
    h[0, 3] = 0.5
    r = 0.04 * np.eye(2)
    return LinearDynamics(f, q), LinearSensor(h, r)
