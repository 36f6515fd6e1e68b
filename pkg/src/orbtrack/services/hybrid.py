"""UKF inside the field of view, particle filter outside it.

A Gaussian belief is carried while the estimate sits inside the sensor's field
of view. When the estimate leaves it, particles are sampled from the belief and
propagated with constant weights. The first registered measurement reweights
the cloud and its weighted moments hand the track back to the UKF.
"""

import logging
import math
from typing import Optional, Tuple

import numpy as np

from orbtrack.core.exceptions import ConfigurationError, EpochError, OrbtrackError, PropagationError
from orbtrack.models.estimation import (
    GaussianBelief,
    Measurement,
    ParticleEnsemble,
    RunRecord,
    StateVector,
    TrackerEvent,
    TrackerMode,
    TrackerState,
)
from orbtrack.models.schemas import TrackerKind, UtParams
from orbtrack.services.dynamics import TransitionModel
from orbtrack.services.observation import MeasurementModel
from orbtrack.services.particles import (
    propagate_ensemble,
    reweight,
    sample_from_gaussian,
    systematic_resample,
    weighted_moments,
)
from orbtrack.services.unscented import ukf_predict, ukf_update

logger = logging.getLogger(__name__)

Snapshot = Tuple[float, ParticleEnsemble, ParticleEnsemble]


def epoch_grid(duration: float, epoch_dt: float) -> np.ndarray:
    """Decision epochs 0, dt, 2dt, ... up to duration (a short last epoch if needed)."""
    if duration < 0.0:
        raise ConfigurationError(f"duration must be non-negative, got {duration}")
    count = int(math.floor(duration / epoch_dt + 1e-9))
    times = [k * epoch_dt for k in range(count + 1)]
    if duration - times[-1] > 1e-9 * epoch_dt:
        times.append(duration)
    return np.asarray(times, dtype=float)


class HybridTracker:
    """Runs the mode-switching filter over a transition and a measurement model."""

    def __init__(
        self,
        dynamics: TransitionModel,
        sensor: MeasurementModel,
        ut_params: UtParams,
        particle_count: int,
        kind: TrackerKind = TrackerKind.HYBRID,
        propagate_particle_noise: bool = True,
        keep_snapshots: bool = False,
    ) -> None:
        self.dynamics = dynamics
        self.sensor = sensor
        self.ut_params = ut_params
        self.particle_count = particle_count
        self.kind = kind
        self.propagate_particle_noise = propagate_particle_noise
        self.keep_snapshots = keep_snapshots
        self.last_snapshot: Optional[Snapshot] = None

    @staticmethod
    def estimate(tracker: TrackerState) -> GaussianBelief:
        """Gaussian summary of the tracker, moment-matched in EnsembleMode."""
        if tracker.mode is TrackerMode.GAUSSIAN:
            assert tracker.belief is not None
            return tracker.belief
        assert tracker.ensemble is not None
        return weighted_moments(tracker.ensemble)

    def fov_gate(self, tracker: TrackerState, t: float) -> bool:
        if tracker.mode is TrackerMode.GAUSSIAN:
            assert tracker.belief is not None
            mean = tracker.belief.mean
        else:
            assert tracker.ensemble is not None
            mean = tracker.ensemble.mean
        return bool(np.all(self.sensor.visible(mean, t)))

    def _particle_rng(self, rng: np.random.Generator) -> Optional[np.random.Generator]:
        return rng if self.propagate_particle_noise else None

    def _gaussian_step(
        self, belief: GaussianBelief, t_next: float, z: Optional[Measurement]
    ) -> TrackerState:
        predicted = ukf_predict(belief, t_next, self.dynamics, self.ut_params)
        if z is None:
            return TrackerState(TrackerMode.GAUSSIAN, t_next, belief=predicted)
        updated = ukf_update(predicted, z, self.sensor, self.ut_params)
        return TrackerState(TrackerMode.GAUSSIAN, t_next, belief=updated, measured=True)

    def _leave_fov(
        self,
        belief: GaussianBelief,
        t_next: float,
        z: Optional[Measurement],
        rng: np.random.Generator,
    ) -> TrackerState:
        ensemble = sample_from_gaussian(belief, self.particle_count, rng)
        ensemble = propagate_ensemble(ensemble, t_next, self.dynamics, self._particle_rng(rng))
        if z is None:
            return TrackerState(
                TrackerMode.ENSEMBLE, t_next, ensemble=ensemble, event=TrackerEvent.UKF_TO_PF
            )
        # the estimate left the FOV but the object was still seen
        logger.debug(f"Boundary measurement processed by the particle branch at t={t_next}")
        ensemble = systematic_resample(reweight(ensemble, z, self.sensor), rng)
        return TrackerState(
            TrackerMode.ENSEMBLE,
            t_next,
            ensemble=ensemble,
            event=TrackerEvent.UKF_TO_PF,
            measured=True,
            boundary_update=True,
        )

    def _ensemble_step(
        self,
        ensemble: ParticleEnsemble,
        t_next: float,
        z: Optional[Measurement],
        rng: np.random.Generator,
    ) -> TrackerState:
        ensemble = propagate_ensemble(ensemble, t_next, self.dynamics, self._particle_rng(rng))
        if z is None:
            return TrackerState(TrackerMode.ENSEMBLE, t_next, ensemble=ensemble)
        weighted = reweight(ensemble, z, self.sensor)
        belief = weighted_moments(weighted)
        resampled = systematic_resample(weighted, rng)
        if self.keep_snapshots:
            self.last_snapshot = (t_next, weighted, resampled)
        return TrackerState(
            TrackerMode.GAUSSIAN,
            t_next,
            belief=belief,
            event=TrackerEvent.PF_TO_UKF,
            measured=True,
        )

    def step(
        self,
        tracker: TrackerState,
        t_next: float,
        z: Optional[Measurement],
        rng: np.random.Generator,
    ) -> TrackerState:
        """Advance one decision epoch to t_next, consuming a measurement taken at t_next."""
        if t_next <= tracker.t:
            raise EpochError(f"next epoch {t_next} must be after {tracker.t}", tracker.t)
        if z is not None and not math.isclose(z.t, t_next, rel_tol=0.0, abs_tol=1e-9):
            raise EpochError(f"measurement time {z.t} does not match epoch", t_next)
        self.last_snapshot = None

        try:
            if tracker.mode is TrackerMode.GAUSSIAN:
                assert tracker.belief is not None
                if self.kind is TrackerKind.UKF or self.fov_gate(tracker, tracker.t):
                    return self._gaussian_step(tracker.belief, t_next, z)
                return self._leave_fov(tracker.belief, t_next, z, rng)
            assert tracker.ensemble is not None
            return self._ensemble_step(tracker.ensemble, t_next, z, rng)
        except EpochError:
            raise
        except OrbtrackError as exc:
            raise EpochError(str(exc), t_next) from exc

    def run_scenario(
        self,
        initial: GaussianBelief,
        truth0: StateVector,
        duration: float,
        epoch_dt: float,
        truth_dynamics: TransitionModel,
        rng: np.random.Generator,
        index: int = 0,
    ) -> RunRecord:
        """Co-simulate truth, sensor and tracker on the epoch grid.

        The generator is split into independent truth, sensor and filter
        streams, so the filter's random draws never shift the truth or the
        measurements.
        """
        truth_rng, sensor_rng, filter_rng = rng.spawn(3)
        record = RunRecord(index=index)
        tracker = TrackerState(TrackerMode.GAUSSIAN, initial.t, belief=initial)
        truth = np.asarray(truth0, dtype=float)
        self._record(record, tracker, truth, None)

        for t_next in epoch_grid(duration, epoch_dt)[1:] + initial.t:
            try:
                truth = truth_dynamics.propagate(truth, tracker.t, float(t_next), truth_rng)
                if not np.all(np.isfinite(truth)):
                    raise PropagationError(f"truth trajectory diverged before t={t_next}")
                z = self.sensor.try_measure(truth, float(t_next), sensor_rng)
                tracker = self.step(tracker, float(t_next), z, filter_rng)
                self._record(record, tracker, truth, z)
            except OrbtrackError as exc:
                record.failed = True
                record.failure_reason = str(exc)
                logger.warning(f"Run {index} stopped: {exc}")
                break

        logger.debug(
            f"Run {index}: {len(record.times)} epochs, {len(record.measurements)} measurements, "
            f"{len(record.transitions)} transitions"
        )
        return record

    def _record(
        self,
        record: RunRecord,
        tracker: TrackerState,
        truth: np.ndarray,
        z: Optional[Measurement],
    ) -> None:
        estimate = self.estimate(tracker)
        record.times.append(tracker.t)
        record.truth.append(np.array(truth))
        record.means.append(np.array(estimate.mean))
        record.covs.append(np.array(estimate.cov))
        record.modes.append(tracker.mode)
        record.events.append(tracker.event)
        record.measured.append(tracker.measured)
        record.boundary_updates.append(tracker.boundary_update)
        if z is not None:
            record.measurements.append(z)
        if self.last_snapshot is not None:
            record.snapshots.append(self.last_snapshot)
        if tracker.event is not TrackerEvent.NONE:
            logger.debug(f"Run {record.index}: {tracker.event.value} at t={tracker.t}")
