import math

import numpy as np
import pytest

from conftest import LinearDynamics, LinearSensor
from orbtrack.core.exceptions import EpochError
from orbtrack.models.estimation import (
    GaussianBelief,
    Measurement,
    ParticleEnsemble,
    TrackerEvent,
    TrackerMode,
    TrackerState,
)
from orbtrack.models.schemas import DragParams, PhysicalConstants, StationModel, TrackerKind, UtParams
from orbtrack.services.dynamics import OrbitalDynamics, ProcessNoise
from orbtrack.services.hybrid import HybridTracker, epoch_grid
from orbtrack.services.observation import AngleSensor, in_fov
from orbtrack.services.scenarios import load_scenario, simulate_run, with_overrides
from orbtrack.services.particles import weighted_moments

START = np.array([1.0, 0.5, 0.2, 0.0, 0.0, 0.0])


def _linear(visible_at=None, detection_prob=1.0):
    dynamics = LinearDynamics(np.eye(6), 1e-4 * np.eye(6))
    h = np.zeros((2, 6))
    h[0, 0] = 1.0
    h[1, 1] = 1.0
    sensor = LinearSensor(h, 1e-4 * np.eye(2), detection_prob=detection_prob, visible_at=visible_at)
    return dynamics, sensor


def _tracker(dynamics, sensor, **kwargs) -> HybridTracker:
    return HybridTracker(dynamics, sensor, UtParams(), particle_count=200, **kwargs)


def _initial() -> GaussianBelief:
    return GaussianBelief(START, 0.01 * np.eye(6), 0.0)


def test_epoch_grid():
    np.testing.assert_array_equal(epoch_grid(30.0, 10.0), [0.0, 10.0, 20.0, 30.0])
    np.testing.assert_array_equal(epoch_grid(25.0, 10.0), [0.0, 10.0, 20.0, 25.0])
    np.testing.assert_array_equal(epoch_grid(0.0, 10.0), [0.0])


def test_always_visible_target_never_leaves_gaussian_mode():
    dynamics, sensor = _linear()
    record = _tracker(dynamics, sensor).run_scenario(
        _initial(), START, 200.0, 10.0, dynamics, np.random.default_rng(0)
    )
    assert not record.failed
    assert all(mode is TrackerMode.GAUSSIAN for mode in record.modes)
    assert record.transitions == []
    assert all(record.measured[1:])


def test_leaving_the_view_switches_to_particles():
    dynamics, sensor = _linear(visible_at=lambda t: t < 30.0)
    tracker = _tracker(dynamics, sensor)
    state = TrackerState(TrackerMode.GAUSSIAN, 30.0, belief=GaussianBelief(START, 0.01 * np.eye(6), 30.0))

    moved = tracker.step(state, 40.0, None, np.random.default_rng(1))
    assert moved.mode is TrackerMode.ENSEMBLE
    assert moved.event is TrackerEvent.UKF_TO_PF
    assert moved.ensemble.size == 200
    np.testing.assert_allclose(moved.ensemble.weights, 1 / 200)


def test_first_measurement_hands_back_the_weighted_moments():
    dynamics, sensor = _linear()
    tracker = _tracker(dynamics, sensor, keep_snapshots=True)
    rng = np.random.default_rng(2)
    cloud = START + 0.1 * rng.standard_normal((200, 6))
    ensemble = ParticleEnsemble(cloud, np.full(200, 1 / 200), 0.0)
    state = TrackerState(TrackerMode.ENSEMBLE, 0.0, ensemble=ensemble)

    z = Measurement(10.0, 1.02, 0.49)
    handed = tracker.step(state, 10.0, z, rng)

    assert handed.mode is TrackerMode.GAUSSIAN
    assert handed.event is TrackerEvent.PF_TO_UKF
    assert handed.measured
    t, weighted, resampled = tracker.last_snapshot
    assert t == 10.0
    expected = weighted_moments(weighted)
    np.testing.assert_array_equal(handed.belief.mean, expected.mean)
    np.testing.assert_array_equal(handed.belief.cov, expected.cov)
    np.testing.assert_allclose(resampled.weights, 1 / 200)


def test_gate_uses_the_estimate_not_the_particles():
    station = StationModel()
    tracker = _tracker(LinearDynamics(np.eye(6), np.zeros((6, 6))), AngleSensor(station))
    boresight = np.array([7000.0, 0.0, 0.0, 0.0, 7.5, 0.0])
    spread = np.array([0.0, 5000.0, 0.0, 0.0, 0.0, 0.0])

    gaussian = TrackerState(TrackerMode.GAUSSIAN, 0.0, belief=GaussianBelief(boresight, np.eye(6), 0.0))
    ensemble = TrackerState(
        TrackerMode.ENSEMBLE,
        0.0,
        ensemble=ParticleEnsemble(np.vstack([boresight + spread, boresight - spread]), np.full(2, 0.5), 0.0),
    )
    assert tracker.fov_gate(gaussian, 0.0)
    assert tracker.fov_gate(ensemble, 0.0)

    angle = math.radians(120.0)
    behind = np.array([6378.137 + 1000 * math.cos(angle), 1000 * math.sin(angle), 0.0, 0.0, 7.5, 0.0])
    off = TrackerState(TrackerMode.GAUSSIAN, 0.0, belief=GaussianBelief(behind, np.eye(6), 0.0))
    assert not tracker.fov_gate(off, 0.0)


def test_zero_duration_run_records_one_epoch():
    dynamics, sensor = _linear()
    record = _tracker(dynamics, sensor).run_scenario(
        _initial(), START, 0.0, 10.0, dynamics, np.random.default_rng(0)
    )
    assert record.times == [0.0]
    assert record.modes == [TrackerMode.GAUSSIAN]


def test_same_seed_gives_identical_runs():
    dynamics, sensor = _linear(visible_at=lambda t: not 50.0 <= t < 120.0, detection_prob=0.8)

    def run():
        return _tracker(dynamics, sensor).run_scenario(
            _initial(), START, 300.0, 10.0, dynamics, np.random.default_rng(42)
        )

    first, second = run(), run()
    np.testing.assert_array_equal(np.asarray(first.means), np.asarray(second.means))
    np.testing.assert_array_equal(np.asarray(first.truth), np.asarray(second.truth))
    assert first.events == second.events


def test_mode_switches_follow_the_gate_and_the_measurements():
    dynamics, sensor = _linear(visible_at=lambda t: not 50.0 <= t < 120.0, detection_prob=0.7)
    record = _tracker(dynamics, sensor).run_scenario(
        _initial(), START, 400.0, 10.0, dynamics, np.random.default_rng(9)
    )
    assert not record.failed
    assert any(e is TrackerEvent.UKF_TO_PF for e in record.events)
    for k in range(1, len(record.times)):
        event, previous, current = record.events[k], record.modes[k - 1], record.modes[k]
        if event is TrackerEvent.UKF_TO_PF:
            assert previous is TrackerMode.GAUSSIAN
            assert not sensor.visible_at(record.times[k - 1])
        if event is TrackerEvent.PF_TO_UKF:
            assert previous is TrackerMode.ENSEMBLE
            assert record.measured[k]
        if previous is TrackerMode.ENSEMBLE and current is TrackerMode.ENSEMBLE:
            assert not record.measured[k]


def test_measurement_at_the_boundary_is_used_by_the_particles():
    dynamics, sensor = _linear()
    tracker = _tracker(dynamics, LinearSensor(sensor.h, sensor.noise_cov, visible_at=lambda t: t >= 10.0))
    state = TrackerState(TrackerMode.GAUSSIAN, 0.0, belief=_initial())
    stepped = tracker.step(state, 10.0, Measurement(10.0, 1.0, 0.5), np.random.default_rng(3))
    assert stepped.mode is TrackerMode.ENSEMBLE
    assert stepped.event is TrackerEvent.UKF_TO_PF
    assert stepped.measured and stepped.boundary_update


def test_failures_are_recorded_with_their_epoch():
    class _Blind(LinearSensor):
        def log_likelihood(self, z, states):
            return np.full(np.atleast_2d(states).shape[0], -np.inf)

    dynamics, sensor = _linear()
    blind = _Blind(sensor.h, sensor.noise_cov, visible_at=lambda t: t >= 20.0)
    record = _tracker(dynamics, blind).run_scenario(
        _initial(), START, 100.0, 10.0, dynamics, np.random.default_rng(0)
    )
    assert record.failed
    assert "epoch t=" in record.failure_reason
    assert record.times[-1] < 100.0


def test_step_rejects_stale_epochs():
    dynamics, sensor = _linear()
    state = TrackerState(TrackerMode.GAUSSIAN, 10.0, belief=GaussianBelief(START, np.eye(6), 10.0))
    with pytest.raises(EpochError):
        _tracker(dynamics, sensor).step(state, 10.0, None, np.random.default_rng(0))


def test_full_sphere_view_makes_the_hybrid_a_pure_ukf(case1_state):
    station = StationModel(
        fov_azimuth_halfwidth=math.pi, fov_polar_halfwidth=math.pi, detection_prob=1.0
    )
    consts, drag = PhysicalConstants(j2=0.0), DragParams(area_to_mass=0.0)
    filter_model = OrbitalDynamics(consts, drag, 10.0, ProcessNoise.isotropic(1e-10))
    truth_model = OrbitalDynamics(consts, drag, 1.0, ProcessNoise.isotropic(1e-10))
    belief = GaussianBelief(case1_state, np.diag([1.0, 1.0, 1.0, 1e-6, 1e-6, 1e-6]), 0.0)

    def run(kind):
        tracker = HybridTracker(filter_model, AngleSensor(station), UtParams(), 100, kind=kind)
        return tracker.run_scenario(belief, case1_state, 200.0, 10.0, truth_model, np.random.default_rng(5))

    hybrid, ukf = run(TrackerKind.HYBRID), run(TrackerKind.UKF)
    assert all(mode is TrackerMode.GAUSSIAN for mode in hybrid.modes)
    np.testing.assert_array_equal(np.asarray(hybrid.means), np.asarray(ukf.means))
    np.testing.assert_array_equal(np.asarray(hybrid.covs), np.asarray(ukf.covs))


@pytest.mark.slow
def test_case1_switches_twice_per_coverage_gap():
    config = with_overrides(load_scenario("case1"), duration=12200.0)
    seeds = np.random.SeedSequence(config.master_seed).spawn(3)
    record = next(
        (r for r in (simulate_run(config, i, seed) for i, seed in enumerate(seeds)) if not r.failed), None
    )
    assert record is not None

    visible = [in_fov(x, t, config.station) for t, x in zip(record.times, record.truth)]
    exits = sum(1 for before, after in zip(visible, visible[1:]) if before and not after)
    assert exits >= 1
    assert abs(len(record.transitions) - 2 * exits) <= 1
    events = [event for _, event in record.transitions]
    assert events[0] is TrackerEvent.UKF_TO_PF
    assert all(a is not b for a, b in zip(events, events[1:]))
