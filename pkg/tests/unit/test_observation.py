import math

import numpy as np
import pytest

from orbtrack.core.exceptions import ConfigurationError, DegenerateGeometryError
from orbtrack.models.estimation import Measurement
from orbtrack.models.schemas import StationModel
from orbtrack.services.observation import (
    AngleSensor,
    angles_from_los,
    in_fov,
    measure_ideal,
    measurement_log_likelihood,
    station_rotation,
    try_measure,
    wrap_angle,
)


@pytest.fixture
def station() -> StationModel:
    return StationModel()


def _over_station(offset_deg: float, distance: float = 1000.0) -> np.ndarray:
    angle = math.radians(offset_deg)
    position = np.array([6378.137, 0.0, 0.0]) + distance * np.array([math.cos(angle), math.sin(angle), 0.0])
    return np.concatenate([position, [0.0, 7.5, 0.0]])


def test_station_rotation_is_orthonormal():
    rotation = station_rotation(1234.5, 7.2921159e-5)
    np.testing.assert_allclose(rotation @ rotation.T, np.eye(3), atol=1e-15)
    np.testing.assert_array_equal(station_rotation(0.0, 7.2921159e-5), np.eye(3))


def test_object_straight_over_the_station(station):
    state = np.array([7000.0, 0.0, 0.0, 0.0, 7.5, 0.0])
    theta, phi = measure_ideal(state, 0.0, station)
    assert theta == pytest.approx(0.0, abs=1e-15)
    assert phi == pytest.approx(0.0, abs=1e-15)
    assert in_fov(state, 0.0, station)


def test_rotating_frame_follows_the_earth(station):
    quarter_turn = (math.pi / 2) / station.omega
    state = np.array([0.0, 7000.0, 0.0, -7.5, 0.0, 0.0])
    theta, phi = measure_ideal(state, quarter_turn, station)
    assert theta == pytest.approx(0.0, abs=1e-9)
    assert phi == pytest.approx(0.0, abs=1e-9)


def test_right_ascension_outside_the_half_width(station):
    state = _over_station(120.0)
    _, phi = measure_ideal(state, 0.0, station)
    assert phi == pytest.approx(math.radians(120.0), rel=1e-12)
    assert not in_fov(state, 0.0, station)
    assert in_fov(_over_station(74.0), 0.0, station)


@pytest.mark.parametrize(
    "angle, expected",
    [(-math.pi, math.pi), (3 * math.pi, math.pi), (-1.5 * math.pi, 0.5 * math.pi), (0.25, 0.25)],
)
def test_wrap_angle(angle, expected):
    assert float(wrap_angle(angle)) == pytest.approx(expected, abs=1e-12)


def test_coincident_object_has_no_line_of_sight(station):
    with pytest.raises(DegenerateGeometryError):
        measure_ideal(np.array([6378.137, 0.0, 0.0, 0.0, 1.0, 0.0]), 0.0, station)


def test_missed_detection_returns_none(station):
    blind = station.model_copy(update={"detection_prob": 0.0})
    assert try_measure(_over_station(0.0), 0.0, blind, np.random.default_rng(1)) is None


def test_out_of_view_scan_draws_nothing(station):
    rng = np.random.default_rng(5)
    reference = np.random.default_rng(5)
    assert try_measure(_over_station(120.0), 0.0, station, rng) is None
    assert rng.random() == reference.random()


def test_noise_free_sensor_reports_the_ideal_angles(station):
    exact = station.model_copy(update={"detection_prob": 1.0, "noise_cov": ((0.0, 0.0), (0.0, 0.0))})
    state = _over_station(30.0)
    z = try_measure(state, 0.0, exact, np.random.default_rng(0))
    assert z is not None
    assert (z.theta, z.phi) == pytest.approx(measure_ideal(state, 0.0, exact), abs=1e-15)


def test_log_likelihood_peaks_at_the_ideal_measurement(station):
    state = _over_station(10.0)
    theta, phi = measure_ideal(state, 0.0, station)
    peak = measurement_log_likelihood(Measurement(0.0, theta, phi), state, 0.0, station)
    det = float(np.linalg.det(station.noise_matrix))
    assert peak == pytest.approx(-math.log(2.0 * math.pi * math.sqrt(det)), rel=1e-12)

    shifted = Measurement(0.0, theta + 1e-5, phi)
    assert measurement_log_likelihood(shifted, state, 0.0, station) < peak


def test_singular_noise_cannot_score_likelihoods(station):
    degenerate = station.model_copy(update={"noise_cov": ((1e-10, 0.0), (0.0, 0.0))})
    state = _over_station(0.0)
    with pytest.raises(ConfigurationError):
        measurement_log_likelihood(Measurement(0.0, 0.0, 0.0), state, 0.0, degenerate)


def test_residual_wraps_across_the_branch_cut(station):
    sensor = AngleSensor(station)
    residual = sensor.residual(np.array([0.0, math.pi - 0.01]), np.array([0.0, -math.pi + 0.01]))
    assert residual[1] == pytest.approx(-0.02, abs=1e-12)


def test_angle_jacobian_matches_finite_differences(station):
    sensor = AngleSensor(station)
    state = _over_station(20.0) + np.array([0.0, 0.0, 300.0, 0.0, 0.0, 0.0])
    jacobian = sensor.jacobians(state, 0.0)[0]

    h = 1e-3
    for i in range(3):
        step = np.zeros(6)
        step[i] = h
        numeric = (sensor.predict(state + step, 0.0) - sensor.predict(state - step, 0.0)) / (2 * h)
        np.testing.assert_allclose(jacobian[:, i], numeric, rtol=1e-5, atol=1e-10)
    # angles do not depend on velocity
    np.testing.assert_allclose(jacobian[:, 3:], 0.0, atol=1e-12)


def test_batch_visibility_matches_single_checks(station):
    sensor = AngleSensor(station)
    states = np.vstack([_over_station(0.0), _over_station(120.0), _over_station(-60.0)])
    np.testing.assert_array_equal(sensor.visible(states, 0.0), [True, False, True])


def test_station_rotations_compose_by_adding_times():
    omega = 7.2921159e-5
    for t1, t2 in [(0.0, 10.0), (1234.5, 4321.0), (86164.0, -300.0)]:
        np.testing.assert_allclose(
            station_rotation(t1, omega) @ station_rotation(t2, omega), station_rotation(t1 + t2, omega), atol=1e-12
        )


def test_angles_do_not_depend_on_range():
    rng = np.random.default_rng(11)
    rho = rng.standard_normal((50, 3)) * 1000.0
    scales = rng.uniform(0.01, 100.0, size=(50, 1))
    np.testing.assert_allclose(angles_from_los(scales * rho), angles_from_los(rho), rtol=0.0, atol=1e-12)


def test_detection_rate_matches_the_probability(station):
    state = _over_station(5.0)
    rng = np.random.default_rng(17)
    hits = [try_measure(state, 0.0, station, rng) for _ in range(10_000)]
    detected = [z for z in hits if z is not None]
    assert 0.88 <= len(detected) / len(hits) <= 0.92
    assert in_fov(state, 0.0, station)


def test_likelihood_integrates_to_one(station):
    state = _over_station(10.0)
    theta, phi = measure_ideal(state, 0.0, station)
    sigma = math.sqrt(float(station.noise_matrix[0, 0]))
    offsets = np.linspace(-6.0 * sigma, 6.0 * sigma, 121)
    step = offsets[1] - offsets[0]
    total = sum(
        math.exp(measurement_log_likelihood(Measurement(0.0, theta + a, phi + b), state, 0.0, station))
        for a in offsets
        for b in offsets
    )
    assert total * step**2 == pytest.approx(1.0, abs=1e-3)
