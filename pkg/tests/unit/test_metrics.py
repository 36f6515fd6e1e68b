import numpy as np
import pytest

from conftest import LinearDynamics, LinearMeasurement, LinearSensor
from orbtrack.core.exceptions import AlignmentError, ConfigurationError, NumericalFailureError
from orbtrack.models.estimation import GaussianBelief, PcrbSeries, RunRecord
from orbtrack.models.schemas import UtParams
from orbtrack.services.metrics import (
    NEES_BAND,
    chi_square_band,
    consistency_report,
    nees,
    nees_series,
    outside_band_fraction,
    pcrb_series,
    rmse_matrix_series,
    spectral_norm,
)
from orbtrack.services.unscented import ukf_predict, ukf_update

MEAN = np.array([1.0, 0.5, 0.2, 0.0, 0.0, 0.0])


def _record(index, times, truth, means, covs=None, measured=None):
    count = len(times)
    return RunRecord(
        index=index,
        times=list(times),
        truth=[np.asarray(x, dtype=float) for x in truth],
        means=[np.asarray(x, dtype=float) for x in means],
        covs=list(covs) if covs is not None else [np.eye(6)] * count,
        measured=list(measured) if measured is not None else [False] * count,
    )


def test_chi_square_band_for_six_dof():
    low, high = chi_square_band(6)
    assert (low, high) == pytest.approx(NEES_BAND, abs=1e-3)


def test_unmeasured_random_walk_bound_grows_linearly():
    q = 0.02
    dynamics = LinearDynamics(np.eye(6), q * np.eye(6))
    sensor = LinearSensor(np.eye(2, 6), np.eye(2), visible_at=lambda t: False)
    initial = GaussianBelief(MEAN, 0.5 * np.eye(6), 0.0)

    series = pcrb_series(dynamics, sensor, initial, [0.0, 1.0, 2.0, 3.0], 5, np.random.default_rng(0))
    np.testing.assert_array_equal(series.bounds[0], initial.cov)
    for k in range(4):
        np.testing.assert_allclose(series.bounds[k], (0.5 + k * q) * np.eye(6), rtol=1e-10)
    assert not series.regularized.any()


def test_linear_gaussian_bound_is_the_kalman_covariance(linear_system):
    dynamics, sensor = linear_system
    initial = GaussianBelief(MEAN, np.eye(6), 0.0)
    times = [float(k) for k in range(31)]
    series = pcrb_series(dynamics, sensor, initial, times, 10, np.random.default_rng(1))

    cov = np.eye(6)
    h, r_inv = sensor.h, np.linalg.inv(sensor.noise_cov)
    for k in range(1, 31):
        prior = dynamics.f @ cov @ dynamics.f.T + dynamics.q
        cov = np.linalg.inv(np.linalg.inv(prior) + h.T @ r_inv @ h)
        np.testing.assert_allclose(series.bounds[k], cov, rtol=1e-8, atol=1e-10)


def test_measurements_shrink_the_observed_bound():
    dynamics = LinearDynamics(np.eye(6), 1e-6 * np.eye(6))
    sensor = LinearSensor(np.eye(2, 6), 1e-4 * np.eye(2))
    initial = GaussianBelief(MEAN, np.eye(6), 0.0)
    series = pcrb_series(dynamics, sensor, initial, [0.0, 1.0, 2.0, 3.0], 5, np.random.default_rng(2))
    diagonals = np.array([np.diag(b)[:2] for b in series.bounds])
    assert np.all(np.diff(diagonals, axis=0) < 0.0)


def test_detection_probability_scales_the_information():
    dynamics = LinearDynamics(np.eye(6), 1e-2 * np.eye(6))
    full = LinearSensor(np.eye(2, 6), np.eye(2), detection_prob=1.0)
    half = LinearSensor(np.eye(2, 6), np.eye(2), detection_prob=0.5)
    initial = GaussianBelief(MEAN, np.eye(6), 0.0)
    times = [0.0, 1.0]
    with_full = pcrb_series(dynamics, full, initial, times, 3, np.random.default_rng(0))
    with_half = pcrb_series(dynamics, half, initial, times, 3, np.random.default_rng(0))
    gain_full = with_full.information[1][0, 0] - with_full.information[1][2, 2]
    gain_half = with_half.information[1][0, 0] - with_half.information[1][2, 2]
    assert gain_half == pytest.approx(0.5 * gain_full, rel=1e-12)


def test_singular_process_noise_is_rejected():
    dynamics = LinearDynamics(np.eye(6), np.zeros((6, 6)))
    sensor = LinearSensor(np.eye(2, 6), np.eye(2))
    initial = GaussianBelief(MEAN, np.eye(6), 0.0)
    with pytest.raises(ConfigurationError):
        pcrb_series(dynamics, sensor, initial, [0.0, 1.0], 3, np.random.default_rng(0))


def test_first_epoch_must_match_the_prior():
    dynamics = LinearDynamics(np.eye(6), np.eye(6))
    sensor = LinearSensor(np.eye(2, 6), np.eye(2))
    initial = GaussianBelief(MEAN, np.eye(6), 0.0)
    with pytest.raises(AlignmentError):
        pcrb_series(dynamics, sensor, initial, [1.0, 2.0], 3, np.random.default_rng(0))


def test_perfect_estimates_have_zero_rmse():
    truth = [MEAN, MEAN + 1.0]
    runs = [_record(i, [0.0, 1.0], truth, truth) for i in range(3)]
    times, rmse = rmse_matrix_series(runs)
    np.testing.assert_array_equal(times, [0.0, 1.0])
    np.testing.assert_array_equal(rmse, np.zeros((2, 6, 6)))


def test_single_axis_error_fills_one_entry():
    error = np.zeros(6)
    error[2] = 0.3
    runs = [_record(i, [0.0], [MEAN], [MEAN + error]) for i in range(4)]
    _, rmse = rmse_matrix_series(runs)
    expected = np.zeros((6, 6))
    expected[2, 2] = 0.09
    np.testing.assert_allclose(rmse[0], expected, atol=1e-15)


def test_runs_on_different_grids_cannot_be_averaged():
    pair = [MEAN, MEAN]
    runs = [_record(0, [0.0, 1.0], pair, pair), _record(1, [0.0, 2.0], pair, pair)]
    with pytest.raises(AlignmentError):
        rmse_matrix_series(runs)
    with pytest.raises(AlignmentError):
        rmse_matrix_series(runs[:1])


def test_failed_runs_are_left_out():
    good = [_record(i, [0.0], [MEAN], [MEAN]) for i in range(2)]
    bad = _record(2, [0.0], [MEAN], [MEAN + 5.0])
    bad.failed = True
    _, rmse = rmse_matrix_series(good + [bad])
    np.testing.assert_array_equal(rmse[0], np.zeros((6, 6)))


def test_spectral_norm():
    assert spectral_norm(np.eye(6)) == pytest.approx(1.0)
    assert spectral_norm(np.diag([3.0, -4.0, 1.0, 0.0, 0.0, 0.0])) == pytest.approx(4.0)

    a = np.random.default_rng(7).standard_normal((6, 6))
    symmetric = a + a.T
    vector = np.ones(6)
    for _ in range(2000):
        vector = symmetric @ vector
        vector /= np.linalg.norm(vector)
    rayleigh = abs(vector @ symmetric @ vector)
    assert spectral_norm(symmetric) == pytest.approx(rayleigh, rel=1e-9)

    with pytest.raises(ConfigurationError):
        spectral_norm(np.full((2, 2), np.nan))


def test_nees_values():
    belief = GaussianBelief(MEAN, np.eye(6), 0.0)
    assert nees(MEAN, belief) == 0.0
    assert nees(MEAN + 1.0, belief) == pytest.approx(6.0)
    with pytest.raises(NumericalFailureError):
        nees(MEAN + 1.0, GaussianBelief(MEAN, np.zeros((6, 6)), 0.0))


def test_rank_deficient_covariance_is_regularized():
    cov = np.diag([1.0, 1.0, 1.0, 1.0, 1.0, 0.0])
    error = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    assert nees(MEAN + error, GaussianBelief(MEAN, cov, 0.0)) == pytest.approx(1.0, rel=1e-9)


def test_nees_series_skips_and_counts_singular_epochs():
    record = _record(
        0,
        [0.0, 1.0, 2.0],
        [MEAN + 1.0] * 3,
        [MEAN] * 3,
        covs=[np.eye(6), np.zeros((6, 6)), np.eye(6)],
        measured=[True, True, True],
    )
    times, values, skipped = nees_series([record])
    np.testing.assert_array_equal(times, [0.0, 2.0])
    np.testing.assert_allclose(values, [6.0, 6.0])
    assert skipped == 1


def test_outside_band_fraction():
    assert outside_band_fraction([1.0, 6.0, 13.0, 6.0]) == pytest.approx(0.5)
    assert np.isnan(outside_band_fraction([]))


def test_consistent_filter_stays_inside_the_band(linear_system):
    dynamics, sensor = linear_system
    rng = np.random.default_rng(21)
    belief = GaussianBelief(MEAN, np.eye(6), 0.0)
    truth = MEAN + rng.standard_normal(6)
    record = _record(0, [0.0], [truth], [belief.mean], [belief.cov], [False])

    for k in range(1, 1001):
        t = float(k)
        truth = dynamics.propagate(truth, t - 1.0, t, rng)
        z_vector = sensor.h @ truth + np.linalg.cholesky(sensor.noise_cov) @ rng.standard_normal(2)
        belief = ukf_predict(belief, t, dynamics, UtParams())
        belief = ukf_update(belief, LinearMeasurement(t, z_vector), sensor, UtParams())
        record.times.append(t)
        record.truth.append(truth)
        record.means.append(np.array(belief.mean))
        record.covs.append(np.array(belief.cov))
        record.measured.append(True)

    _, values, skipped = nees_series([record])
    assert (values.size, skipped) == (1000, 0)
    assert values.mean() == pytest.approx(6.0, abs=0.5)
    assert outside_band_fraction(values) == pytest.approx(0.10, abs=0.03)


def test_consistency_report_flags_roundoff_separately():
    error = np.zeros(6)
    error[0] = 1.0
    runs = [_record(i, [0.0, 1.0], [MEAN, MEAN], [MEAN + error, MEAN]) for i in range(2)]
    nearly = np.zeros((6, 6))
    nearly[1, 1] = 1e-8
    pcrb = PcrbSeries(
        times=np.array([0.0, 1.0]),
        information=np.stack([np.eye(6), np.eye(6)]),
        bounds=np.stack([nearly, np.eye(6)]),
        regularized=np.array([False, False]),
    )
    report = consistency_report(runs, pcrb)
    np.testing.assert_allclose(report.spectral_norms, [1.0, 1.0])
    np.testing.assert_allclose(report.lambda_mins, [-1e-8, -1.0])
    np.testing.assert_array_equal(report.roundoff_epochs, [True, False])
    np.testing.assert_array_equal(report.violation_epochs, [False, True])


def test_consistency_report_needs_matching_epochs():
    runs = [_record(i, [0.0, 1.0], [MEAN, MEAN], [MEAN, MEAN]) for i in range(2)]
    pcrb = PcrbSeries(
        times=np.array([0.0, 2.0]),
        information=np.stack([np.eye(6)] * 2),
        bounds=np.stack([np.eye(6)] * 2),
        regularized=np.array([False, False]),
    )
    with pytest.raises(AlignmentError):
        consistency_report(runs, pcrb)
