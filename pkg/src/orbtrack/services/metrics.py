"""Filter assessment: posterior Cramer-Rao bound, RMSE matrices and NEES.

The bound follows the information recursion
J_{k+1} = D22 - D21 (J_k + D11)^-1 D12 with expectations taken over Monte
Carlo truth draws. Missed detections and out-of-view epochs scale the
measurement information by the probability of a registered detection.
"""

import logging
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
import scipy.linalg
from scipy.stats import chi2

from orbtrack.core.exceptions import AlignmentError, ConfigurationError, NumericalFailureError
from orbtrack.models.estimation import (
    ConsistencyReport,
    GaussianBelief,
    PcrbSeries,
    RunRecord,
    symmetrize,
)
from orbtrack.services.dynamics import TransitionModel
from orbtrack.services.linalg import robust_cholesky
from orbtrack.services.observation import MeasurementModel
from orbtrack.services.particles import sample_from_gaussian

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

# two-sided 90% chi-square band for a 6-D state
NEES_BAND = (1.635, 12.592)
INFORMATION_JITTER = 1e-12
ROUNDOFF_RATIO = 1e-6


def chi_square_band(dof: int, confidence: float = 0.90) -> Tuple[float, float]:
    tail = 0.5 * (1.0 - confidence)
    return float(chi2.ppf(tail, dof)), float(chi2.ppf(1.0 - tail, dof))


def _inverse(matrix: FloatArray, what: str) -> FloatArray:
    try:
        inverse = scipy.linalg.inv(symmetrize(matrix))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ConfigurationError(f"{what} is singular") from exc
    if not np.all(np.isfinite(inverse)):
        raise ConfigurationError(f"{what} is singular")
    return symmetrize(inverse)


def _regularized_inverse(matrix: FloatArray) -> Tuple[FloatArray, bool]:
    """Invert an information matrix, adding jitter once if it is singular."""
    matrix = symmetrize(matrix)
    try:
        inverse = scipy.linalg.inv(matrix)
        if np.all(np.isfinite(inverse)) and np.linalg.cond(matrix) < 1.0 / np.finfo(float).eps:
            return symmetrize(inverse), False
    except (np.linalg.LinAlgError, ValueError):
        pass
    try:
        inverse = scipy.linalg.inv(matrix + INFORMATION_JITTER * np.eye(matrix.shape[0]))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalFailureError("information matrix is singular even after jitter") from exc
    return symmetrize(inverse), True


def pcrb_series(
    transition: TransitionModel,
    sensor: MeasurementModel,
    initial: GaussianBelief,
    times: Sequence[float],
    draws: int,
    rng: np.random.Generator,
    measurement_times: Optional[Iterable[float]] = None,
) -> PcrbSeries:
    """Information and bound matrices at every epoch in ``times``.

    ``times[0]`` must be the initial epoch. Measurement information is added
    at every later epoch unless ``measurement_times`` narrows the schedule.
    """
    epochs = np.asarray(times, dtype=float)
    if epochs.size == 0 or abs(epochs[0] - initial.t) > 1e-9:
        raise AlignmentError("the first PCRB epoch must match the initial belief")
    if draws < 1:
        raise ConfigurationError(f"draws must be at least 1, got {draws}")
    scheduled = None if measurement_times is None else np.asarray(sorted(measurement_times), dtype=float)

    information, regularized = _regularized_inverse(np.asarray(initial.cov))
    r_inv = _inverse(np.asarray(sensor.noise_cov), "measurement noise covariance")
    states = (
        np.array(sample_from_gaussian(initial, draws, rng).states)
        if draws >= 2
        else np.asarray(initial.mean)[None, :].copy()
    )

    infos = [information]
    bounds = [symmetrize(np.asarray(initial.cov))]
    flags = [regularized]
    for t0, t1 in zip(epochs[:-1], epochs[1:]):
        q_inv = _inverse(transition.process_noise(t0, t1), "process noise covariance")
        jacobians = transition.jacobians(states, t0, t1)
        d11 = np.mean(np.transpose(jacobians, (0, 2, 1)) @ q_inv @ jacobians, axis=0)
        d12 = -np.mean(jacobians, axis=0).T @ q_inv
        d22 = q_inv.copy()

        states = transition.propagate(states, t0, t1, rng)
        if scheduled is None or np.any(np.isclose(scheduled, t1, rtol=0.0, atol=1e-9)):
            visible = np.asarray(sensor.visible(states, t1), dtype=float)
            if visible.any():
                h = sensor.jacobians(states, t1)
                measured = np.transpose(h, (0, 2, 1)) @ r_inv @ h
                d22 = d22 + sensor.detection_prob * np.mean(visible[:, None, None] * measured, axis=0)

        prior_inv, flagged = _regularized_inverse(information + d11)
        information = symmetrize(d22 - d12.T @ prior_inv @ d12)
        bound, singular = _regularized_inverse(information)
        infos.append(information)
        bounds.append(bound)
        flags.append(flagged or singular)

    if any(flags):
        logger.warning(f"PCRB regularised at {sum(flags)} of {len(flags)} epochs")
    return PcrbSeries(
        times=epochs,
        information=np.stack(infos),
        bounds=np.stack(bounds),
        regularized=np.asarray(flags),
    )


def _aligned(records: Sequence[RunRecord], min_runs: int) -> Tuple[FloatArray, List[RunRecord]]:
    usable = [r for r in records if not r.failed]
    if len(usable) < min_runs:
        raise AlignmentError(f"need at least {min_runs} complete runs, got {len(usable)}")
    times = np.asarray(usable[0].times, dtype=float)
    for record in usable[1:]:
        other = np.asarray(record.times, dtype=float)
        if other.shape != times.shape or not np.allclose(other, times, rtol=0.0, atol=1e-9):
            raise AlignmentError(f"run {record.index} does not share the epoch grid of run {usable[0].index}")
    return times, usable


def rmse_matrix_series(records: Sequence[RunRecord], min_runs: int = 2) -> Tuple[FloatArray, FloatArray]:
    """Per-epoch mean over runs of the error outer product (x_hat - x)(x_hat - x)^T."""
    times, usable = _aligned(records, min_runs)
    errors = np.stack([np.asarray(r.means) - np.asarray(r.truth) for r in usable])
    return times, np.einsum("rki,rkj->kij", errors, errors) / len(usable)


def spectral_norm(a: npt.ArrayLike) -> float:
    matrix = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(matrix)):
        raise ConfigurationError("spectral norm needs finite entries")
    return float(np.linalg.norm(matrix, 2))


def nees(truth: npt.ArrayLike, belief: GaussianBelief) -> float:
    """(x - mean)^T P^-1 (x - mean), factoring P with the jitter ladder of robust_cholesky."""
    error = np.asarray(truth, dtype=float) - np.asarray(belief.mean)
    factor = robust_cholesky(belief.cov)
    if not np.all(np.diag(factor) > 0.0):
        raise NumericalFailureError(f"covariance at t={belief.t} is singular")
    try:
        whitened = scipy.linalg.solve_triangular(factor, error, lower=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalFailureError(f"covariance at t={belief.t} is singular") from exc
    return float(whitened @ whitened)


def nees_series(records: Sequence[RunRecord]) -> Tuple[FloatArray, FloatArray, int]:
    """NEES at every measurement-update epoch of every completed run.

    Epochs whose covariance cannot be factored even with jitter are skipped and counted.
    """
    times: List[float] = []
    values: List[float] = []
    skipped = 0
    for record in records:
        if record.failed:
            continue
        for t, truth, mean, cov, measured in zip(
            record.times, record.truth, record.means, record.covs, record.measured
        ):
            if not measured:
                continue
            try:
                value = nees(truth, GaussianBelief(mean, cov, t))
            except NumericalFailureError as exc:
                logger.warning(f"Run {record.index}: NEES skipped at t={t}: {exc}")
                skipped += 1
                continue
            times.append(t)
            values.append(value)
    return np.asarray(times, dtype=float), np.asarray(values, dtype=float), skipped


def outside_band_fraction(values: npt.ArrayLike, band: Tuple[float, float] = NEES_BAND) -> float:
    data = np.asarray(values, dtype=float)
    if data.size == 0:
        return float("nan")
    return float(np.mean((data < band[0]) | (data > band[1])))


def consistency_report(
    records: Sequence[RunRecord], pcrb: PcrbSeries, min_runs: int = 2
) -> ConsistencyReport:
    """A = RMSE - PCRB per epoch with its spectral norm and smallest eigenvalue, plus NEES."""
    times, rmse = rmse_matrix_series(records, min_runs)
    if pcrb.times.shape != times.shape or not np.allclose(pcrb.times, times, rtol=0.0, atol=1e-9):
        raise AlignmentError("PCRB epochs do not match the run epochs")

    gaps = rmse - pcrb.bounds
    norms = np.array([spectral_norm(a) for a in gaps])
    lambda_mins = np.array([float(np.linalg.eigvalsh(symmetrize(a)).min()) for a in gaps])
    tolerance = ROUNDOFF_RATIO * norms
    roundoff = (lambda_mins < 0.0) & (lambda_mins >= -tolerance)
    violations = lambda_mins < -tolerance
    if roundoff.any():
        logger.warning(f"lambda_min slightly negative at {int(roundoff.sum())} epochs (round-off)")
    if violations.any():
        logger.warning(f"RMSE falls below the PCRB at {int(violations.sum())} epochs")

    nees_times, nees_values, nees_skipped = nees_series(records)
    return ConsistencyReport(
        times=times,
        spectral_norms=norms,
        lambda_mins=lambda_mins,
        nees_times=nees_times,
        nees_values=nees_values,
        nees_outside_fraction=outside_band_fraction(nees_values),
        roundoff_epochs=roundoff,
        violation_epochs=violations,
        nees_skipped=nees_skipped,
    )
