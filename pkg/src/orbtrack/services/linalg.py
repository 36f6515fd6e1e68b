import logging

import numpy as np
import numpy.typing as npt
from tenacity import Retrying, before_sleep_log, retry_if_exception_type, stop_after_attempt

from orbtrack.core.exceptions import NumericalFailureError
from orbtrack.models.estimation import symmetrize

logger = logging.getLogger(__name__)

JITTER_LADDER = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8)


def robust_cholesky(cov: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Lower Cholesky factor, adding diagonal jitter from JITTER_LADDER until it succeeds.

    An all-zero matrix factors to zero so point masses stay point masses.
    """
    matrix = symmetrize(cov)
    if not np.any(matrix):
        return np.zeros_like(matrix)

    identity = np.eye(matrix.shape[0])
    try:
        for attempt in Retrying(
            stop=stop_after_attempt(len(JITTER_LADDER)),
            retry=retry_if_exception_type(np.linalg.LinAlgError),
            before_sleep=before_sleep_log(logger, logging.DEBUG),
            reraise=True,
        ):
            with attempt:
                jitter = JITTER_LADDER[attempt.retry_state.attempt_number - 1]
                return np.linalg.cholesky(matrix + jitter * identity)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(
            f"covariance is not positive definite after jitter {JITTER_LADDER[-1]:.0e}"
        ) from exc
    raise NumericalFailureError("cholesky retry loop exited without a result")


def min_eigenvalue(matrix: npt.ArrayLike) -> float:
    return float(np.linalg.eigvalsh(symmetrize(matrix)).min())
