"""CSV and JSON artifacts written by the runner, and their column schemas."""

import logging
import os
from typing import Dict, Iterable, List, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel

from orbtrack.core.exceptions import OutputValidationError
from orbtrack.models.estimation import ConsistencyReport, ParticleEnsemble, PcrbSeries, RunRecord

logger = logging.getLogger(__name__)

STATE_LABELS = ("x", "y", "z", "vx", "vy", "vz")
FLOAT_FORMAT = "%.15g"

RUN_COLUMNS = (
    ["t"]
    + [f"truth_{c}" for c in STATE_LABELS]
    + [f"est_{c}" for c in STATE_LABELS]
    + [f"var_{c}" for c in STATE_LABELS]
    + ["mode", "measured"]
)
REPORT_COLUMNS = ["t", "spec_norm", "lambda_min"]
NEES_COLUMNS = ["t", "beta"]
PCRB_COLUMNS = ["t"] + [f"bound_{c}" for c in STATE_LABELS] + ["regularized"]
STUDY_COLUMNS = ["time_s", "modes", "component", "weight", "trace_km2"]
CLOUD_COLUMNS = ["t", "particle"] + list(STATE_LABELS)
SNAPSHOT_COLUMNS = ["t", "stage", "particle"] + list(STATE_LABELS) + ["weight"]


def _write(frame: pd.DataFrame, path: str) -> str:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def run_frame(record: RunRecord) -> pd.DataFrame:
    frame = pd.DataFrame({"t": np.asarray(record.times, dtype=float)})
    truth = np.asarray(record.truth, dtype=float).reshape(-1, 6)
    means = np.asarray(record.means, dtype=float).reshape(-1, 6)
    variances = np.array([np.diag(c) for c in record.covs], dtype=float).reshape(-1, 6)
    for i, label in enumerate(STATE_LABELS):
        frame[f"truth_{label}"] = truth[:, i]
    for i, label in enumerate(STATE_LABELS):
        frame[f"est_{label}"] = means[:, i]
    for i, label in enumerate(STATE_LABELS):
        frame[f"var_{label}"] = variances[:, i]
    frame["mode"] = [mode.value for mode in record.modes]
    frame["measured"] = np.asarray(record.measured, dtype=int)
    return frame


def write_run_csv(record: RunRecord, path: str) -> str:
    return _write(run_frame(record), path)


def write_report_csv(report: ConsistencyReport, path: str) -> str:
    frame = pd.DataFrame(
        {"t": report.times, "spec_norm": report.spectral_norms, "lambda_min": report.lambda_mins}
    )
    return _write(frame, path)


def write_nees_csv(times: Sequence[float], values: Sequence[float], path: str) -> str:
    return _write(pd.DataFrame({"t": np.asarray(times, dtype=float), "beta": np.asarray(values, dtype=float)}), path)


def write_pcrb_csv(pcrb: PcrbSeries, path: str) -> str:
    diagonals = np.array([np.diag(b) for b in pcrb.bounds]).reshape(-1, 6)
    frame = pd.DataFrame({"t": pcrb.times})
    for i, label in enumerate(STATE_LABELS):
        frame[f"bound_{label}"] = diagonals[:, i]
    frame["regularized"] = np.asarray(pcrb.regularized, dtype=int)
    return _write(frame, path)


def study_frame(rows: Iterable) -> pd.DataFrame:
    """Long-format mixture table: one row per (time, component)."""
    records: List[Dict[str, float]] = []
    for snapshot in rows:
        for component, (weight, trace) in enumerate(zip(snapshot.model.weights, snapshot.traces)):
            records.append(
                {
                    "time_s": float(snapshot.t),
                    "modes": snapshot.model.k,
                    "component": component,
                    "weight": float(weight),
                    "trace_km2": float(trace),
                }
            )
    return pd.DataFrame.from_records(records, columns=STUDY_COLUMNS)


def write_study_csv(rows: Iterable, path: str) -> str:
    return _write(study_frame(rows), path)


def write_cloud_csv(rows: Iterable, path: str) -> str:
    frames = []
    for snapshot in rows:
        frame = pd.DataFrame(snapshot.states, columns=list(STATE_LABELS))
        frame.insert(0, "particle", np.arange(len(frame)))
        frame.insert(0, "t", float(snapshot.t))
        frames.append(frame)
    combined = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=CLOUD_COLUMNS)
    return _write(combined, path)


def _ensemble_frame(t: float, stage: str, ensemble: ParticleEnsemble) -> pd.DataFrame:
    frame = pd.DataFrame(np.asarray(ensemble.states), columns=list(STATE_LABELS))
    frame.insert(0, "particle", np.arange(ensemble.size))
    frame.insert(0, "stage", stage)
    frame.insert(0, "t", float(t))
    frame["weight"] = np.asarray(ensemble.weights)
    return frame


def write_snapshots_csv(record: RunRecord, path: str) -> str:
    """Ensembles just before and just after resampling at each hand-back to the UKF."""
    frames = []
    for t, before, after in record.snapshots:
        frames.append(_ensemble_frame(t, "pre_resample", before))
        frames.append(_ensemble_frame(t, "post_resample", after))
    combined = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=SNAPSHOT_COLUMNS)
    return _write(combined, path)


def write_json(model: BaseModel, path: str) -> str:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(model.model_dump_json(indent=2))
        handle.write("\n")
    return path


def validate_csv(path: str, columns: Sequence[str]) -> pd.DataFrame:
    """Read a CSV back and check it carries exactly ``columns`` with no NaN in 't'."""
    if not os.path.exists(path):
        raise OutputValidationError(f"missing output file {path}")
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise OutputValidationError(f"{path} does not parse: {exc}") from exc
    if list(frame.columns) != list(columns):
        raise OutputValidationError(f"{path} has columns {list(frame.columns)}, expected {list(columns)}")
    time_column = columns[0]
    if frame[time_column].isna().any():
        raise OutputValidationError(f"{path} has empty {time_column} entries")
    return frame


def validate_outputs(expected: Dict[str, Sequence[str]]) -> None:
    for path, columns in expected.items():
        validate_csv(path, columns)
    logger.info(f"Validated {len(expected)} CSV outputs")
