"""Scenario presets, loading, and the batch/study/PCRB drivers behind the CLI and API."""

import json
import logging
import math
import os
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from pydantic import ValidationError

from orbtrack.core.config import Settings
from orbtrack.core.exceptions import ConfigurationError
from orbtrack.models.estimation import ConsistencyReport, GaussianBelief, RunRecord, TrackerEvent
from orbtrack.models.schemas import (
    BatchSummary,
    DepletionDynamics,
    DepletionReport,
    DepletionStudyReport,
    DragParams,
    PhysicalConstants,
    RunSummary,
    ScenarioConfig,
    StudyKind,
    TransitionRecord,
)
from orbtrack.services import records
from orbtrack.services.clustering import propagate_and_cluster_study
from orbtrack.services.depletion import DepletionConfig, depletion_lower_bound, monte_carlo_retention
from orbtrack.services.dynamics import OrbitalDynamics, ProcessNoise
from orbtrack.services.hybrid import HybridTracker, epoch_grid
from orbtrack.services.metrics import consistency_report, nees_series, pcrb_series
from orbtrack.services.observation import AngleSensor

logger = logging.getLogger(__name__)


def _case_state(radius: float, speed: float, inclination: float) -> List[float]:
    return [radius, 0.0, 0.0, 0.0, speed * math.cos(inclination), speed * math.sin(inclination)]


PRESETS: Dict[str, dict] = {
    "case1": {
        "name": "case1",
        "initial_mean": _case_state(7800.0, 6.8443, math.pi / 4),
        "initial_sigmas": [5.0, 5.0, 5.0, 0.001, 0.001, 0.001],
    },
    "case2": {
        "name": "case2",
        "initial_mean": _case_state(6800.0, 7.5989, math.pi / 30),
        "initial_sigmas": [2.0, 2.0, 2.0, 0.2, 0.2, 0.2],
    },
    "prop-high": {
        "name": "prop-high",
        "initial_mean": [
            6600.0 * math.cos(math.pi / 12), 0.0, 6600.0 * math.sin(math.pi / 12), 0.0, 7.8848, 0.0
        ],
        "initial_sigmas": [1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
        "duration": 6000.0,
    },
    "prop-low": {
        "name": "prop-low",
        "initial_mean": [
            6600.0 * math.cos(math.pi / 12), 0.0, 6600.0 * math.sin(math.pi / 12), 0.0, 7.8848, 0.0
        ],
        "initial_sigmas": [1.0, 1.0, 1.0, 0.01, 0.01, 0.01],
        "duration": 6000.0,
    },
}


def preset_names() -> List[str]:
    return sorted(PRESETS)


def load_scenario(source: str) -> ScenarioConfig:
    """Resolve a preset name or a JSON file path into a validated ScenarioConfig."""
    if source in PRESETS:
        return ScenarioConfig.model_validate(PRESETS[source])
    if not os.path.isfile(source):
        raise ConfigurationError(
            f"'{source}' is neither a preset ({', '.join(preset_names())}) nor a readable file"
        )
    with open(source, "r", encoding="utf-8") as handle:
        text = handle.read()
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"{source}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    return parse_scenario(payload, source)


def parse_scenario(payload: object, source: str = "scenario") -> ScenarioConfig:
    if isinstance(payload, dict) and "preset" in payload:
        base = dict(PRESETS.get(payload["preset"], {}))
        if not base:
            raise ConfigurationError(f"{source}: unknown preset '{payload['preset']}'")
        base.update({k: v for k, v in payload.items() if k != "preset"})
        payload = base
    try:
        return ScenarioConfig.model_validate(payload)
    except ValidationError as exc:
        first = exc.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or "<root>"
        raise ConfigurationError(f"{source}: field '{field}': {first['msg']}") from exc


def dump_scenario(config: ScenarioConfig) -> str:
    return config.model_dump_json(indent=2)


def with_overrides(config: ScenarioConfig, **updates: object) -> ScenarioConfig:
    """Re-validate a config with the non-None ``updates`` applied."""
    changes = {key: value for key, value in updates.items() if value is not None}
    if not changes:
        return config
    return parse_scenario({**config.model_dump(mode="json"), **changes}, config.name)


def initial_belief(config: ScenarioConfig) -> GaussianBelief:
    sigmas = np.asarray(config.initial_sigmas, dtype=float)
    return GaussianBelief(np.asarray(config.initial_mean, dtype=float), np.diag(sigmas**2), 0.0)


def process_noise(config: ScenarioConfig) -> Optional[ProcessNoise]:
    if config.process_noise_scale <= 0.0:
        return None
    return ProcessNoise.isotropic(config.process_noise_scale)


def filter_dynamics(config: ScenarioConfig) -> OrbitalDynamics:
    return OrbitalDynamics(config.constants, config.drag, config.filter_dt, process_noise(config))


def truth_dynamics(config: ScenarioConfig) -> OrbitalDynamics:
    return OrbitalDynamics(config.constants, config.drag, config.integrator_dt, process_noise(config))


def depletion_models(config: ScenarioConfig) -> tuple[PhysicalConstants, DragParams]:
    """Constants and drag for the depletion analysis; two-body strips J2 and drag."""
    if config.depletion_study.dynamics is DepletionDynamics.FULL:
        return config.constants, config.drag
    return (
        config.constants.model_copy(update={"j2": 0.0}),
        config.drag.model_copy(update={"area_to_mass": 0.0}),
    )


def simulate_run(
    config: ScenarioConfig, index: int, seed: np.random.SeedSequence, keep_snapshots: bool = False
) -> RunRecord:
    """One co-simulated tracking run; the truth start is drawn from the initial belief."""
    rng = np.random.default_rng(seed)
    start_rng, track_rng = rng.spawn(2)
    belief = initial_belief(config)
    truth0 = np.asarray(belief.mean) + np.asarray(config.initial_sigmas) * start_rng.standard_normal(6)
    tracker = HybridTracker(
        dynamics=filter_dynamics(config),
        sensor=AngleSensor(config.station),
        ut_params=config.ut_params,
        particle_count=config.particle_count,
        kind=config.tracker,
        propagate_particle_noise=config.propagate_particle_noise,
        keep_snapshots=keep_snapshots,
    )
    return tracker.run_scenario(
        belief, truth0, config.duration, config.epoch_dt, truth_dynamics(config), track_rng, index=index
    )


def summarize_run(record: RunRecord) -> RunSummary:
    transitions = [TransitionRecord(t=t, kind=event.value) for t, event in record.transitions]
    return RunSummary(
        index=record.index,
        failed=record.failed,
        failure_reason=record.failure_reason,
        epochs=len(record.times),
        measurements=len(record.measurements),
        ukf_to_pf=sum(1 for _, e in record.transitions if e is TrackerEvent.UKF_TO_PF),
        pf_to_ukf=sum(1 for _, e in record.transitions if e is TrackerEvent.PF_TO_UKF),
        transitions=transitions,
        boundary_events=[t for t, flag in zip(record.times, record.boundary_updates) if flag],
    )


@dataclass
class BatchOutcome:
    summary: BatchSummary
    output_dir: str

    @property
    def exit_status(self) -> int:
        return self.summary.exit_status


class ScenarioRunner:
    """Orchestrates Monte Carlo batches, studies and PCRB series, and writes their artifacts."""

    def __init__(self, settings: Settings) -> None:
        self.settings = settings

    def _prepare(self, output_dir: Optional[str]) -> str:
        directory = output_dir or self.settings.OUTPUT_DIR
        os.makedirs(directory, exist_ok=True)
        return directory

    def run_batch(
        self,
        config: ScenarioConfig,
        output_dir: Optional[str] = None,
        snapshots: bool = False,
    ) -> BatchOutcome:
        directory = self._prepare(output_dir)
        start = time.time()
        logger.info(
            f"Batch '{config.name}': {config.runs} runs, {config.duration:.0f} s, "
            f"N={config.particle_count}, seed {config.master_seed}"
        )
        seeds = np.random.SeedSequence(config.master_seed).spawn(config.runs + 1)
        run_records: List[RunRecord] = Parallel(n_jobs=self.settings.MAX_WORKERS)(
            delayed(simulate_run)(config, i, seeds[i], snapshots) for i in range(config.runs)
        )

        expected: Dict[str, Sequence[str]] = {}
        for record in run_records:
            path = records.write_run_csv(record, os.path.join(directory, f"run_{record.index}.csv"))
            expected[path] = records.RUN_COLUMNS
            if snapshots:
                snap = os.path.join(directory, f"snapshots_{record.index}.csv")
                expected[records.write_snapshots_csv(record, snap)] = records.SNAPSHOT_COLUMNS
            if record.failed:
                logger.info(f"Run {record.index} failed: {record.failure_reason}")

        completed = [r for r in run_records if not r.failed]
        summary = BatchSummary(
            scenario=config.name,
            master_seed=config.master_seed,
            runs=config.runs,
            successful_runs=len(completed),
            failed_runs=config.runs - len(completed),
            exit_status=0 if completed else 2,
            nees_count=0,
            run_summaries=[summarize_run(r) for r in run_records],
            config=config,
        )

        report_path = os.path.join(directory, "report.csv")
        nees_path = os.path.join(directory, "nees.csv")
        if completed and config.process_noise_scale > 0.0:
            pcrb = pcrb_series(
                filter_dynamics(config),
                AngleSensor(config.station),
                initial_belief(config),
                completed[0].times,
                config.pcrb_draws,
                np.random.default_rng(seeds[config.runs]),
            )
            report = consistency_report(completed, pcrb, min_runs=1)
            records.write_report_csv(report, report_path)
            records.write_nees_csv(report.nees_times, report.nees_values, nees_path)
            summary = summary.model_copy(
                update={
                    "nees_count": int(report.nees_values.size),
                    "nees_outside_fraction": _finite_or_none(report.nees_outside_fraction),
                    "nees_skipped_epochs": report.nees_skipped,
                    "max_spectral_norm": float(report.spectral_norms.max()),
                    "min_lambda_min": float(report.lambda_mins.min()),
                    "roundoff_epochs": int(report.roundoff_epochs.sum()),
                    "psd_violation_epochs": int(report.violation_epochs.sum()),
                    "pcrb_regularized_epochs": int(pcrb.regularized.sum()),
                }
            )
        else:
            if completed:
                logger.warning("Process noise is zero; the PCRB is undefined and report.csv stays empty")
            nees_times, nees_values, nees_skipped = nees_series(completed)
            records.write_nees_csv(nees_times, nees_values, nees_path)
            records.write_report_csv(_empty_report(), report_path)
            summary = summary.model_copy(
                update={"nees_count": int(nees_values.size), "nees_skipped_epochs": nees_skipped}
            )
        expected[report_path] = records.REPORT_COLUMNS
        expected[nees_path] = records.NEES_COLUMNS

        records.write_json(summary, os.path.join(directory, "summary.json"))
        records.validate_outputs(expected)
        logger.info(
            f"Batch '{config.name}' finished in {time.time() - start:.1f}s: "
            f"{summary.successful_runs}/{summary.runs} runs completed"
        )
        return BatchOutcome(summary=summary, output_dir=directory)

    def run_study(
        self,
        kind: StudyKind,
        config: ScenarioConfig,
        output_dir: Optional[str] = None,
        snapshots: bool = False,
        samples: Optional[int] = None,
    ) -> str:
        directory = self._prepare(output_dir)
        start = time.time()
        if kind is StudyKind.PROPAGATION:
            path = self._propagation_study(config, directory, snapshots)
        else:
            path = self._depletion_study(config, directory, samples)
        logger.info(f"{kind.value} study '{config.name}' finished in {time.time() - start:.1f}s -> {path}")
        return path

    def _propagation_study(self, config: ScenarioConfig, directory: str, snapshots: bool) -> str:
        study = config.propagation_study
        dynamics = OrbitalDynamics(config.constants, config.drag, config.integrator_dt)
        rows = propagate_and_cluster_study(
            initial_belief(config),
            study.times,
            study.particles,
            study,
            dynamics,
            np.random.default_rng(config.master_seed),
            min_radius=config.constants.r_eq,
            n_jobs=self.settings.MAX_WORKERS,
        )
        path = records.write_study_csv(rows, os.path.join(directory, "study.csv"))
        expected: Dict[str, Sequence[str]] = {path: records.STUDY_COLUMNS}
        if snapshots:
            clouds = records.write_cloud_csv(rows, os.path.join(directory, "study_clouds.csv"))
            expected[clouds] = records.CLOUD_COLUMNS
        records.validate_outputs(expected)
        return path

    def depletion_report(
        self,
        config: ScenarioConfig,
        sigma_vel: float,
        threshold: float,
        rng: np.random.Generator,
        samples: Optional[int] = None,
    ) -> DepletionReport:
        """Bound and Monte Carlo retention for one velocity sigma and threshold."""
        study = config.depletion_study
        consts, drag = depletion_models(config)
        sigmas = np.concatenate([np.asarray(config.initial_sigmas[:3]), np.full(3, sigma_vel)])
        depletion = DepletionConfig(
            s0=np.asarray(config.initial_mean),
            p=np.diag(sigmas**2),
            r=config.station.noise_matrix,
            b=threshold,
            strict_appendix_form=study.strict_appendix_form,
        )
        result = depletion_lower_bound(depletion, config.station, consts, drag, study.integrator_dt)
        n_samples = samples or study.samples
        retention = monte_carlo_retention(
            depletion,
            n_samples,
            rng,
            config.station,
            consts,
            drag,
            study.integrator_dt,
            n_jobs=self.settings.MAX_WORKERS,
        )
        holds = retention.fraction >= result.lower_bound - 2.0 * retention.binomial_sigma
        if not holds:
            logger.warning(
                f"Retention {retention.fraction:.4f} falls below the bound {result.lower_bound:.4f} "
                f"(sigma_v={sigma_vel}, b={threshold})"
            )
        return DepletionReport(
            sigma_vel=sigma_vel,
            threshold=threshold,
            m=result.m_radius,
            n=result.n_radius,
            lower_bound=result.lower_bound,
            empty_threshold_set=result.empty_threshold_set,
            empirical_retention=retention.fraction,
            binomial_sigma=retention.binomial_sigma,
            samples=retention.samples,
            excluded=retention.excluded,
            periodicity_residual_km=result.periodicity_residual_km,
            bound_holds=bool(holds),
        )

    def _depletion_study(self, config: ScenarioConfig, directory: str, samples: Optional[int]) -> str:
        study = config.depletion_study
        grid = [(s, b) for s in study.velocity_sigmas for b in study.thresholds]
        seeds = np.random.SeedSequence(config.master_seed).spawn(len(grid))
        reports = [
            self.depletion_report(config, sigma_vel, threshold, np.random.default_rng(seed), samples)
            for (sigma_vel, threshold), seed in zip(grid, seeds)
        ]
        for report in reports:
            logger.info(
                f"sigma_v={report.sigma_vel} km/s, b={report.threshold:.3g}: bound {report.lower_bound:.4f}, "
                f"retention {report.empirical_retention:.4f} +/- {report.binomial_sigma:.4f}"
            )
        output = DepletionStudyReport(
            scenario=config.name,
            strict_appendix_form=study.strict_appendix_form,
            reports=reports,
            config=config,
        )
        return records.write_json(output, os.path.join(directory, "depletion.json"))

    def run_pcrb(self, config: ScenarioConfig, output_dir: Optional[str] = None) -> str:
        directory = self._prepare(output_dir)
        if config.process_noise_scale <= 0.0:
            raise ConfigurationError("the PCRB needs a positive process_noise_scale")
        times = epoch_grid(config.duration, config.epoch_dt)
        pcrb = pcrb_series(
            filter_dynamics(config),
            AngleSensor(config.station),
            initial_belief(config),
            times,
            config.pcrb_draws,
            np.random.default_rng(config.master_seed),
        )
        path = records.write_pcrb_csv(pcrb, os.path.join(directory, "pcrb.csv"))
        records.validate_outputs({path: records.PCRB_COLUMNS})
        logger.info(f"PCRB over {times.size} epochs written to {path}")
        return path


def _finite_or_none(value: float) -> Optional[float]:
    return value if math.isfinite(value) else None


def _empty_report() -> ConsistencyReport:
    empty = np.zeros(0)
    return ConsistencyReport(
        times=empty,
        spectral_norms=empty,
        lambda_mins=empty,
        nees_times=empty,
        nees_values=empty,
        nees_outside_fraction=float("nan"),
        roundoff_epochs=np.zeros(0, dtype=bool),
        violation_epochs=np.zeros(0, dtype=bool),
    )
