import math
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

ARCSEC = math.radians(1.0 / 3600.0)
ANGLE_SIGMA = 3.9 * ARCSEC

Vector3 = Tuple[float, float, float]
Vector6 = Tuple[float, float, float, float, float, float]
Matrix2 = Tuple[Tuple[float, float], Tuple[float, float]]


class TrackerKind(str, Enum):
    HYBRID = "hybrid"
    UKF = "ukf"


class StudyKind(str, Enum):
    PROPAGATION = "propagation"
    DEPLETION = "depletion"


class DepletionDynamics(str, Enum):
    TWO_BODY = "two_body"
    FULL = "full"


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class PhysicalConstants(_Frozen):
    mu: float = Field(398600.4418, gt=0.0, description="Gravitational parameter GM (km^3/s^2).")
    j2: float = Field(
        1.08262668e-3, ge=0.0, lt=1.0, description="J2 zonal coefficient; 0 disables the term."
    )
    r_eq: float = Field(6378.137, gt=0.0, description="Equatorial radius (km).")
    omega_earth: float = Field(7.2921159e-5, gt=0.0, description="Earth spin rate (rad/s).")


class DragParams(_Frozen):
    area_to_mass: float = Field(0.01, ge=0.0, description="A/m (m^2/kg); 0 disables drag.")
    cd: float = Field(2.2, gt=0.0, description="Drag coefficient.")
    rho0: float = Field(3.614e-13, gt=0.0, description="Reference density (kg/m^3).")
    r0: float = Field(6378.137 + 700.0, gt=0.0, description="Reference radius (km).")
    scale_height: float = Field(88.667, gt=0.0, description="Scale height H (km).")


class StationModel(_Frozen):
    position_ecef: Vector3 = Field(
        (6378.137, 0.0, 0.0), description="Station position in the Earth-fixed frame (km)."
    )
    omega: float = Field(7.2921159e-5, gt=0.0, description="Spin rate of the station frame (rad/s).")
    fov_azimuth_halfwidth: float = Field(math.radians(75.0), gt=0.0, le=math.pi)
    fov_polar_halfwidth: float = Field(math.radians(90.0), gt=0.0, le=math.pi)
    detection_prob: float = Field(0.9, ge=0.0, le=1.0)
    noise_cov: Matrix2 = Field(
        ((ANGLE_SIGMA**2, 0.0), (0.0, ANGLE_SIGMA**2)),
        description="Angle measurement covariance (rad^2), theta first.",
    )

    @field_validator("noise_cov")
    @classmethod
    def _check_noise_cov(cls, value: Matrix2) -> Matrix2:
        matrix = np.asarray(value, dtype=float)
        if not np.all(np.isfinite(matrix)):
            raise ValueError("noise_cov must be finite.")
        if abs(matrix[0, 1] - matrix[1, 0]) > 1e-12 * max(1.0, float(np.abs(matrix).max())):
            raise ValueError("noise_cov must be symmetric.")
        if np.linalg.eigvalsh(matrix).min() < 0.0:
            raise ValueError("noise_cov must be positive semi-definite.")
        return value

    @field_validator("position_ecef")
    @classmethod
    def _check_position(cls, value: Vector3) -> Vector3:
        if not np.all(np.isfinite(value)):
            raise ValueError("position_ecef must be finite.")
        return value

    @property
    def noise_matrix(self) -> np.ndarray:
        return np.array(self.noise_cov, dtype=float)

    @property
    def position_vector(self) -> np.ndarray:
        return np.array(self.position_ecef, dtype=float)


class UtParams(_Frozen):
    alpha: float = Field(1.0, gt=0.0, le=1.0)
    beta: float = Field(2.0, ge=0.0)
    kappa: float = Field(-3.0)

    def scaling(self, n: int) -> float:
        """Return n + lambda, the squared sigma-point spread."""
        return self.alpha**2 * (n + self.kappa)

    @model_validator(mode="after")
    def _check_spread(self) -> "UtParams":
        if self.scaling(6) <= 0.0:
            raise ValueError("alpha^2 (n + kappa) must be positive for a 6-D state.")
        return self


class PropagationStudyConfig(_Frozen):
    times: List[float] = Field(default_factory=lambda: [0.0, 1500.0, 3000.0, 4500.0, 6000.0])
    particles: int = Field(3000, ge=10)
    k_max: int = Field(8, ge=1)
    full_state: bool = False
    tolerance: float = Field(1e-5, gt=0.0)
    max_iterations: int = Field(500, ge=1)

    @field_validator("times")
    @classmethod
    def _check_times(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("times must not be empty.")
        if any(t < 0.0 for t in value):
            raise ValueError("times must be non-negative.")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("times must be sorted strictly ascending.")
        return value

    @model_validator(mode="after")
    def _check_sample_size(self) -> "PropagationStudyConfig":
        if self.particles < 10 * self.k_max:
            raise ValueError("particles must be at least 10 * k_max.")
        return self


class DepletionStudyConfig(_Frozen):
    velocity_sigmas: List[float] = Field(
        default_factory=lambda: [0.001, 0.01, 0.2],
        description="Velocity standard deviations swept by the study (km/s).",
    )
    thresholds: List[float] = Field(
        default_factory=lambda: [1.0, 1.0e6],
        description="Likelihood thresholds b (rad^-2).",
    )
    samples: int = Field(10000, ge=1000)
    strict_appendix_form: bool = True
    integrator_dt: float = Field(5.0, ge=1e-6)
    dynamics: DepletionDynamics = DepletionDynamics.TWO_BODY

    @field_validator("velocity_sigmas", "thresholds")
    @classmethod
    def _check_positive(cls, value: List[float]) -> List[float]:
        if not value or any(v <= 0.0 for v in value):
            raise ValueError("values must be a non-empty list of positive numbers.")
        return value


class ScenarioConfig(_Frozen):
    name: str = "custom"
    initial_mean: Vector6
    initial_sigmas: Vector6
    duration: float = Field(18000.0, gt=0.0)
    epoch_dt: float = Field(10.0, gt=0.0)
    integrator_dt: float = Field(1.0, ge=1e-6)
    filter_dt: float = Field(10.0, ge=1e-6)
    particle_count: int = Field(2000, ge=2)
    ut_params: UtParams = Field(default_factory=UtParams)
    station: StationModel = Field(default_factory=StationModel)
    drag: DragParams = Field(default_factory=DragParams)
    constants: PhysicalConstants = Field(default_factory=PhysicalConstants)
    process_noise_scale: float = Field(1e-10, ge=0.0)
    propagate_particle_noise: bool = True
    tracker: TrackerKind = TrackerKind.HYBRID
    master_seed: int = Field(2024, ge=0)
    runs: int = Field(1, ge=1)
    pcrb_draws: int = Field(50, ge=1)
    propagation_study: PropagationStudyConfig = Field(default_factory=PropagationStudyConfig)
    depletion_study: DepletionStudyConfig = Field(default_factory=DepletionStudyConfig)

    @field_validator("initial_mean")
    @classmethod
    def _check_mean(cls, value: Vector6) -> Vector6:
        if not np.all(np.isfinite(value)):
            raise ValueError("initial_mean must be finite.")
        if float(np.linalg.norm(value[:3])) <= 0.0:
            raise ValueError("initial_mean position must be away from the Earth's center.")
        return value

    @field_validator("initial_sigmas")
    @classmethod
    def _check_sigmas(cls, value: Vector6) -> Vector6:
        if any(not math.isfinite(s) or s < 0.0 for s in value):
            raise ValueError("initial_sigmas must be finite and non-negative.")
        return value

    @model_validator(mode="after")
    def _check_steps(self) -> "ScenarioConfig":
        if self.epoch_dt < self.integrator_dt:
            raise ValueError("epoch_dt must be at least integrator_dt.")
        if self.epoch_dt < self.filter_dt:
            raise ValueError("epoch_dt must be at least filter_dt.")
        return self


class TransitionRecord(BaseModel):
    t: float
    kind: str


class RunSummary(BaseModel):
    index: int
    failed: bool = False
    failure_reason: Optional[str] = None
    epochs: int
    measurements: int
    ukf_to_pf: int = 0
    pf_to_ukf: int = 0
    transitions: List[TransitionRecord] = Field(default_factory=list)
    boundary_events: List[float] = Field(default_factory=list)


class BatchSummary(BaseModel):
    scenario: str
    master_seed: int
    runs: int
    successful_runs: int
    failed_runs: int
    exit_status: int
    nees_count: int
    nees_outside_fraction: Optional[float] = None
    nees_skipped_epochs: int = 0
    max_spectral_norm: Optional[float] = None
    min_lambda_min: Optional[float] = None
    roundoff_epochs: int = 0
    psd_violation_epochs: int = 0
    pcrb_regularized_epochs: int = 0
    run_summaries: List[RunSummary] = Field(default_factory=list)
    config: Optional[ScenarioConfig] = None


class DepletionReport(BaseModel):
    sigma_vel: float = Field(description="Velocity standard deviation used for P (km/s).")
    threshold: float = Field(description="Likelihood threshold b (rad^-2).")
    m: float
    n: float
    lower_bound: float = Field(ge=0.0, le=1.0)
    empty_threshold_set: bool = False
    empirical_retention: Optional[float] = None
    binomial_sigma: Optional[float] = None
    samples: int = 0
    excluded: int = 0
    periodicity_residual_km: float
    bound_holds: Optional[bool] = None


class DepletionStudyReport(BaseModel):
    scenario: str
    strict_appendix_form: bool
    reports: List[DepletionReport]
    config: ScenarioConfig


class DepletionRequest(BaseModel):
    scenario: str = "case1"
    config: Optional[ScenarioConfig] = Field(None, description="Inline scenario; overrides the preset name.")
    sigma_vel: Optional[float] = Field(None, gt=0.0)
    threshold: Optional[float] = Field(None, gt=0.0)
    samples: Optional[int] = Field(None, ge=1000)
    seed: Optional[int] = Field(None, ge=0)


class BatchRequest(BaseModel):
    scenario: str = "case1"
    config: Optional[ScenarioConfig] = Field(None, description="Inline scenario; overrides the preset name.")
    runs: Optional[int] = Field(None, ge=1)
    seed: Optional[int] = Field(None, ge=0)
    duration: Optional[float] = Field(None, gt=0.0)


class RunAccepted(BaseModel):
    run_id: str
    output_dir: str
    message: str


class ErrorResponse(BaseModel):
    error: str = Field(description="A high-level description of the error.")
    details: Optional[str] = Field(None, description="Additional debugging details.")
    error_code: Optional[str] = Field(None, description="Optional internal error code.")
