"""Pydantic models for the JSON run configuration.

A run is described by one ``SimulationConfig`` document. Every sub-model
rejects unknown keys and is frozen; derive variants with
``model_validate({**config.model_dump(), ...})`` so they are validated again.
"""

# pylint: disable=too-few-public-methods

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .models import CONTENT_CATEGORIES, PLATFORMS, Mode, RevenueCurveParams

SCHEDULERS = ("seer", "origin", "gp", "greedy", "maxflow")


class _Frozen(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PeakWindow(_Frozen):
    """A daily peak period: centre minute of the day and half-width in minutes."""

    center: float = Field(ge=0)
    half_width: float = Field(gt=0)


class WorkloadConfig(_Frozen):
    """Synthetic diurnal request process."""

    locations: int = Field(default=6, ge=1)
    horizon: int = Field(default=2880, ge=1)
    base_rates: float | list[float] = 380.0
    period: int = Field(default=1440, ge=1)
    sinusoid_amplitude: float = Field(default=0.3, ge=0, lt=1)
    sinusoid_phase: float = -1.5707963267948966
    peak_windows: list[PeakWindow] = Field(
        default_factory=lambda: [
            PeakWindow(center=720, half_width=90),
            PeakWindow(center=1230, half_width=120),
        ]
    )
    peak_multiplier: float = Field(default=3.0, ge=1)
    common_noise: float = Field(default=0.08, ge=0)
    content_mix: list[float] = Field(default_factory=lambda: [0.3, 0.35, 0.2, 0.15])
    platform_mix: list[float] = Field(default_factory=lambda: [0.2, 0.15, 0.55, 0.1])
    bitrate_levels: int = Field(default=4, ge=1)

    @field_validator("base_rates")
    @classmethod
    def _rates_non_negative(cls, value):
        rates = value if isinstance(value, list) else [value]
        if any(r < 0 for r in rates):
            raise ValueError("base rates must be >= 0")
        return value

    @field_validator("content_mix", "platform_mix")
    @classmethod
    def _is_distribution(cls, value):
        if any(p < 0 for p in value) or sum(value) <= 0:
            raise ValueError("mix weights must be >= 0 with a positive sum")
        return value

    @model_validator(mode="after")
    def _check_lengths(self):
        if isinstance(self.base_rates, list) and len(self.base_rates) != self.locations:
            raise ValueError(
                f"base_rates has {len(self.base_rates)} entries for {self.locations} locations"
            )
        if len(self.content_mix) != len(CONTENT_CATEGORIES):
            raise ValueError(f"content_mix needs {len(CONTENT_CATEGORIES)} weights")
        if len(self.platform_mix) != len(PLATFORMS):
            raise ValueError(f"platform_mix needs {len(PLATFORMS)} weights")
        return self

    def rates(self) -> list[float]:
        """Per-location base rates."""
        if isinstance(self.base_rates, list):
            return list(self.base_rates)
        return [float(self.base_rates)] * self.locations


class FleetConfig(_Frozen):
    """Edge server fleet. Explicit lists win over the generated defaults."""

    servers: int = Field(default=40, ge=1)
    bandwidth_mean: float = Field(default=350.0, gt=0)
    bandwidth_sigma: float = Field(default=0.35, ge=0)
    bandwidths: list[float] | None = None
    locations: list[int] | None = None

    @model_validator(mode="after")
    def _check_lists(self):
        if self.bandwidths is not None:
            if len(self.bandwidths) != self.servers:
                raise ValueError("bandwidths must list one value per server")
            if any(b <= 0 for b in self.bandwidths):
                raise ValueError("bandwidths must be > 0")
        if self.locations is not None:
            if len(self.locations) != self.servers:
                raise ValueError("locations must list one value per server")
            if any(loc < 1 for loc in self.locations):
                raise ValueError("server locations are 1-based")
        return self


class RevenueModelConfig(_Frozen):
    """Boosted-tree request revenue model."""

    rounds: int = Field(default=50, ge=1)
    max_depth: int = Field(default=3, ge=1)
    shrinkage: float = Field(default=0.1, gt=0, le=1)
    samples: int = Field(default=20000, ge=1)


class PredictorConfig(_Frozen):
    """Next-cycle demand forecaster."""

    kind: Literal["aegru", "seasonal", "oracle"] = "aegru"
    latent: int = Field(default=32, ge=1)
    window: int = Field(default=30, ge=1)
    epochs: int = Field(default=10, ge=0)
    learning_rate: float = Field(default=0.05, gt=0)
    batch_size: int = Field(default=32, ge=1)
    clip_norm: float = Field(default=5.0, gt=0)
    period: int = Field(default=1440, ge=1)
    max_windows: int = Field(default=400, ge=1)


class ThresholdConfig(_Frozen):
    """Utilization thresholds α and β and the SLA penalty factor γ."""

    alpha: float = Field(default=0.05, ge=0, lt=1)
    beta: float = Field(default=0.8, gt=0, le=1)
    gamma_factor: float = Field(default=0.2, ge=0, le=1)

    @model_validator(mode="after")
    def _ordered(self):
        if self.alpha >= self.beta:
            raise ValueError(f"alpha ({self.alpha}) must be below beta ({self.beta})")
        return self

    def curve(self) -> RevenueCurveParams:
        return RevenueCurveParams(self.alpha, self.beta, self.gamma_factor)


class QoSModelParams(_Frozen):
    """Synthetic startup-latency and error-rate response to utilization."""

    latency_base: float = Field(default=300.0, ge=0)
    latency_slope: float = Field(default=900.0, ge=0)
    latency_noise: float = Field(default=60.0, ge=0)
    error_knee: float = Field(default=0.85, ge=0)
    error_steepness: float = Field(default=12.0, ge=0)
    error_noise: float = Field(default=0.02, ge=0)


class PreschedulerConfig(_Frozen):
    """LP backend plus the integerisation options."""

    solver: Literal["simplex", "highs"] = "simplex"
    rounding: Literal["nearest", "conserving"] = "nearest"
    expansion: Literal["location", "category"] = "location"
    max_iterations: int = Field(default=20000, ge=1)
    compare_floor: bool = True


class SimulationConfig(_Frozen):
    """One simulator run."""

    fleet: FleetConfig = Field(default_factory=FleetConfig)
    workload: WorkloadConfig = Field(default_factory=WorkloadConfig)
    clusters: int = Field(default=29, ge=1)
    revenue_model: RevenueModelConfig = Field(default_factory=RevenueModelConfig)
    predictor: PredictorConfig = Field(default_factory=PredictorConfig)
    prescheduler: PreschedulerConfig = Field(default_factory=PreschedulerConfig)
    thresholds: ThresholdConfig = Field(default_factory=ThresholdConfig)
    qos: QoSModelParams = Field(default_factory=QoSModelParams)
    scheduler: Literal["seer", "origin", "gp", "greedy", "maxflow"] = "seer"
    mode: Mode = Mode.CONSERVATIVE
    maxflow_capacity: Literal["beta", "bandwidth"] = "beta"
    seed: int = 0
    training_cycles: int = Field(default=1440, ge=1)
    horizon: int = Field(default=1440, ge=0)
    decision_interval: Literal[1] = 1
    beta_update_interval: int = Field(default=240, ge=0)
    beta_bounds: tuple[float, float] | None = (0.7, 0.9)
    withdrawal_after: int = Field(default=0, ge=0)
    overlap: bool = True
    inline: bool = False
    output_dir: str | None = None

    @model_validator(mode="after")
    def _consistent(self):
        if self.training_cycles + self.horizon > self.workload.horizon:
            raise ValueError(
                f"training_cycles + horizon ({self.training_cycles + self.horizon}) "
                f"exceeds the workload horizon ({self.workload.horizon})"
            )
        if self.fleet.locations is not None and max(self.fleet.locations) > self.workload.locations:
            raise ValueError("server locations exceed the workload's location count")
        if self.beta_bounds is not None:
            low, high = self.beta_bounds
            if not 0 < low <= high <= 1:
                raise ValueError("beta_bounds must satisfy 0 < low <= high <= 1")
        return self
