"""Experiment configuration and report models."""

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, ValidationInfo, field_validator

from ..utils.errors import ConfigError
from .monitor import BehaviorState, MonitorMode
from .workload import InjectionSpec, WorkloadSpec

REPORT_SCHEMA_VERSION = 1


class ExperimentConfig(BaseModel):
    """One sweep: a workload, a monitor mode and the heart-rate targets to visit."""

    model_config = ConfigDict(frozen=True)

    workload: WorkloadSpec
    mode: MonitorMode = MonitorMode.CENTRALIZED
    rates: List[float] = Field(min_length=1)
    repetitions: int = Field(default=3, ge=3)
    injections: List[InjectionSpec] = Field(default_factory=list)
    output_dir: str = "hbtm-report"
    seed: int = 0
    detection_period_ms: Optional[float] = Field(default=None, gt=0)
    rate_window_ms: Optional[float] = Field(default=None, gt=0)

    @field_validator("rates")
    @classmethod
    def _positive_rates(cls, rates: List[float]) -> List[float]:
        if any(rate <= 0 for rate in rates):
            raise ValueError("heart-rate targets must be positive")
        return rates

    @field_validator("injections")
    @classmethod
    def _targets_exist(cls, injections: List[InjectionSpec], info: ValidationInfo) -> List[InjectionSpec]:
        workload = info.data.get("workload")
        if workload is not None:
            for injection in injections:
                if injection.target_thread >= workload.thread_count:
                    raise ValueError(f"injection targets missing thread {injection.target_thread}")
        return injections


def load_experiment_config(data: Dict[str, Any]) -> ExperimentConfig:
    """Validate a raw mapping, converting validation failures into ConfigError."""
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


class LatencySample(BaseModel):
    thread_id: int
    behavior: BehaviorState
    triggered_at_ns: int
    latency_ms: Optional[float] = None

    @property
    def detected(self) -> bool:
        return self.latency_ms is not None


class MetricsReport(BaseModel):
    """Measurements for one heart-rate target.

    ``overhead`` is always ``compute_overhead(e_alpha_s, e_beta_s)`` of the
    stored values.
    """

    target_rate: float
    beats_every: int
    detection_period_ms: float
    e_alpha_s: float
    e_beta_s: float
    overhead: float
    achieved_rate: float
    latency_ms: Dict[str, List[Optional[float]]] = Field(default_factory=dict)
    query_counts: Dict[int, int] = Field(default_factory=dict)
    behavior_overhead: Dict[str, float] = Field(default_factory=dict)


class ExperimentReport(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    schema_version: int = Field(default=REPORT_SCHEMA_VERSION, alias="hbtm-report")
    workload: WorkloadSpec
    mode: str
    repetitions: int
    seed: int
    metrics: List[MetricsReport]
    metadata: Dict[str, str] = Field(default_factory=dict)
