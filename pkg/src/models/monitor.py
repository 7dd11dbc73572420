"""Monitor configuration, behaviour states and detection events."""

from enum import Enum, IntEnum
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field

from .. import config


class MonitorMode(IntEnum):
    """Numeric values follow the facade convention: 0 centralized, 1 decentralized."""

    CENTRALIZED = 0
    DECENTRALIZED = 1

    @classmethod
    def parse(cls, value: "str | int | MonitorMode") -> "MonitorMode":
        if isinstance(value, MonitorMode):
            return value
        if isinstance(value, int):
            return cls(value)
        return cls[value.strip().upper()]


class BehaviorState(str, Enum):
    """Outcome of classifying one thread at one detection instant."""

    NOT_STARTED = "NotStarted"
    RUNNING = "Running"
    BUSY_WAITING = "BusyWaiting"
    CONDITIONAL_WAITING = "ConditionalWaiting"
    EXIT = "Exit"
    FAILURE = "Failure"

    @property
    def is_alive(self) -> bool:
        """Running and busy waiting both count as alive for ring walks and rate averages."""
        return self in (BehaviorState.RUNNING, BehaviorState.BUSY_WAITING)


class MonitorConfig(BaseModel):
    """Detection and rate-control knobs. Defaults come from the environment."""

    model_config = ConfigDict(frozen=True)

    mode: MonitorMode = MonitorMode.CENTRALIZED
    detection_period_ms: float = Field(default=config.DETECTION_PERIOD_MS, gt=0)
    window_capacity: int = Field(default=config.WINDOW_CAPACITY, ge=2)
    rate_window_ms: float = Field(default=config.RATE_WINDOW_MS, gt=0)
    busywait_ratio: float = Field(default=config.BUSYWAIT_RATIO, gt=0, lt=1)
    busywait_cv_max: float = Field(default=config.BUSYWAIT_CV_MAX, ge=0)
    stall_periods: int = Field(default=config.STALL_PERIODS, ge=1)
    window_iteration: int = Field(default=config.WINDOW_ITERATION, ge=1)
    threshold_fraction: float = Field(default=config.THRESHOLD_FRACTION, ge=0)
    log_path: str = config.LOG_PATH
    session_label: Literal["pthread", "openmp"] = "pthread"

    @property
    def detection_period_ns(self) -> int:
        return int(round(self.detection_period_ms * 1_000_000))

    @property
    def rate_window_ns(self) -> int:
        return int(round(self.rate_window_ms * 1_000_000))

    @property
    def stall_window_ns(self) -> int:
        return self.stall_periods * self.detection_period_ns


def default_monitor_config(**overrides: Any) -> MonitorConfig:
    """Environment defaults plus explicit overrides; ``None`` overrides are ignored."""
    return MonitorConfig(**{key: value for key, value in overrides.items() if value is not None})


class DetectionEvent(BaseModel):
    """One classification reported by a monitor (the centralized monitor uses detector_id -1)."""

    model_config = ConfigDict(frozen=True)

    detector_id: int
    subject_id: int
    state: BehaviorState
    detected_at_ns: int
    observed_rate: float

    def to_csv_line(self) -> str:
        return (
            f"{self.detected_at_ns},{self.detector_id},{self.subject_id},"
            f"{self.state.value},{self.observed_rate!r}"
        )

    @classmethod
    def from_csv_line(cls, line: str) -> "DetectionEvent":
        detected_at, detector, subject, state, rate = line.strip().split(",")
        return cls(
            detector_id=int(detector),
            subject_id=int(subject),
            state=BehaviorState(state),
            detected_at_ns=int(detected_at),
            observed_rate=float(rate),
        )


MONITOR_THREAD_ID = -1
