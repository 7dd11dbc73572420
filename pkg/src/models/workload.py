"""Workload and fault-injection specifications."""

import re
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .monitor import BehaviorState


class WorkloadKind(str, Enum):
    PI = "pi"
    JACOBI = "jacobi"
    MATMUL = "matmul"


# iterations-per-beat defaults, one unit per kernel loop step
DEFAULT_BEATS_EVERY = {
    WorkloadKind.PI: 100_000,
    WorkloadKind.JACOBI: 20,
    WorkloadKind.MATMUL: 1,
}


class WorkloadSpec(BaseModel):
    """Kernel choice and size.

    ``beats_every`` counts loop steps of the kernel: Pi iterations, Jacobi
    cycles, or MatMul chunks of ``chunk`` output entries.
    """

    model_config = ConfigDict(frozen=True)

    kind: WorkloadKind
    thread_count: int = Field(default=4, ge=1, le=8)
    iterations: int = Field(default=10_000_000, gt=0)
    grid: int = Field(default=256, ge=3)
    cycles: int = Field(default=2000, ge=0)
    dim: int = Field(default=512, gt=0)
    chunk: int = Field(default=650, gt=0)
    beats_every: Optional[int] = Field(default=None, ge=1)
    loop_id: int = 1
    seed: int = 0

    @model_validator(mode="after")
    def _check_sizes(self) -> "WorkloadSpec":
        if self.kind is WorkloadKind.JACOBI and self.grid - 2 < self.thread_count:
            raise ValueError("jacobi grid needs at least one interior row per thread")
        return self

    @property
    def iterations_per_beat(self) -> int:
        return self.beats_every or DEFAULT_BEATS_EVERY[self.kind]

    @property
    def steps_per_thread(self) -> int:
        """Loop steps each worker executes (the unit ``beats_every`` counts)."""
        if self.kind is WorkloadKind.PI:
            return self.iterations
        if self.kind is WorkloadKind.JACOBI:
            return self.cycles
        chunks = -(-self.dim * self.dim // self.chunk)
        return -(-chunks // self.thread_count)


INJECTABLE = (
    BehaviorState.BUSY_WAITING,
    BehaviorState.CONDITIONAL_WAITING,
    BehaviorState.EXIT,
    BehaviorState.FAILURE,
)

_BEHAVIOR_ALIASES = {
    "busywaiting": BehaviorState.BUSY_WAITING,
    "busy": BehaviorState.BUSY_WAITING,
    "conditionalwaiting": BehaviorState.CONDITIONAL_WAITING,
    "condwait": BehaviorState.CONDITIONAL_WAITING,
    "exit": BehaviorState.EXIT,
    "failure": BehaviorState.FAILURE,
}

_INJECTION_PATTERN = re.compile(
    r"^(?P<behavior>[a-z_]+)@(?P<thread>\d+):(?P<start>\d+(?:\.\d+)?)(?P<unit>ms|it)?"
    r"(?:\+(?P<duration>\d+(?:\.\d+)?))?$"
)


class InjectionSpec(BaseModel):
    """A behaviour forced onto one worker, triggered by elapsed time or by iteration count."""

    model_config = ConfigDict(frozen=True)

    target_thread: int = Field(ge=0)
    behavior: BehaviorState
    start_ms: Optional[float] = Field(default=None, ge=0)
    start_iteration: Optional[int] = Field(default=None, ge=0)
    duration_ms: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _check_trigger(self) -> "InjectionSpec":
        if self.behavior not in INJECTABLE:
            raise ValueError(f"{self.behavior.value} cannot be injected")
        if (self.start_ms is None) == (self.start_iteration is None):
            raise ValueError("exactly one of start_ms / start_iteration is required")
        timed = self.behavior in (BehaviorState.BUSY_WAITING, BehaviorState.CONDITIONAL_WAITING)
        if timed and self.duration_ms is None:
            raise ValueError(f"{self.behavior.value} needs a duration_ms")
        return self

    @classmethod
    def parse(cls, text: str) -> "InjectionSpec":
        """Parse ``<behavior>@<thread>:<start>[ms|it][+<duration_ms>]``."""
        match = _INJECTION_PATTERN.match(text.strip().lower())
        if not match or match["behavior"].replace("_", "") not in _BEHAVIOR_ALIASES:
            raise ValueError(f"cannot parse injection {text!r}")
        behavior = _BEHAVIOR_ALIASES[match["behavior"].replace("_", "")]
        start = float(match["start"])
        by_iteration = match["unit"] == "it"
        return cls(
            target_thread=int(match["thread"]),
            behavior=behavior,
            start_ms=None if by_iteration else start,
            start_iteration=int(start) if by_iteration else None,
            duration_ms=float(match["duration"]) if match["duration"] else None,
        )


class InjectionRecord(BaseModel):
    """When an injected behaviour actually began (and ended) on its worker."""

    thread_id: int
    behavior: BehaviorState
    triggered_at_ns: int
    ended_at_ns: Optional[int] = None
