"""Heartbeat records and point-in-time sequence snapshots.

These sit on the instrumentation hot path, so they are slotted frozen
dataclasses rather than pydantic models: a record is built once per emission
and never mutated, which also means a reader can never observe a torn record.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple


@dataclass(frozen=True, slots=True)
class Heartbeat:
    """One emission: identity, per-thread sequence number, monotonic time, loop position."""

    thread_id: int
    seq_no: int
    timestamp_ns: int
    loop_id: int
    iteration: int


@dataclass(frozen=True, slots=True)
class SequenceSnapshot:
    """Immutable copy of one thread's retained heartbeat window plus markers."""

    thread_id: int
    records: Tuple[Heartbeat, ...] = field(default_factory=tuple)
    started: bool = False
    exited: bool = False
    last_seq_no: int = 0

    @property
    def last_beat(self) -> Optional[Heartbeat]:
        return self.records[-1] if self.records else None

    @property
    def first_seq_no(self) -> int:
        """Sequence number of the oldest retained record (0 when empty)."""
        return self.records[0].seq_no if self.records else 0

    def timestamps(self) -> list[int]:
        return [record.timestamp_ns for record in self.records]


@dataclass(frozen=True)
class TableSnapshot:
    """Immutable copy of a whole heartbeat table."""

    ring_order: Tuple[int, ...]
    sequences: dict[int, SequenceSnapshot]
    application_exited: bool = False
