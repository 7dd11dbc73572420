"""Per-thread heartbeat windows and the shared table every monitor reads.

Concurrency contract: each ``HeartbeatSequence`` has exactly one writer (its
owning worker thread) and any number of readers. Writes never take a lock.
A write stores an immutable ``Heartbeat`` into a preallocated slot and only
then publishes the new ``last_seq_no``; a reader copies the slots after
reading ``last_seq_no`` and keeps the contiguous suffix whose slots still hold
the sequence numbers it expects. A snapshot can therefore lag by the one
in-flight record but never contains a torn record or a gap.
"""

from __future__ import annotations

import logging
import threading
from bisect import bisect_right
from typing import Iterable, Optional

from .. import config
from ..models.heartbeat import Heartbeat, SequenceSnapshot, TableSnapshot
from ..utils.errors import (
    AfterExitError,
    AlreadyFinishedError,
    ClockRegressionError,
    DuplicateThreadIdError,
    UnknownThreadIdError,
)

logger = logging.getLogger(__name__)


class HeartbeatSequence:
    """Writer handle for one thread's bounded heartbeat window."""

    def __init__(self, thread_id: int, capacity: int = config.WINDOW_CAPACITY):
        if capacity < 2:
            raise ValueError("window capacity must be >= 2")
        self.thread_id = thread_id
        self._capacity = capacity
        self._slots: list[Optional[Heartbeat]] = [None] * capacity
        self._last_seq_no = 0
        self._last_timestamp_ns = 0
        self._started = False
        self._exited = False

    @property
    def capacity(self) -> int:
        return self._capacity

    @property
    def last_seq_no(self) -> int:
        return self._last_seq_no

    @property
    def started(self) -> bool:
        return self._started

    @property
    def exited(self) -> bool:
        return self._exited

    def record(self, loop_id: int, iteration: int, timestamp_ns: int) -> int:
        """Append one heartbeat, evicting the oldest when full. Returns its seq_no."""
        if self._exited:
            raise AfterExitError(f"thread {self.thread_id} emitted a heartbeat after exit")
        if timestamp_ns < self._last_timestamp_ns:
            raise ClockRegressionError(
                f"thread {self.thread_id}: timestamp {timestamp_ns} < {self._last_timestamp_ns}"
            )
        seq_no = self._last_seq_no + 1
        self._slots[(seq_no - 1) % self._capacity] = Heartbeat(
            self.thread_id, seq_no, timestamp_ns, loop_id, iteration
        )
        self._last_timestamp_ns = timestamp_ns
        self._started = True
        # publish last: readers only trust slots up to this number
        self._last_seq_no = seq_no
        return seq_no

    def mark_exit(self) -> bool:
        """Set the exit marker. Idempotent; an exited thread also counts as started."""
        self._started = True
        self._exited = True
        return True

    def snapshot(self) -> SequenceSnapshot:
        exited = self._exited
        last = self._last_seq_no
        slots = list(self._slots)
        started = self._started or last > 0

        records: list[Heartbeat] = []
        for seq_no in range(max(1, last - self._capacity + 1), last + 1):
            record = slots[(seq_no - 1) % self._capacity]
            if record is None or record.seq_no != seq_no:
                # lapped by the writer during the copy: older slots are stale too
                records.clear()
                continue
            records.append(record)
        return SequenceSnapshot(
            thread_id=self.thread_id,
            records=tuple(records),
            started=started,
            exited=exited,
            last_seq_no=last,
        )

    def restore(self, records: Iterable[Heartbeat], *, started: bool, exited: bool) -> None:
        """Load a retained window (used by the log loader before any writer exists)."""
        records = list(records)
        if len(records) > self._capacity:
            raise ValueError("more records than window capacity")
        for record in records:
            self._slots[(record.seq_no - 1) % self._capacity] = record
        if records:
            self._last_seq_no = records[-1].seq_no
            self._last_timestamp_ns = records[-1].timestamp_ns
        self._started = started or exited or bool(records)
        self._exited = exited


class HeartbeatTable:
    """Registry of every worker's sequence plus the ring (clockwise) ordering."""

    def __init__(
        self,
        window_capacity: int = config.WINDOW_CAPACITY,
        session_label: Optional[str] = None,
    ):
        self.window_capacity = window_capacity
        self.session_label = session_label
        self._entries: dict[int, HeartbeatSequence] = {}
        self._ring_order: tuple[int, ...] = ()
        self._lock = threading.Lock()
        self.application_exited = False

    def register_thread(self, thread_id: int) -> HeartbeatSequence:
        if not isinstance(thread_id, int) or thread_id < 0:
            raise ValueError("thread_id must be a non-negative integer")
        with self._lock:
            if self.application_exited:
                raise AlreadyFinishedError("cannot register threads after the application exited")
            if thread_id in self._entries:
                raise DuplicateThreadIdError(f"thread {thread_id} is already registered")
            sequence = HeartbeatSequence(thread_id, self.window_capacity)
            self._entries[thread_id] = sequence
            self._ring_order = self._ring_order + (thread_id,)
        logger.debug(
            "Registered heartbeat thread",
            extra={"event": "store.register", "thread_id": thread_id},
        )
        return sequence

    @property
    def ring_order(self) -> tuple[int, ...]:
        return self._ring_order

    def handle(self, thread_id: int) -> HeartbeatSequence:
        try:
            return self._entries[thread_id]
        except KeyError:
            raise UnknownThreadIdError(f"thread {thread_id} is not registered") from None

    def read_sequence(self, thread_id: int) -> SequenceSnapshot:
        return self.handle(thread_id).snapshot()

    def mark_application_exited(self) -> None:
        self.application_exited = True

    def snapshot(self) -> TableSnapshot:
        ring = self._ring_order
        return TableSnapshot(
            ring_order=ring,
            sequences={thread_id: self._entries[thread_id].snapshot() for thread_id in ring},
            application_exited=self.application_exited,
        )

    def __contains__(self, thread_id: object) -> bool:
        return thread_id in self._entries

    def __len__(self) -> int:
        return len(self._ring_order)


def compute_heart_rate(sequence: SequenceSnapshot, now_ns: int, rate_window_ms: float) -> float:
    """Beats per second over the window (now - rate_window, now]."""
    if rate_window_ms <= 0:
        raise ValueError("rate_window_ms must be > 0")
    if not sequence.records:
        return 0.0
    window_ns = int(round(rate_window_ms * 1_000_000))
    records = sequence.records
    upper = bisect_right(records, now_ns, key=lambda record: record.timestamp_ns)
    lower = bisect_right(records, now_ns - window_ns, key=lambda record: record.timestamp_ns)
    return (upper - lower) / (rate_window_ms / 1000.0)
