"""Behaviour classification from heartbeat sequences.

``classify`` is the pure decision procedure. ``BehaviorClassifier`` wraps it
with the state a monitor needs across periods: the baseline rate of the team,
each thread's bootstrap rate, the latest verdict per thread (for transition
logging and rate control) and the last sequence number seen per thread (for
the dropped-beat check). One instance is shared by every monitor of a session.
"""

from __future__ import annotations

import logging
import threading
from typing import Optional, Protocol

import numpy as np

from ..models.heartbeat import SequenceSnapshot
from ..models.monitor import BehaviorState, MonitorConfig
from .heartbeat_store import compute_heart_rate
from .liveness import LivenessOracle, always_alive

logger = logging.getLogger(__name__)


class SequenceSource(Protocol):
    """What monitors read: a live HeartbeatTable or a replayed trace view."""

    @property
    def ring_order(self) -> tuple[int, ...]: ...

    @property
    def application_exited(self) -> bool: ...

    def read_sequence(self, thread_id: int) -> SequenceSnapshot: ...


def is_stalled(sequence: SequenceSnapshot, now_ns: int, config: MonitorConfig) -> bool:
    """True when the last ``stall_periods`` detection periods ending at now held no beat."""
    last = sequence.last_beat
    if last is None:
        return True
    return last.timestamp_ns <= now_ns - config.stall_window_ns


def interval_cv(sequence: SequenceSnapshot, now_ns: int, rate_window_ms: float) -> Optional[float]:
    """Coefficient of variation of inter-beat intervals inside the rate window.

    None when the window holds fewer than three beats.
    """
    lower = now_ns - int(round(rate_window_ms * 1_000_000))
    stamps = np.fromiter(
        (ts for ts in sequence.timestamps() if lower < ts <= now_ns), dtype=np.int64
    )
    if stamps.size < 3:
        return None
    intervals = np.diff(stamps).astype(np.float64)
    mean = intervals.mean()
    if mean <= 0:
        return float("inf")
    return float(intervals.std() / mean)


def classify(
    sequence: SequenceSnapshot,
    liveness: LivenessOracle,
    baseline_rate: float,
    config: MonitorConfig,
    now_ns: int,
) -> BehaviorState:
    """First match wins: exit, not started, stall (failure / conditional wait), busy wait, running."""
    if sequence.exited:
        return BehaviorState.EXIT
    if not sequence.started:
        return BehaviorState.NOT_STARTED
    if is_stalled(sequence, now_ns, config):
        if liveness(sequence.thread_id):
            return BehaviorState.CONDITIONAL_WAITING
        return BehaviorState.FAILURE

    # baseline 0 means no comparator yet: skip the busy-wait test
    if baseline_rate > 0:
        rate = compute_heart_rate(sequence, now_ns, config.rate_window_ms)
        if 0 < rate <= config.busywait_ratio * baseline_rate:
            cv = interval_cv(sequence, now_ns, config.rate_window_ms)
            if cv is not None and cv <= config.busywait_cv_max:
                return BehaviorState.BUSY_WAITING
    return BehaviorState.RUNNING


class BehaviorClassifier:
    """Stateful, thread-safe classifier shared by the monitors of one session."""

    def __init__(
        self,
        source: SequenceSource,
        config: MonitorConfig,
        liveness: Optional[LivenessOracle] = None,
    ):
        self.source = source
        self.config = config
        self.liveness: LivenessOracle = liveness or always_alive
        self._latest: dict[int, tuple[BehaviorState, float]] = {}
        self._bootstrap_rates: dict[int, float] = {}
        self._last_seen_seq: dict[int, int] = {}
        self._lock = threading.Lock()

    def baseline_for(self, subject_id: int) -> float:
        """Mean rate of the other threads last seen Running, else the subject's bootstrap rate."""
        with self._lock:
            peers = [
                rate
                for thread_id, (state, rate) in self._latest.items()
                if thread_id != subject_id and state is BehaviorState.RUNNING
            ]
            if peers:
                return sum(peers) / len(peers)
            return self._bootstrap_rates.get(subject_id, 0.0)

    def observe(self, subject_id: int, now_ns: int) -> tuple[BehaviorState, float]:
        """Read one sequence (one query), classify it, and record the verdict."""
        sequence = self.source.read_sequence(subject_id)
        rate = compute_heart_rate(sequence, now_ns, self.config.rate_window_ms)
        state = classify(sequence, self.liveness, self.baseline_for(subject_id), self.config, now_ns)
        self._check_window_overrun(sequence)

        with self._lock:
            previous = self._latest.get(subject_id)
            self._latest[subject_id] = (state, rate)
            if (
                subject_id not in self._bootstrap_rates
                and state is BehaviorState.RUNNING
                and rate > 0
                and sequence.records
                and sequence.records[0].timestamp_ns <= now_ns - self.config.rate_window_ns
            ):
                self._bootstrap_rates[subject_id] = rate

        if previous is None or previous[0] is not state:
            logger.info(
                "Thread %d is %s",
                subject_id,
                state.value,
                extra={
                    "event": "detect.transition",
                    "thread_id": subject_id,
                    "state": state.value,
                    "previous": previous[0].value if previous else None,
                    "rate": rate,
                },
            )
        return state, rate

    def classify_thread(self, subject_id: int, now_ns: int) -> BehaviorState:
        return self.observe(subject_id, now_ns)[0]

    def latest_states(self) -> dict[int, BehaviorState]:
        with self._lock:
            return {thread_id: state for thread_id, (state, _) in self._latest.items()}

    def latest_rates(self) -> dict[int, float]:
        with self._lock:
            return {thread_id: rate for thread_id, (_, rate) in self._latest.items()}

    def _check_window_overrun(self, sequence: SequenceSnapshot) -> None:
        with self._lock:
            seen = self._last_seen_seq.get(sequence.thread_id, 0)
            self._last_seen_seq[sequence.thread_id] = max(seen, sequence.last_seq_no)
        if seen and sequence.records and sequence.first_seq_no > seen + 1:
            logger.debug(
                "Heartbeats evicted before any monitor saw them",
                extra={
                    "event": "detect.window_overrun",
                    "thread_id": sequence.thread_id,
                    "missed": sequence.first_seq_no - seen - 1,
                },
            )
