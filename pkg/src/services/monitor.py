"""Monitor drivers: one central polling thread, or a ring where each worker watches its successor."""

from __future__ import annotations

import csv
import logging
import threading
from collections import Counter
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Tuple

from ..models.monitor import MONITOR_THREAD_ID, BehaviorState, DetectionEvent, MonitorConfig
from ..utils.clock import SYSTEM_CLOCK, Clock
from ..utils.errors import SingletonRingError, UnknownThreadIdError
from .classifier import BehaviorClassifier, SequenceSource

logger = logging.getLogger(__name__)

EVENT_CSV_HEADER = ["detected_at_ns", "detector_id", "subject_id", "state", "observed_rate"]


class EventSink:
    """Append-only detection log that accepts interleaved appends from every monitor."""

    def __init__(self) -> None:
        self._events: List[DetectionEvent] = []
        self._lock = threading.Lock()

    def extend(self, events: Iterable[DetectionEvent]) -> None:
        batch = list(events)
        with self._lock:
            self._events.extend(batch)

    def events(self) -> List[DetectionEvent]:
        with self._lock:
            return list(self._events)

    def recent(self, limit: int) -> List[DetectionEvent]:
        with self._lock:
            return self._events[-limit:] if limit > 0 else []

    def query_counts(self) -> Counter:
        """Events per detector; every event is the result of exactly one sequence query."""
        with self._lock:
            return Counter(event.detector_id for event in self._events)

    def write_csv(self, path: "str | Path") -> int:
        events = self.events()
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(EVENT_CSV_HEADER)
            for event in events:
                writer.writerow(event.to_csv_line().split(","))
        return len(events)

    def __len__(self) -> int:
        with self._lock:
            return len(self._events)


def read_event_csv(path: "str | Path") -> List[DetectionEvent]:
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    return [DetectionEvent.from_csv_line(",".join(row)) for row in rows[1:] if row]


def next_alive_neighbor(
    source: SequenceSource,
    self_id: int,
    classifier: Callable[[int], BehaviorState],
) -> Tuple[int, List[BehaviorState]]:
    """Walk clockwise from the successor of ``self_id`` until a Running/BusyWaiting thread.

    Returns that thread plus the states of every thread visited. After a full
    lap with nobody alive it returns ``self_id`` and the whole lap.
    """
    ring = source.ring_order
    if len(ring) < 2:
        raise SingletonRingError("ring detection needs at least two threads")
    try:
        position = ring.index(self_id)
    except ValueError:
        raise UnknownThreadIdError(f"thread {self_id} is not in the ring") from None

    states: List[BehaviorState] = []
    for step in range(1, len(ring)):
        thread_id = ring[(position + step) % len(ring)]
        state = classifier(thread_id)
        states.append(state)
        if state.is_alive:
            return thread_id, states
    return self_id, states


class _PeriodicMonitor:
    """Shared period loop: wait one detection period, then run one pass."""

    detector_id: int

    def __init__(
        self,
        source: SequenceSource,
        classifier: BehaviorClassifier,
        config: MonitorConfig,
        sink: Optional[EventSink] = None,
        clock: Clock = SYSTEM_CLOCK,
    ):
        self.source = source
        self.classifier = classifier
        self.config = config
        self.sink = sink if sink is not None else EventSink()
        self.clock = clock
        self.queries = 0
        self.period_queries: List[int] = []

    def tick(self, now_ns: int) -> List[DetectionEvent]:
        raise NotImplementedError

    def retired(self) -> bool:
        return False

    def run(
        self, stop_signal: Optional[threading.Event] = None, max_periods: Optional[int] = None
    ) -> List[DetectionEvent]:
        """Tick once per detection period until stopped, the application exits, or max_periods."""
        stop_signal = stop_signal or threading.Event()
        emitted: List[DetectionEvent] = []
        period_ns = self.config.detection_period_ns
        deadline = self.clock.now_ns()
        periods = 0
        logger.info(
            "Monitor loop started",
            extra={"event": "monitor.start", "detector_id": self.detector_id},
        )
        while not stop_signal.is_set() and not self.source.application_exited:
            if max_periods is not None and periods >= max_periods:
                break
            deadline += period_ns
            if not self.clock.wait_until(deadline, stop_signal):
                break
            if self.source.application_exited or self.retired():
                break
            emitted.extend(self.tick(self.clock.now_ns()))
            periods += 1
        logger.info(
            "Monitor loop stopped",
            extra={
                "event": "monitor.stop",
                "detector_id": self.detector_id,
                "periods": periods,
                "queries": self.queries,
            },
        )
        return emitted


class CentralizedMonitor(_PeriodicMonitor):
    """One monitor thread that queries every worker each period."""

    detector_id = MONITOR_THREAD_ID

    def tick(self, now_ns: int) -> List[DetectionEvent]:
        events = []
        for thread_id in self.source.ring_order:
            state, rate = self.classifier.observe(thread_id, now_ns)
            events.append(
                DetectionEvent(
                    detector_id=self.detector_id,
                    subject_id=thread_id,
                    state=state,
                    detected_at_ns=now_ns,
                    observed_rate=rate,
                )
            )
        self.queries += len(events)
        self.period_queries.append(len(events))
        self.sink.extend(events)
        return events


class RingMonitor(_PeriodicMonitor):
    """Decentralized duty of one worker: classify successors until an alive one is found."""

    def __init__(
        self,
        source: SequenceSource,
        classifier: BehaviorClassifier,
        config: MonitorConfig,
        self_id: int,
        sink: Optional[EventSink] = None,
        clock: Clock = SYSTEM_CLOCK,
    ):
        super().__init__(source, classifier, config, sink, clock)
        self.detector_id = self_id
        self._next_tick_ns: Optional[int] = None

    def tick(self, now_ns: int) -> List[DetectionEvent]:
        visited: List[Tuple[int, float]] = []

        def observe(thread_id: int) -> BehaviorState:
            state, rate = self.classifier.observe(thread_id, now_ns)
            visited.append((thread_id, rate))
            return state

        _, states = next_alive_neighbor(self.source, self.detector_id, observe)
        events = [
            DetectionEvent(
                detector_id=self.detector_id,
                subject_id=thread_id,
                state=state,
                detected_at_ns=now_ns,
                observed_rate=rate,
            )
            for (thread_id, rate), state in zip(visited, states)
        ]
        self.queries += len(events)
        self.period_queries.append(len(events))
        self.sink.extend(events)
        return events

    def maybe_tick(self, now_ns: Optional[int] = None) -> bool:
        """Interleaved variant called from the worker's own loop; ticks when a period is due."""
        now_ns = self.clock.now_ns() if now_ns is None else now_ns
        period_ns = self.config.detection_period_ns
        if self._next_tick_ns is None:
            self._next_tick_ns = now_ns + period_ns
            return False
        if now_ns < self._next_tick_ns or self.source.application_exited:
            return False
        self.tick(now_ns)
        missed = (now_ns - self._next_tick_ns) // period_ns
        self._next_tick_ns += (missed + 1) * period_ns
        return True

    def retired(self) -> bool:
        """A worker that exited or died no longer monitors anyone."""
        own = self.source.read_sequence(self.detector_id)
        return own.exited or not self.classifier.liveness(self.detector_id)


def run_centralized_monitor(
    table: SequenceSource,
    classifier: BehaviorClassifier,
    config: MonitorConfig,
    stop_signal: Optional[threading.Event] = None,
    *,
    sink: Optional[EventSink] = None,
    clock: Clock = SYSTEM_CLOCK,
    max_periods: Optional[int] = None,
) -> List[DetectionEvent]:
    monitor = CentralizedMonitor(table, classifier, config, sink=sink, clock=clock)
    return monitor.run(stop_signal, max_periods=max_periods)


def run_decentralized_monitor(
    table: SequenceSource,
    classifier: BehaviorClassifier,
    config: MonitorConfig,
    self_id: int,
    stop_signal: Optional[threading.Event] = None,
    *,
    sink: Optional[EventSink] = None,
    clock: Clock = SYSTEM_CLOCK,
    max_periods: Optional[int] = None,
) -> List[DetectionEvent]:
    monitor = RingMonitor(table, classifier, config, self_id, sink=sink, clock=clock)
    return monitor.run(stop_signal, max_periods=max_periods)
