"""Frozen-trace replay: run the monitors over a persisted heartbeat log on a virtual clock.

Replay is deterministic: the same log and config always yield the same
events, so query-count and latency analyses do not depend on scheduler noise.
"""

from __future__ import annotations

import logging
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from ..models.heartbeat import SequenceSnapshot
from ..models.monitor import DetectionEvent, MonitorConfig, MonitorMode
from ..utils.errors import UnknownThreadIdError
from .bench import QueryCounts, count_queries
from .classifier import BehaviorClassifier
from .heartbeat_store import HeartbeatTable
from .monitor import CentralizedMonitor, EventSink, RingMonitor

logger = logging.getLogger(__name__)


class TraceView:
    """Read-only view of a loaded table as it looked at ``cursor_ns``."""

    def __init__(self, table: HeartbeatTable):
        snapshot = table.snapshot()
        self._ring_order = snapshot.ring_order
        self._sequences = snapshot.sequences
        self._stamps = {tid: seq.timestamps() for tid, seq in snapshot.sequences.items()}
        self.cursor_ns = 0
        self.application_exited = False

    @property
    def ring_order(self) -> tuple[int, ...]:
        return self._ring_order

    def bounds(self) -> Optional[tuple[int, int]]:
        stamps = [ts for values in self._stamps.values() for ts in values]
        if not stamps:
            return None
        return min(stamps), max(stamps)

    def all_exited(self) -> bool:
        return bool(self._ring_order) and all(self.read_sequence(tid).exited for tid in self._ring_order)

    def full_sequence(self, thread_id: int) -> SequenceSnapshot:
        try:
            return self._sequences[thread_id]
        except KeyError:
            raise UnknownThreadIdError(f"thread {thread_id} is not in the trace") from None

    def read_sequence(self, thread_id: int) -> SequenceSnapshot:
        full = self.full_sequence(thread_id)
        visible = bisect_right(self._stamps[thread_id], self.cursor_ns)
        records = full.records[:visible]
        last_ts = full.records[-1].timestamp_ns if full.records else None
        exited = full.exited and (last_ts is None or self.cursor_ns >= last_ts)
        return SequenceSnapshot(
            thread_id=thread_id,
            records=records,
            started=bool(records) or exited or (full.started and not full.records),
            exited=exited,
            last_seq_no=records[-1].seq_no if records else 0,
        )


class HindsightLiveness:
    """Alive at the cursor iff the thread exits cleanly or beats again later in the trace."""

    def __init__(self, view: TraceView):
        self.view = view

    def __call__(self, thread_id: int) -> bool:
        full = self.view.full_sequence(thread_id)
        if full.exited:
            return True
        last = full.last_beat
        return last is not None and last.timestamp_ns > self.view.cursor_ns


@dataclass
class ReplayResult:
    events: List[DetectionEvent]
    queries: QueryCounts
    periods: int
    final_states: Dict[int, str] = field(default_factory=dict)


def replay_trace(
    table: HeartbeatTable,
    mode: "MonitorMode | int | str",
    monitor_config: Optional[MonitorConfig] = None,
    max_periods: Optional[int] = None,
) -> ReplayResult:
    """Step detection periods from the first beat to past the last one and collect events.

    Ring monitors are ticked in ring order within each period.
    """
    mode = MonitorMode.parse(mode)
    config = (monitor_config or MonitorConfig()).model_copy(update={"mode": mode})
    view = TraceView(table)
    classifier = BehaviorClassifier(view, config, HindsightLiveness(view))
    sink = EventSink()

    bounds = view.bounds()
    if bounds is None:
        return ReplayResult(events=[], queries=count_queries([], mode), periods=0)
    first, last = bounds
    period = config.detection_period_ns
    end = last + (config.stall_periods + 1) * period
    periods = -(-(end - first) // period)
    if max_periods is not None:
        periods = min(periods, max_periods)

    if mode is MonitorMode.CENTRALIZED:
        monitors = [CentralizedMonitor(view, classifier, config, sink=sink)]
    else:
        monitors = [RingMonitor(view, classifier, config, tid, sink=sink) for tid in view.ring_order]

    ticked = 0
    for step in range(1, periods + 1):
        now = first + step * period
        view.cursor_ns = now
        if view.all_exited():
            # the application is over once every thread has its exit marker
            view.application_exited = True
            break
        for monitor in monitors:
            if mode is MonitorMode.DECENTRALIZED and (len(view.ring_order) < 2 or monitor.retired()):
                continue
            monitor.tick(now)
        ticked += 1

    events = sink.events()
    periods = ticked
    logger.info(
        "Trace replayed",
        extra={"event": "replay.done", "mode": mode.name.lower(), "periods": periods, "events": len(events)},
    )
    return ReplayResult(
        events=events,
        queries=count_queries(events, mode),
        periods=periods,
        final_states={tid: state.value for tid, state in classifier.latest_states().items()},
    )
