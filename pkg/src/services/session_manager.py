"""Heartbeat sessions and the process-wide instrumentation facade.

This module provides two layers:
- ``HeartbeatSession``: one instrumented run (table, classifier, monitors,
  per-worker beat intervals). The experiment runner builds these directly.
- ``SessionManager``: the five-call application API (init / generate /
  monitor / finished / heart_rate_adjust) over a single global session,
  returning 0 on success and 1 on failure the way native callers expect.
"""

from __future__ import annotations

import logging
import threading
from enum import Enum
from typing import Dict, List, Optional

from .. import config
from ..models.monitor import BehaviorState, MonitorConfig, MonitorMode, default_monitor_config
from ..models.session import ThreadStatus
from ..utils.clock import SYSTEM_CLOCK, Clock
from ..utils.errors import AfterExitError, HbtmError, LogIOError, NoLiveThreadsError, UnknownThreadIdError
from ..utils.retry import retry_call
from .classifier import BehaviorClassifier
from .heartbeat_store import HeartbeatSequence, HeartbeatTable
from .liveness import LivenessOracle, ThreadLivenessOracle
from .log_store import persist_log
from .monitor import CentralizedMonitor, EventSink, RingMonitor
from .rate_control import BeatInterval, adjust_heart_rate, apply_adjustment, average_heart_rate, windowed_rate

logger = logging.getLogger(__name__)


class SessionStatus(str, Enum):
    INITIALIZED = "Initialized"
    RUNNING = "Running"
    FINISHED = "Finished"


class HeartbeatSession:
    """State of one instrumented run."""

    def __init__(
        self,
        monitor_config: Optional[MonitorConfig] = None,
        *,
        clock: Clock = SYSTEM_CLOCK,
        liveness: Optional[LivenessOracle] = None,
    ):
        self.config = monitor_config or default_monitor_config()
        self.clock = clock
        self.table = HeartbeatTable(self.config.window_capacity, session_label=self.config.session_label)
        self.liveness: LivenessOracle = liveness if liveness is not None else ThreadLivenessOracle()
        self.classifier = BehaviorClassifier(self.table, self.config, self.liveness)
        self.sink = EventSink()
        self.status = SessionStatus.INITIALIZED
        self.central: Optional[CentralizedMonitor] = None
        self.ring_monitors: Dict[int, RingMonitor] = {}
        self._handles: Dict[int, HeartbeatSequence] = {}
        self._intervals: Dict[int, BeatInterval] = {}
        self._stop = threading.Event()
        self._monitor_thread: Optional[threading.Thread] = None
        self._finish_lock = threading.Lock()
        self.persisted_records: Optional[int] = None

    @property
    def mode(self) -> MonitorMode:
        return self.config.mode

    def start(self, spawn_monitor: bool = True) -> None:
        """Move to Running; a centralized session optionally spawns its monitor thread."""
        if self.status is not SessionStatus.INITIALIZED:
            raise HbtmError(f"session is already {self.status.value}")
        self.status = SessionStatus.RUNNING
        if self.mode is MonitorMode.CENTRALIZED:
            self.central = CentralizedMonitor(
                self.table, self.classifier, self.config, sink=self.sink, clock=self.clock
            )
            if spawn_monitor:
                self._monitor_thread = threading.Thread(
                    target=self.central.run, args=(self._stop,), name="hbtm-monitor", daemon=True
                )
                self._monitor_thread.start()
        logger.info(
            "Heartbeat session started",
            extra={
                "event": "session.start",
                "mode": self.mode.name.lower(),
                "detection_period_ms": self.config.detection_period_ms,
            },
        )

    def register_worker(
        self,
        thread_id: int,
        thread: Optional[threading.Thread] = None,
        iterations_per_beat: int = 1,
    ) -> HeartbeatSequence:
        handle = self.table.register_thread(thread_id)
        self._handles[thread_id] = handle
        self._intervals[thread_id] = BeatInterval(iterations_per_beat)
        if self.mode is MonitorMode.DECENTRALIZED:
            self.ring_monitors[thread_id] = RingMonitor(
                self.table, self.classifier, self.config, thread_id, sink=self.sink, clock=self.clock
            )
        if thread is not None:
            self.attach_thread(thread_id, thread)
        return handle

    def attach_thread(self, thread_id: int, thread: threading.Thread) -> None:
        if isinstance(self.liveness, ThreadLivenessOracle):
            self.liveness.attach(thread_id, thread)

    def interval(self, thread_id: int) -> BeatInterval:
        try:
            return self._intervals[thread_id]
        except KeyError:
            raise UnknownThreadIdError(f"thread {thread_id} is not registered") from None

    def _handle(self, thread_id: int) -> HeartbeatSequence:
        try:
            return self._handles[thread_id]
        except KeyError:
            raise UnknownThreadIdError(f"thread {thread_id} is not registered") from None

    def generate(self, thread_id: int, loop_id: int, iteration: int) -> Optional[int]:
        """Record a beat when ``iteration`` is a multiple of the thread's interval.

        Returns the new seq_no, or None when gated out or the session is finished.
        """
        if self.status is SessionStatus.FINISHED:
            return None
        handle = self._handle(thread_id)
        seq_no = None
        if iteration % self._intervals[thread_id].value == 0:
            seq_no = self._record(handle, loop_id, iteration)
        self.service(thread_id)
        return seq_no

    def beat(self, thread_id: int, loop_id: int, iteration: int) -> Optional[int]:
        """Record a beat unconditionally (no interval gating)."""
        if self.status is SessionStatus.FINISHED:
            return None
        seq_no = self._record(self._handle(thread_id), loop_id, iteration)
        self.service(thread_id)
        return seq_no

    def _record(self, handle: HeartbeatSequence, loop_id: int, iteration: int) -> Optional[int]:
        try:
            return handle.record(loop_id, iteration, self.clock.now_ns())
        except AfterExitError:
            # finished() may mark the thread exited between the status check and the write
            if self.status is SessionStatus.FINISHED:
                return None
            raise

    def service(self, thread_id: int) -> bool:
        """Give a decentralized worker's monitor duty a chance to run. True if it ticked."""
        monitor = self.ring_monitors.get(thread_id)
        if monitor is None or self.status is not SessionStatus.RUNNING:
            return False
        if len(self.table) < 2:
            return False
        return monitor.maybe_tick()

    def exit_thread(self, thread_id: int) -> bool:
        """Set the exit marker of a worker that stops cooperatively."""
        return self._handle(thread_id).mark_exit()

    def run_monitor(self, max_periods: Optional[int] = None) -> None:
        """Block on monitoring duty until finished (or for ``max_periods`` periods)."""
        if self.mode is MonitorMode.CENTRALIZED:
            if self._monitor_thread is not None:
                if max_periods is None:
                    self._stop.wait()
                else:
                    self._monitor_thread.join(max_periods * self.config.detection_period_ms / 1000.0)
                return
            assert self.central is not None
            self.central.run(self._stop, max_periods=max_periods)
            return
        # decentralized duty runs inside generate(); the caller only waits
        if max_periods is None:
            self._stop.wait()
        else:
            deadline = self.clock.now_ns() + max_periods * self.config.detection_period_ns
            self.clock.wait_until(deadline, self._stop)

    def _shutdown(self) -> None:
        if self._stop.is_set():
            return
        self.status = SessionStatus.FINISHED
        self._stop.set()
        self.table.mark_application_exited()
        if self._monitor_thread is not None:
            self._monitor_thread.join()

    def finish(self) -> int:
        """Stop monitoring, close still-running sequences and persist the log.

        Threads the liveness oracle reports dead keep no exit marker so the
        log still reads as a failure. Returns the number of persisted records.
        Once the log is written further calls return the same count; after a
        failed write the next call tries to persist again.
        """
        with self._finish_lock:
            if self.persisted_records is not None:
                return self.persisted_records
            self._shutdown()

            for thread_id, handle in self._handles.items():
                if not handle.exited and self.liveness(thread_id):
                    handle.mark_exit()

            self.persisted_records = retry_call(
                lambda: persist_log(self.table, self.config.log_path),
                operation_name="persist_log",
                logger=logger,
                max_attempts=config.PERSIST_ATTEMPTS,
                retryable_exceptions=(LogIOError,),
            )
        logger.info(
            "Heartbeat session finished",
            extra={
                "event": "session.finish",
                "records": self.persisted_records,
                "events": len(self.sink),
                "log_path": self.config.log_path,
            },
        )
        return self.persisted_records

    def abort(self) -> None:
        """Stop monitoring without persisting anything."""
        with self._finish_lock:
            self._shutdown()

    def observe_all(
        self, since_ns: Optional[int] = None
    ) -> tuple[Dict[int, BehaviorState], Dict[int, float]]:
        """Classify every registered thread now.

        Rates are over each thread's last window_iteration beats, newer than
        ``since_ns`` when given.
        """
        now = self.clock.now_ns()
        states: Dict[int, BehaviorState] = {}
        rates: Dict[int, float] = {}
        for thread_id in self.table.ring_order:
            states[thread_id] = self.classifier.classify_thread(thread_id, now)
            rates[thread_id] = windowed_rate(
                self.table.read_sequence(thread_id), self.config.window_iteration, since_ns
            )
        return states, rates

    def average_rate(self, since_ns: Optional[int] = None) -> float:
        states, rates = self.observe_all(since_ns)
        return average_heart_rate(rates, states)

    def settle_time_ms(self, expected: float) -> float:
        """Time for one window_iteration of beats at ``expected`` beats/s."""
        return 1000.0 * self.config.window_iteration / expected

    def adjust_rate(self, expected: float, settle_ms: Optional[float] = None) -> float:
        """Retune every worker's beat interval toward ``expected`` beats/s.

        Returns the average rate over beats emitted after the adjustment,
        measured once ``settle_ms`` has passed (by default one
        window_iteration of beats at the expected rate).
        """
        average = self.average_rate()
        adjustment = adjust_heart_rate(
            average,
            expected,
            self.config.threshold_fraction * expected,
            self.config.window_iteration,
        )
        logger.info(
            "Heart rate adjustment",
            extra={
                "event": "rate.adjust",
                "average": average,
                "expected": expected,
                "changed": adjustment.changed,
                "iteration": adjustment.iteration,
            },
        )
        if not adjustment.changed:
            return average
        adjusted_at = self.clock.now_ns()
        for interval in self._intervals.values():
            apply_adjustment(interval, adjustment.iteration)
        if settle_ms is None:
            settle_ms = self.settle_time_ms(expected)
        if settle_ms > 0:
            self.clock.wait_until(adjusted_at + int(settle_ms * 1_000_000), self._stop)
        try:
            return self.average_rate(since_ns=adjusted_at)
        except NoLiveThreadsError:
            return 0.0

    def thread_statuses(self) -> List[ThreadStatus]:
        states = self.classifier.latest_states()
        rates = self.classifier.latest_rates()
        statuses = []
        for thread_id in self.table.ring_order:
            sequence = self.table.read_sequence(thread_id)
            last = sequence.last_beat
            statuses.append(
                ThreadStatus(
                    thread_id=thread_id,
                    state=states.get(thread_id),
                    observed_rate=rates.get(thread_id),
                    last_seq_no=sequence.last_seq_no,
                    last_beat_ns=last.timestamp_ns if last else None,
                    iterations_per_beat=self._intervals[thread_id].value,
                    exited=sequence.exited,
                )
            )
        return statuses


class SessionManager:
    """Owns the single global session behind the status-code API."""

    def __init__(self) -> None:
        self.session: Optional[HeartbeatSession] = None
        self._lock = threading.Lock()

    def init(
        self,
        mode: "MonitorMode | int | str",
        *,
        threads: Optional[int] = None,
        monitor_config: Optional[MonitorConfig] = None,
        spawn_monitor: bool = True,
        clock: Clock = SYSTEM_CLOCK,
        liveness: Optional[LivenessOracle] = None,
    ) -> int:
        """Create and start the session. 1 on a second init or a bad mode."""
        with self._lock:
            if self.session is not None:
                logger.warning(
                    "Session already initialised",
                    extra={"event": "session.init.duplicate", "status": self.session.status.value},
                )
                return 1
            try:
                parsed = MonitorMode.parse(mode)
            except (KeyError, ValueError):
                logger.warning("Unknown monitor mode %r", mode, extra={"event": "session.init.bad_mode"})
                return 1
            base = monitor_config or default_monitor_config()
            session = HeartbeatSession(base.model_copy(update={"mode": parsed}), clock=clock, liveness=liveness)
            try:
                for thread_id in range(threads or 0):
                    session.register_worker(thread_id)
                session.start(spawn_monitor=spawn_monitor)
            except HbtmError:
                logger.exception("Session start failed", extra={"event": "session.init.error"})
                return 1
            self.session = session
            return 0

    def generate(self, thread_num: int, loop_num: int, iteration: int) -> Optional[int]:
        """Beat if due. Dropped silently when there is no running session."""
        session = self.session
        if session is None:
            return None
        return session.generate(thread_num, loop_num, iteration)

    def monitor(self, max_periods: Optional[int] = None) -> int:
        session = self.session
        if session is None or session.status is not SessionStatus.RUNNING:
            return 1
        try:
            session.run_monitor(max_periods)
        except HbtmError:
            logger.exception("Monitor failed", extra={"event": "session.monitor.error"})
            return 1
        return 0

    def finished(self) -> int:
        session = self.session
        if session is None:
            return 1
        try:
            session.finish()
        except LogIOError:
            logger.exception(
                "Could not persist heartbeat log",
                extra={"event": "session.finish.persist_failed", "log_path": session.config.log_path},
            )
            return 1
        return 0

    def heart_rate_adjust(self, expected: float, settle_ms: Optional[float] = None) -> float:
        """Returns the measured average after adjusting; 0.0 when nothing is alive."""
        session = self.session
        if session is None:
            return 0.0
        try:
            if expected <= 0:
                logger.warning(
                    "Rejected non-positive expected heart rate",
                    extra={"event": "rate.adjust.rejected", "expected": expected},
                )
                return session.average_rate()
            return session.adjust_rate(expected, settle_ms)
        except NoLiveThreadsError:
            logger.warning("No live thread to adjust", extra={"event": "rate.adjust.no_live_threads"})
            return 0.0

    def reset(self) -> None:
        """Drop the global session without persisting it."""
        with self._lock:
            session, self.session = self.session, None
        if session is not None:
            session.abort()


# Global session manager instance
session_manager = SessionManager()

init = session_manager.init
generate = session_manager.generate
monitor = session_manager.monitor
finished = session_manager.finished
heart_rate_adjust = session_manager.heart_rate_adjust
