"""Team heart-rate control: measure the average, correct iterations-per-beat toward a target."""

import logging
import math
import threading
from typing import Mapping, Optional

from ..models.heartbeat import SequenceSnapshot
from ..models.monitor import BehaviorState
from ..models.rate import RateAdjustment
from ..utils.errors import NoLiveThreadsError, NonPositiveRateError

logger = logging.getLogger(__name__)


class BeatInterval:
    """Iterations between heartbeats for one worker.

    Written by the adjuster and read by the worker on every iteration; a plain
    int attribute store is atomic, which is all the worker needs.
    """

    def __init__(self, iterations_per_beat: int = 1):
        if iterations_per_beat < 1:
            raise ValueError("iterations_per_beat must be >= 1")
        self._value = int(iterations_per_beat)
        self._lock = threading.Lock()

    @property
    def value(self) -> int:
        return self._value

    def set(self, iterations_per_beat: int) -> int:
        with self._lock:
            self._value = max(1, int(iterations_per_beat))
            return self._value

    def scale(self, factor: float) -> int:
        """Multiply by ``factor``, rounding to the nearest integer with ties going up."""
        with self._lock:
            self._value = max(1, math.floor(self._value * factor + 0.5))
            return self._value


def windowed_rate(
    sequence: SequenceSnapshot, window_iteration: Optional[int] = None, since_ns: Optional[int] = None
) -> float:
    """Beats per second across the last ``window_iteration`` retained beats.

    Unlike ``compute_heart_rate`` this ignores wall-clock windows, so a slow
    but steady thread still yields a usable figure. With ``since_ns`` only
    beats after that instant count. 0.0 below two beats.
    """
    records = sequence.records
    if since_ns is not None:
        records = tuple(record for record in records if record.timestamp_ns > since_ns)
    if window_iteration is not None:
        records = records[-max(2, window_iteration):]
    if len(records) < 2:
        return 0.0
    span_ns = records[-1].timestamp_ns - records[0].timestamp_ns
    if span_ns <= 0:
        return 0.0
    return (len(records) - 1) / (span_ns / 1e9)


def average_heart_rate(
    rates: Mapping[int, float], states: Mapping[int, BehaviorState]
) -> float:
    """Mean rate over threads currently Running or BusyWaiting."""
    live = [rates.get(thread_id, 0.0) for thread_id, state in states.items() if state.is_alive]
    if not live:
        raise NoLiveThreadsError("no running or busy-waiting thread to average")
    return sum(live) / len(live)


def adjust_heart_rate(
    average: float, expected: float, threshold: float, window_iteration: int
) -> RateAdjustment:
    """Return the iteration factor that moves ``average`` onto ``expected``.

    The window arithmetic reduces to ``average / expected``; it is evaluated
    step by step so the intermediate quantities land in the record.
    """
    if average <= 0 or expected <= 0:
        raise NonPositiveRateError(f"rates must be positive (average={average}, expected={expected})")
    if window_iteration < 1:
        raise ValueError("window_iteration must be >= 1")

    adjustment = RateAdjustment(
        average_heartrate=average,
        expected_heartrate=expected,
        threshold=threshold,
        window_iteration=window_iteration,
    )
    if expected - threshold <= average <= expected + threshold:
        return adjustment

    time_s = (1.0 / average) * window_iteration
    amount = time_s / (1.0 / expected)
    iteration = window_iteration / amount
    return adjustment.model_copy(
        update={"time_s": time_s, "amount": amount, "iteration": iteration, "changed": True}
    )


def apply_adjustment(interval: BeatInterval, iteration_factor: float) -> int:
    """Scale iterations-per-beat by the factor, rounded and clamped to >= 1."""
    if iteration_factor <= 0:
        raise ValueError("iteration_factor must be > 0")
    before = interval.value
    after = interval.scale(iteration_factor)
    logger.debug(
        "Iterations per beat adjusted",
        extra={"event": "rate.adjust.applied", "before": before, "after": after},
    )
    return after
