"""Tests for behaviour classification."""

import pytest

from src.models.monitor import BehaviorState, MonitorConfig
from src.services.classifier import BehaviorClassifier, classify, interval_cv, is_stalled
from src.services.heartbeat_store import HeartbeatSequence

from .helpers import MS, T0, ScriptedLiveness, build_table, feed, steady

# 1 ms periods, 20 ms rate window, stall after 3 silent periods
CONFIG = MonitorConfig(detection_period_ms=1.0, rate_window_ms=20.0, stall_periods=3)
NOW = T0 + 100 * MS


def _sequence(timestamps, exited=False, thread_id=0):
    handle = HeartbeatSequence(thread_id, capacity=1024)
    feed(handle, timestamps)
    if exited:
        handle.mark_exit()
    return handle.snapshot()


@pytest.mark.unit
class TestClassify:
    def test_exit_marker_wins(self):
        sequence = _sequence(steady(T0, NOW, MS), exited=True)
        assert classify(sequence, ScriptedLiveness(dead=[0]), 1000.0, CONFIG, NOW) is BehaviorState.EXIT

    def test_never_started_but_exited(self):
        sequence = _sequence([], exited=True)
        assert classify(sequence, ScriptedLiveness(), 0.0, CONFIG, NOW) is BehaviorState.EXIT

    def test_not_started(self):
        assert classify(_sequence([]), ScriptedLiveness(), 0.0, CONFIG, NOW) is BehaviorState.NOT_STARTED

    def test_stalled_and_dead_is_failure(self):
        sequence = _sequence(steady(T0, NOW - 10 * MS, MS))
        assert classify(sequence, ScriptedLiveness(dead=[0]), 1000.0, CONFIG, NOW) is BehaviorState.FAILURE

    def test_stalled_and_alive_is_conditional_waiting(self):
        sequence = _sequence(steady(T0, NOW - 10 * MS, MS))
        state = classify(sequence, ScriptedLiveness(), 1000.0, CONFIG, NOW)
        assert state is BehaviorState.CONDITIONAL_WAITING

    def test_slow_steady_beats_are_busy_waiting(self):
        # one beat every 1/0.3 ms against a 1000 beats/s baseline
        every = int(MS / 0.3)
        sequence = _sequence(steady(NOW - 19 * MS, NOW + 1, every))
        assert classify(sequence, ScriptedLiveness(), 1000.0, CONFIG, NOW) is BehaviorState.BUSY_WAITING

    def test_baseline_rate_is_running(self):
        sequence = _sequence(steady(T0, NOW + 1, MS))
        assert classify(sequence, ScriptedLiveness(), 1000.0, CONFIG, NOW) is BehaviorState.RUNNING

    def test_no_baseline_skips_busy_wait(self):
        every = int(MS / 0.3)
        sequence = _sequence(steady(NOW - 19 * MS, NOW + 1, every))
        assert classify(sequence, ScriptedLiveness(), 0.0, CONFIG, NOW) is BehaviorState.RUNNING

    def test_irregular_slow_beats_are_running(self):
        offsets = [0, 1, 2, 12, 13, 14]
        sequence = _sequence([NOW - 14 * MS + offset * MS for offset in offsets])
        assert classify(sequence, ScriptedLiveness(), 1000.0, CONFIG, NOW) is BehaviorState.RUNNING

    def test_stall_boundary(self):
        # last beat exactly three periods ago counts as stalled
        assert is_stalled(_sequence([NOW - 3 * MS]), NOW, CONFIG)
        assert not is_stalled(_sequence([NOW - 3 * MS + 1]), NOW, CONFIG)


@pytest.mark.unit
class TestIntervalCv:
    def test_needs_three_beats(self):
        assert interval_cv(_sequence([NOW - MS, NOW]), NOW, 20.0) is None

    def test_steady_intervals(self):
        assert interval_cv(_sequence(steady(NOW - 10 * MS, NOW + 1, MS)), NOW, 20.0) == pytest.approx(0.0)

    def test_irregular_intervals(self):
        cv = interval_cv(_sequence([NOW - 10 * MS, NOW - 9 * MS, NOW]), NOW, 20.0)
        assert cv == pytest.approx(0.8)


@pytest.mark.unit
class TestBehaviorClassifier:
    def test_baseline_from_running_peers(self):
        beats = {thread_id: steady(T0, NOW + 1, MS) for thread_id in range(3)}
        classifier = BehaviorClassifier(build_table(beats), CONFIG, ScriptedLiveness())
        for thread_id in range(3):
            classifier.observe(thread_id, NOW)
        assert classifier.baseline_for(0) == pytest.approx(1000.0)

    def test_busy_waiter_detected_against_peers(self):
        every = int(MS / 0.3)
        beats = {0: steady(NOW - 19 * MS, NOW + 1, every), 1: steady(T0, NOW + 1, MS), 2: steady(T0, NOW + 1, MS)}
        classifier = BehaviorClassifier(build_table(beats), CONFIG, ScriptedLiveness())
        classifier.observe(1, NOW)
        classifier.observe(2, NOW)
        assert classifier.classify_thread(0, NOW) is BehaviorState.BUSY_WAITING

    def test_bootstrap_rate_is_own_first_running_rate(self):
        classifier = BehaviorClassifier(build_table({0: steady(T0, NOW + 1, MS)}), CONFIG, ScriptedLiveness())
        assert classifier.baseline_for(0) == 0.0
        classifier.observe(0, NOW)
        assert classifier.baseline_for(0) == pytest.approx(1000.0)

    def test_latest_states_and_rates(self):
        table = build_table({0: steady(T0, NOW + 1, MS), 1: []})
        classifier = BehaviorClassifier(table, CONFIG, ScriptedLiveness())
        classifier.observe(0, NOW)
        classifier.observe(1, NOW)
        assert classifier.latest_states() == {0: BehaviorState.RUNNING, 1: BehaviorState.NOT_STARTED}
        assert classifier.latest_rates()[1] == 0.0

    def test_default_liveness_is_alive(self):
        table = build_table({0: [T0]})
        classifier = BehaviorClassifier(table, CONFIG)
        assert classifier.classify_thread(0, NOW) is BehaviorState.CONDITIONAL_WAITING
