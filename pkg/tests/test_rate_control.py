"""Tests for team heart-rate averaging and adjustment."""

import random

import pytest

from src.models.monitor import BehaviorState
from src.services.heartbeat_store import HeartbeatSequence
from src.services.rate_control import (
    BeatInterval,
    adjust_heart_rate,
    apply_adjustment,
    average_heart_rate,
    windowed_rate,
)
from src.utils.errors import NoLiveThreadsError, NonPositiveRateError

from .helpers import MS, T0, feed, steady

RUNNING = BehaviorState.RUNNING


@pytest.mark.unit
class TestAverageHeartRate:
    def test_mean_of_running(self):
        assert average_heart_rate({0: 100.0, 1: 200.0}, {0: RUNNING, 1: RUNNING}) == 150.0

    def test_busy_waiting_counts_failure_does_not(self):
        rates = {0: 100.0, 1: 50.0, 2: 0.0}
        states = {0: RUNNING, 1: BehaviorState.BUSY_WAITING, 2: BehaviorState.FAILURE}
        assert average_heart_rate(rates, states) == 75.0

    def test_all_exited(self):
        with pytest.raises(NoLiveThreadsError):
            average_heart_rate({0: 0.0, 1: 0.0}, {0: BehaviorState.EXIT, 1: BehaviorState.EXIT})


@pytest.mark.unit
class TestAdjustHeartRate:
    def test_inside_band(self):
        adjustment = adjust_heart_rate(500.0, 500.0, 10.0, 1000)
        assert not adjustment.changed
        assert adjustment.iteration == 1.0
        assert adjustment.time_s is None

    def test_too_slow(self):
        adjustment = adjust_heart_rate(100.0, 500.0, 10.0, 1000)
        assert adjustment.changed
        assert adjustment.time_s == pytest.approx(10.0)
        assert adjustment.amount == pytest.approx(5000.0)
        assert adjustment.iteration == pytest.approx(0.2)

    def test_too_fast(self):
        assert adjust_heart_rate(1000.0, 100.0, 5.0, 1000).iteration == pytest.approx(10.0)

    def test_band_edges_are_inclusive(self):
        assert not adjust_heart_rate(510.0, 500.0, 10.0, 100).changed
        assert not adjust_heart_rate(490.0, 500.0, 10.0, 100).changed

    @pytest.mark.parametrize("average,expected", [(0.0, 100.0), (100.0, 0.0), (-1.0, 10.0)])
    def test_non_positive_rates(self, average, expected):
        with pytest.raises(NonPositiveRateError):
            adjust_heart_rate(average, expected, 1.0, 100)

    def test_window_iteration_floor(self):
        with pytest.raises(ValueError):
            adjust_heart_rate(100.0, 200.0, 1.0, 0)

    def test_factor_is_average_over_expected(self):
        rng = random.Random(11)
        for _ in range(1000):
            average = rng.uniform(0.1, 1e5)
            expected = rng.uniform(0.1, 1e5)
            window = rng.randint(1, 10_000)
            adjustment = adjust_heart_rate(average, expected, 0.0, window)
            if adjustment.changed:
                assert adjustment.iteration == pytest.approx(average / expected, rel=1e-9)

    def test_fixed_point(self):
        for _ in range(3):
            assert not adjust_heart_rate(101.0, 100.0, 5.0, 100).changed


@pytest.mark.unit
class TestApplyAdjustment:
    def test_scales_interval(self):
        assert apply_adjustment(BeatInterval(1500), 0.2) == 300

    def test_clamps_to_one(self):
        interval = BeatInterval(3)
        assert apply_adjustment(interval, 0.1) == 1
        assert interval.value == 1

    def test_identity(self):
        assert apply_adjustment(BeatInterval(1500), 1.0) == 1500

    @pytest.mark.parametrize("start,expected", [(5, 3), (9, 5), (3, 2)])
    def test_halves_round_up(self, start, expected):
        assert apply_adjustment(BeatInterval(start), 0.5) == expected

    def test_rejects_non_positive_factor(self):
        with pytest.raises(ValueError):
            apply_adjustment(BeatInterval(10), 0.0)

    def test_interval_floor(self):
        with pytest.raises(ValueError):
            BeatInterval(0)
        assert BeatInterval(5).set(0) == 1


@pytest.mark.unit
class TestClosedLoop:
    @pytest.mark.parametrize("expected", [10.0, 100.0, 1000.0])
    def test_converges_within_five_rounds(self, expected):
        # deterministic cost per loop iteration; the measured rate is exact
        seconds_per_iteration = 3.7e-6
        interval = BeatInterval(1)
        threshold = 0.05 * expected
        for _ in range(5):
            measured = 1.0 / (interval.value * seconds_per_iteration)
            adjustment = adjust_heart_rate(measured, expected, threshold, 100)
            if not adjustment.changed:
                break
            apply_adjustment(interval, adjustment.iteration)
        measured = 1.0 / (interval.value * seconds_per_iteration)
        assert expected - threshold <= measured <= expected + threshold


@pytest.mark.unit
class TestWindowedRate:
    def test_steady_beats(self):
        handle = HeartbeatSequence(0)
        feed(handle, steady(T0, T0 + 101 * MS, 10 * MS))
        assert windowed_rate(handle.snapshot()) == pytest.approx(100.0)

    def test_last_beats_only(self):
        handle = HeartbeatSequence(0)
        feed(handle, [T0, T0 + 100 * MS, T0 + 101 * MS, T0 + 102 * MS])
        assert windowed_rate(handle.snapshot(), window_iteration=3) == pytest.approx(1000.0)

    def test_too_few_beats(self):
        handle = HeartbeatSequence(0)
        assert windowed_rate(handle.snapshot()) == 0.0
        feed(handle, [T0])
        assert windowed_rate(handle.snapshot()) == 0.0

    def test_zero_span(self):
        handle = HeartbeatSequence(0)
        feed(handle, [T0, T0])
        assert windowed_rate(handle.snapshot()) == 0.0

    def test_only_beats_after_since(self):
        handle = HeartbeatSequence(0)
        feed(handle, steady(T0, T0 + 50 * MS, MS) + steady(T0 + 50 * MS, T0 + 151 * MS, 10 * MS))
        assert windowed_rate(handle.snapshot(), since_ns=T0 + 49 * MS) == pytest.approx(100.0)
        assert windowed_rate(handle.snapshot(), since_ns=T0 + 150 * MS) == 0.0
