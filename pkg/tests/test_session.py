"""Tests for heartbeat sessions and the status-code facade."""

import threading
import time

import pytest

from src.models.monitor import BehaviorState, MonitorMode
from src.services import session_manager as facade
from src.services.log_store import load_log
from src.services.session_manager import HeartbeatSession, SessionStatus
from src.utils.errors import AfterExitError, UnknownThreadIdError

from .helpers import MS, T0, ScriptedClock, ScriptedLiveness


def _init(manager, mode, monitor_config, clock, liveness, threads=2):
    return manager.init(
        mode,
        threads=threads,
        monitor_config=monitor_config,
        spawn_monitor=False,
        clock=clock,
        liveness=liveness,
    )


@pytest.mark.unit
class TestInit:
    def test_centralized(self, session_manager, monitor_config, clock, liveness):
        assert _init(session_manager, 0, monitor_config, clock, liveness) == 0
        session = session_manager.session
        assert session.status is SessionStatus.RUNNING
        assert session.mode is MonitorMode.CENTRALIZED
        assert session.central is not None
        assert session.table.ring_order == (0, 1)

    def test_decentralized_creates_ring_monitors(self, session_manager, monitor_config, clock, liveness):
        assert _init(session_manager, "decentralized", monitor_config, clock, liveness, threads=3) == 0
        assert sorted(session_manager.session.ring_monitors) == [0, 1, 2]
        assert session_manager.session.central is None

    def test_double_init(self, session_manager, monitor_config, clock, liveness):
        assert _init(session_manager, 0, monitor_config, clock, liveness) == 0
        assert _init(session_manager, 0, monitor_config, clock, liveness) == 1

    @pytest.mark.parametrize("mode", [7, -1, "sideways"])
    def test_invalid_mode(self, session_manager, monitor_config, clock, liveness, mode):
        assert _init(session_manager, mode, monitor_config, clock, liveness) == 1
        assert session_manager.session is None

    def test_module_aliases_share_global_manager(self, monitor_config, clock, liveness):
        try:
            assert facade.init(0, monitor_config=monitor_config, spawn_monitor=False, clock=clock) == 0
            assert facade.session_manager.session is not None
            assert facade.init(0) == 1
        finally:
            facade.session_manager.reset()
        assert facade.session_manager.session is None


@pytest.mark.unit
class TestGenerate:
    def test_gated_on_interval(self, session_manager, monitor_config, clock, liveness):
        _init(session_manager, 0, monitor_config, clock, liveness)
        session_manager.session.interval(0).set(1500)
        assert session_manager.generate(0, 1, 1499) is None
        assert session_manager.generate(0, 1, 1500) == 1
        record = session_manager.session.table.read_sequence(0).last_beat
        assert (record.loop_id, record.iteration, record.timestamp_ns) == (1, 1500, T0)

    def test_interval_one_beats_every_call(self, session_manager, monitor_config, clock, liveness):
        _init(session_manager, 0, monitor_config, clock, liveness)
        for iteration in range(1, 6):
            clock.advance(MS)
            session_manager.generate(1, 1, iteration)
        assert session_manager.session.table.read_sequence(1).last_seq_no == 5

    def test_without_session(self, session_manager):
        assert session_manager.generate(0, 1, 1) is None

    def test_unknown_thread(self, session_manager, monitor_config, clock, liveness):
        _init(session_manager, 0, monitor_config, clock, liveness)
        with pytest.raises(UnknownThreadIdError):
            session_manager.generate(9, 1, 1)

    def test_after_exit_marker(self, session_manager, monitor_config, clock, liveness):
        _init(session_manager, 0, monitor_config, clock, liveness)
        session_manager.session.exit_thread(0)
        with pytest.raises(AfterExitError):
            session_manager.generate(0, 1, 1)

    def test_after_finished_is_dropped(self, session_manager, monitor_config, clock, liveness):
        _init(session_manager, 0, monitor_config, clock, liveness)
        assert session_manager.finished() == 0
        assert session_manager.generate(0, 1, 1) is None

    def test_decentralized_generate_runs_ring_duty(self, session_manager, monitor_config, clock, liveness):
        _init(session_manager, 1, monitor_config, clock, liveness)
        session_manager.generate(1, 1, 1)
        session_manager.generate(0, 1, 1)
        clock.advance(MS)
        session_manager.generate(1, 1, 2)
        session_manager.generate(0, 1, 2)
        events = session_manager.session.sink.events()
        assert [(event.detector_id, event.subject_id) for event in events] == [(1, 0), (0, 1)]
        assert all(event.state is BehaviorState.RUNNING for event in events)


@pytest.mark.unit
class TestMonitor:
    def test_before_init(self, session_manager):
        assert session_manager.monitor() == 1

    def test_centralized_runs_periods(self, session_manager, monitor_config, clock, liveness):
        _init(session_manager, 0, monitor_config, clock, liveness)
        assert session_manager.monitor(max_periods=3) == 0
        assert session_manager.session.sink.query_counts() == {-1: 6}

    def test_decentralized_waits(self, session_manager, monitor_config, clock, liveness):
        _init(session_manager, 1, monitor_config, clock, liveness)
        assert session_manager.monitor(max_periods=5) == 0
        assert clock.now_ns() == T0 + 5 * MS

    def test_after_finished(self, session_manager, monitor_config, clock, liveness):
        _init(session_manager, 0, monitor_config, clock, liveness)
        session_manager.finished()
        assert session_manager.monitor() == 1


@pytest.mark.unit
class TestFinished:
    def test_writes_log(self, session_manager, monitor_config, clock, liveness):
        _init(session_manager, 0, monitor_config, clock, liveness)
        session_manager.generate(0, 1, 1)
        assert session_manager.finished() == 0
        table = load_log(monitor_config.log_path)
        assert table.ring_order == (0, 1)
        assert table.read_sequence(0).exited

    def test_idempotent(self, session_manager, monitor_config, clock, liveness):
        _init(session_manager, 0, monitor_config, clock, liveness)
        assert session_manager.finished() == 0
        assert session_manager.finished() == 0
        assert session_manager.session.status is SessionStatus.FINISHED

    def test_unwritable_log(self, session_manager, monitor_config, clock, liveness, tmp_path):
        unwritable = monitor_config.model_copy(update={"log_path": str(tmp_path / "missing" / "x.log")})
        _init(session_manager, 0, unwritable, clock, liveness)
        assert session_manager.finished() == 1

    def test_failed_persist_is_retried_on_next_call(self, session_manager, monitor_config, clock, liveness, tmp_path):
        log_path = tmp_path / "missing" / "x.log"
        unwritable = monitor_config.model_copy(update={"log_path": str(log_path)})
        _init(session_manager, 0, unwritable, clock, liveness)
        session_manager.generate(0, 1, 1)

        assert session_manager.finished() == 1
        assert session_manager.finished() == 1
        assert not log_path.exists()

        log_path.parent.mkdir()
        assert session_manager.finished() == 0
        assert load_log(log_path).read_sequence(0).last_seq_no == 1
        assert session_manager.finished() == 0

    def test_without_session(self, session_manager):
        assert session_manager.finished() == 1

    def test_dead_threads_keep_no_exit_marker(self, session_manager, monitor_config, clock):
        _init(session_manager, 0, monitor_config, clock, ScriptedLiveness(dead=[1]))
        session_manager.generate(0, 1, 1)
        session_manager.generate(1, 1, 1)
        session_manager.finished()
        table = load_log(monitor_config.log_path)
        assert table.read_sequence(0).exited
        assert not table.read_sequence(1).exited
        assert table.read_sequence(1).last_seq_no == 1


@pytest.mark.unit
class TestHeartRateAdjust:
    @pytest.fixture
    def rate_config(self, monitor_config):
        return monitor_config.model_copy(
            update={"detection_period_ms": 10.0, "rate_window_ms": 200.0, "window_iteration": 10}
        )

    def _run(self, manager, clock, start, stop):
        for iteration in range(start, stop):
            clock.advance(MS)
            manager.generate(0, 1, iteration)
            manager.generate(1, 1, iteration)

    def _schedule(self, manager, clock, start, stop):
        for iteration in range(start, stop):
            clock.at(T0 + iteration * MS, lambda iteration=iteration: self._beat_all(manager, iteration))

    @staticmethod
    def _beat_all(manager, iteration):
        manager.generate(0, 1, iteration)
        manager.generate(1, 1, iteration)

    def test_converges_to_expected(self, session_manager, rate_config, clock, liveness):
        _init(session_manager, 0, rate_config, clock, liveness)
        self._run(session_manager, clock, 1, 51)
        self._schedule(session_manager, clock, 51, 400)
        session = session_manager.session
        assert session.settle_time_ms(100.0) == pytest.approx(100.0)

        # measured over the beats emitted while settling at the new interval
        assert session_manager.heart_rate_adjust(100.0) == pytest.approx(100.0)
        assert clock.now_ns() == T0 + 150 * MS
        assert [session.interval(thread_id).value for thread_id in (0, 1)] == [10, 10]

        clock.set(T0 + 300 * MS)
        assert session_manager.heart_rate_adjust(100.0) == pytest.approx(100.0)
        assert session.interval(0).value == 10
        assert clock.now_ns() == T0 + 300 * MS

    def test_explicit_settle_time(self, session_manager, rate_config, clock, liveness):
        _init(session_manager, 0, rate_config, clock, liveness)
        self._run(session_manager, clock, 1, 51)
        self._schedule(session_manager, clock, 51, 400)
        assert session_manager.heart_rate_adjust(100.0, settle_ms=50.0) == pytest.approx(100.0)
        assert clock.now_ns() == T0 + 100 * MS

    def test_nothing_new_to_measure_without_settling(self, session_manager, rate_config, clock, liveness):
        _init(session_manager, 0, rate_config, clock, liveness)
        self._run(session_manager, clock, 1, 51)
        # beats from before the adjustment no longer count
        assert session_manager.heart_rate_adjust(100.0, settle_ms=0.0) == 0.0
        assert session_manager.session.interval(0).value == 10

    def test_rejects_non_positive(self, session_manager, rate_config, clock, liveness):
        _init(session_manager, 0, rate_config, clock, liveness)
        self._run(session_manager, clock, 1, 51)
        assert session_manager.heart_rate_adjust(0.0) == pytest.approx(1000.0)
        assert session_manager.session.interval(0).value == 1

    def test_no_live_threads(self, session_manager, rate_config, clock, liveness):
        _init(session_manager, 0, rate_config, clock, liveness)
        session_manager.session.exit_thread(0)
        session_manager.session.exit_thread(1)
        assert session_manager.heart_rate_adjust(100.0) == 0.0

    def test_without_session(self, session_manager):
        assert session_manager.heart_rate_adjust(100.0) == 0.0


@pytest.mark.unit
class TestFacadeMatchesSession:
    @staticmethod
    def _script(clock, generate, exit_thread):
        for iteration in range(1, 60):
            when = T0 + iteration * (MS // 2)
            clock.at(when, lambda iteration=iteration: generate(0, 1, iteration))
            if iteration <= 20:
                clock.at(when, lambda iteration=iteration: generate(1, 1, iteration))
        clock.at(T0 + 10 * MS, lambda: exit_thread(1))

    def test_same_table_and_events(self, session_manager, monitor_config, tmp_path):
        direct_clock, facade_clock = ScriptedClock(), ScriptedClock()
        direct = HeartbeatSession(
            monitor_config.model_copy(
                update={"mode": MonitorMode.CENTRALIZED, "log_path": str(tmp_path / "direct.log")}
            ),
            clock=direct_clock,
            liveness=ScriptedLiveness(),
        )
        for thread_id in range(2):
            direct.register_worker(thread_id)
        direct.start(spawn_monitor=False)
        _init(session_manager, 0, monitor_config, facade_clock, ScriptedLiveness())
        facade_session = session_manager.session

        self._script(direct_clock, direct.generate, direct.exit_thread)
        self._script(facade_clock, session_manager.generate, facade_session.exit_thread)
        direct.run_monitor(max_periods=25)
        assert session_manager.monitor(max_periods=25) == 0

        direct_events = direct.sink.events()
        assert len(direct_events) == 50
        assert BehaviorState.EXIT in {event.state for event in direct_events if event.subject_id == 1}
        assert direct_events == facade_session.sink.events()

        direct.finish()
        session_manager.finished()
        left = load_log(tmp_path / "direct.log").snapshot()
        right = load_log(monitor_config.log_path).snapshot()
        assert left.ring_order == right.ring_order
        assert left.sequences == right.sequences


@pytest.mark.integration
class TestLiveSession:
    def test_centralized_monitor_thread(self, session_manager, monitor_config):
        assert session_manager.init(0, monitor_config=monitor_config) == 0
        session = session_manager.session
        stop = threading.Event()

        def work(thread_id):
            session.register_worker(thread_id, threading.current_thread())
            iteration = 0
            while not stop.is_set():
                iteration += 1
                session.generate(thread_id, 1, iteration)
                time.sleep(0.0002)
            session.exit_thread(thread_id)

        workers = [threading.Thread(target=work, args=(thread_id,)) for thread_id in range(2)]
        for worker in workers:
            worker.start()
        time.sleep(0.1)
        stop.set()
        for worker in workers:
            worker.join()

        assert session_manager.finished() == 0
        counts = session.sink.query_counts()
        assert set(counts) == {-1}
        assert counts[-1] > 0
        assert load_log(monitor_config.log_path).read_sequence(0).exited
