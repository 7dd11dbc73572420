"""Tests for the retry helper used when persisting heartbeat logs."""

import logging
from itertools import islice

import pytest

from src.utils.errors import LogIOError
from src.utils.retry import backoff_delays, retry_call

logger = logging.getLogger(__name__)


@pytest.fixture
def no_retry_delay(monkeypatch):
    """Eliminate retry delays for deterministic and fast tests."""
    delays = []
    monkeypatch.setattr("src.utils.retry.time.sleep", delays.append)
    monkeypatch.setattr("src.utils.retry.random.uniform", lambda _a, _b: 0)
    return delays


@pytest.mark.unit
class TestRetryCall:
    def test_recovers_after_transient_failures(self, no_retry_delay):
        calls = []

        def flaky():
            calls.append(1)
            if len(calls) < 3:
                raise LogIOError("disk busy")
            return 42

        result = retry_call(
            flaky, operation_name="persist_log", logger=logger, retryable_exceptions=(LogIOError,)
        )
        assert result == 42
        assert len(calls) == 3
        assert no_retry_delay == [0.05, 0.1]

    def test_gives_up_after_max_attempts(self, no_retry_delay):
        calls = []

        def broken():
            calls.append(1)
            raise LogIOError("read-only filesystem")

        with pytest.raises(LogIOError):
            retry_call(
                broken,
                operation_name="persist_log",
                logger=logger,
                max_attempts=2,
                retryable_exceptions=(LogIOError,),
            )
        assert len(calls) == 2

    def test_other_errors_propagate_immediately(self, no_retry_delay):
        calls = []

        def bad():
            calls.append(1)
            raise KeyError("nope")

        with pytest.raises(KeyError):
            retry_call(bad, operation_name="persist_log", logger=logger, retryable_exceptions=(LogIOError,))
        assert len(calls) == 1
        assert no_retry_delay == []

    def test_delay_is_capped(self, no_retry_delay):
        def broken():
            raise OSError("gone")

        with pytest.raises(OSError):
            retry_call(broken, operation_name="x", logger=logger, max_attempts=6, base_delay=0.5, max_delay=1.0)
        assert no_retry_delay == [0.5, 1.0, 1.0, 1.0, 1.0]

    @pytest.mark.parametrize("kwargs", [{"max_attempts": 0}, {"multiplier": 0.5}])
    def test_invalid_arguments(self, kwargs):
        with pytest.raises(ValueError):
            retry_call(lambda: None, operation_name="x", logger=logger, **kwargs)


@pytest.mark.unit
def test_backoff_delays_double_until_capped():
    assert list(islice(backoff_delays(0.25, 1.0, 2.0), 5)) == [0.25, 0.5, 1.0, 1.0, 1.0]
