"""Process-wide monotonic clock shared by heartbeats, monitors and workloads."""

from __future__ import annotations

import threading
import time
from typing import Optional, Protocol


class Clock(Protocol):
    def now_ns(self) -> int: ...

    def wait_until(self, deadline_ns: int, stop: Optional[threading.Event] = None) -> bool: ...


class MonotonicClock:
    """Wall-clock-free time source; ``wait_until`` wakes early when ``stop`` is set."""

    def now_ns(self) -> int:
        return time.monotonic_ns()

    def wait_until(self, deadline_ns: int, stop: Optional[threading.Event] = None) -> bool:
        """Sleep until ``deadline_ns``. Returns False if ``stop`` was set meanwhile."""
        remaining = (deadline_ns - time.monotonic_ns()) / 1e9
        if stop is None:
            if remaining > 0:
                time.sleep(remaining)
            return True
        if remaining > 0:
            return not stop.wait(remaining)
        return not stop.is_set()


SYSTEM_CLOCK = MonotonicClock()
