"""Shared test doubles: a virtual clock, scripted liveness and table builders."""

import heapq
import itertools
import threading
from typing import Callable, Dict, Iterable, List, Optional

from src.services.heartbeat_store import HeartbeatSequence, HeartbeatTable

MS = 1_000_000
T0 = 1_000 * MS


class ScriptedClock:
    """Virtual monotonic clock. ``wait_until`` jumps straight to the deadline,
    running any scheduled actions that fall due on the way."""

    def __init__(self, start_ns: int = T0):
        self._now = start_ns
        self._actions: List = []
        self._order = itertools.count()

    def now_ns(self) -> int:
        return self._now

    def at(self, when_ns: int, action: Callable[[], None]) -> None:
        heapq.heappush(self._actions, (when_ns, next(self._order), action))

    def set(self, when_ns: int) -> None:
        while self._actions and self._actions[0][0] <= when_ns:
            due, _, action = heapq.heappop(self._actions)
            self._now = max(self._now, due)
            action()
        self._now = max(self._now, when_ns)

    def advance(self, delta_ns: int) -> None:
        self.set(self._now + delta_ns)

    def wait_until(self, deadline_ns: int, stop: Optional[threading.Event] = None) -> bool:
        if stop is not None and stop.is_set():
            return False
        self.set(deadline_ns)
        return not (stop is not None and stop.is_set())


class ScriptedLiveness:
    """Liveness oracle answering from a dict; unknown threads are alive."""

    def __init__(self, dead: Iterable[int] = ()):
        self.alive: Dict[int, bool] = {thread_id: False for thread_id in dead}

    def kill(self, thread_id: int) -> None:
        self.alive[thread_id] = False

    def __call__(self, thread_id: int) -> bool:
        return self.alive.get(thread_id, True)


def feed(handle: HeartbeatSequence, timestamps: Iterable[int], loop_id: int = 1) -> None:
    """Record one beat per timestamp, iteration counting from 1."""
    for timestamp in timestamps:
        handle.record(loop_id, handle.last_seq_no + 1, timestamp)


def steady(start_ns: int, stop_ns: int, every_ns: int) -> List[int]:
    return list(range(start_ns, stop_ns, every_ns))


def build_table(beats: Dict[int, List[int]], exited: Iterable[int] = (), capacity: int = 1024) -> HeartbeatTable:
    table = HeartbeatTable(capacity)
    for thread_id in sorted(beats):
        feed(table.register_thread(thread_id), beats[thread_id])
    for thread_id in exited:
        table.handle(thread_id).mark_exit()
    return table
