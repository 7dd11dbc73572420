"""Liveness oracles: is the OS thread behind a heartbeat sequence still alive?

Heartbeat evidence alone cannot tell a blocked thread from a dead one (both
emit 0 beats/s), so the classifier consults one of these.
"""

import threading
from typing import Callable, Dict

LivenessOracle = Callable[[int], bool]


class ThreadLivenessOracle:
    """Join-state probe over registered ``threading.Thread`` objects.

    Ids without an attached thread are reported alive: absence of a handle is
    not evidence of death.
    """

    def __init__(self) -> None:
        self._threads: Dict[int, threading.Thread] = {}
        self._lock = threading.Lock()

    def attach(self, thread_id: int, thread: threading.Thread) -> None:
        with self._lock:
            self._threads[thread_id] = thread

    def __call__(self, thread_id: int) -> bool:
        thread = self._threads.get(thread_id)
        return True if thread is None else thread.is_alive()


def always_alive(_thread_id: int) -> bool:
    return True
