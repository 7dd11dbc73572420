"""Synchronous retry with capped exponential backoff, used around log persistence."""

from __future__ import annotations

import logging
import random
import time
from typing import Callable, Iterator, Tuple, TypeVar

T = TypeVar("T")

RetryableExceptions = Tuple[type[BaseException], ...]


def backoff_delays(base_delay: float, max_delay: float, multiplier: float) -> Iterator[float]:
    """base, base*m, base*m^2, ... each capped at ``max_delay``."""
    delay = base_delay
    while True:
        yield min(delay, max_delay)
        delay *= multiplier


def retry_call(
    operation: Callable[[], T],
    *,
    operation_name: str,
    logger: logging.Logger,
    max_attempts: int = 3,
    base_delay: float = 0.05,
    max_delay: float = 1.0,
    multiplier: float = 2.0,
    jitter: float = 0.01,
    retryable_exceptions: RetryableExceptions = (OSError,),
) -> T:
    """Run ``operation``; on a retryable error sleep and try again, up to ``max_attempts`` calls.

    The last error is re-raised once attempts run out. Other exceptions propagate at once.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    if multiplier < 1:
        raise ValueError("multiplier must be >= 1")

    delays = backoff_delays(base_delay, max_delay, multiplier)
    for attempt in range(1, max_attempts + 1):
        try:
            return operation()
        except retryable_exceptions as exc:  # type: ignore[misc]
            final = attempt == max_attempts
            logger.warning(
                "%s failed on attempt %d of %d: %s",
                operation_name,
                attempt,
                max_attempts,
                exc,
                extra={
                    "event": f"retry.{operation_name}.{'exhausted' if final else 'scheduled'}",
                    "attempt": attempt,
                    "max_attempts": max_attempts,
                },
            )
            if final:
                raise
            pause = next(delays)
            if jitter > 0:
                pause += random.uniform(0, jitter)
            time.sleep(pause)
    raise AssertionError("unreachable")
