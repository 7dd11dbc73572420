"""Threaded benchmark kernels with heartbeat insertion points and a behaviour injector.

Each kernel splits its work across OS threads. A worker calls
``session.generate`` once per loop step and, at the same point, gives the
injector a chance to force an episode (busy wait, conditional wait, exit or
failure) on it. Without a session the same code is the uninstrumented
baseline.
"""

from __future__ import annotations

import logging
import sys
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence

import numpy as np

from ..models.monitor import BehaviorState, MonitorMode
from ..models.workload import InjectionRecord, InjectionSpec, WorkloadKind, WorkloadSpec
from ..utils.clock import SYSTEM_CLOCK, Clock
from ..utils.errors import InvalidSpecError, WorkloadFailureError
from .rate_control import windowed_rate
from .session_manager import HeartbeatSession

logger = logging.getLogger(__name__)

# busy-wait beats come at this fraction of the worker's normal cadence
BUSY_WAIT_CADENCE = 0.3
_PI_BLOCK = 1 << 20
_CADENCE_SAMPLE = 20


# ---------------------------------------------------------------------------
# Sequential references
# ---------------------------------------------------------------------------


def _pi_terms(start: int, stop: int, step: float) -> float:
    x = (np.arange(start, stop, dtype=np.float64) + 0.5) * step
    return float(np.sum(4.0 / (1.0 + x * x)))


def pi_reference(iterations: int) -> float:
    """Midpoint rule for the integral of 4/(1+x^2) over [0, 1] with ``iterations`` strips."""
    if iterations <= 0:
        raise ValueError("iterations must be positive")
    step = 1.0 / iterations
    total = 0.0
    for start in range(0, iterations, _PI_BLOCK):
        total += _pi_terms(start, min(start + _PI_BLOCK, iterations), step)
    return total * step


def jacobi_initial_grid(grid: int) -> np.ndarray:
    """Zero interior, hot top edge."""
    values = np.zeros((grid, grid), dtype=np.float64)
    values[0, :] = 1.0
    return values


def _relax_rows(src: np.ndarray, dst: np.ndarray, first: int, last: int) -> None:
    dst[first:last, 1:-1] = 0.25 * (
        src[first - 1 : last - 1, 1:-1]
        + src[first + 1 : last + 1, 1:-1]
        + src[first:last, :-2]
        + src[first:last, 2:]
    )


def jacobi_reference(grid: int, cycles: int) -> np.ndarray:
    current = jacobi_initial_grid(grid)
    following = current.copy()
    for _ in range(cycles):
        _relax_rows(current, following, 1, grid - 1)
        current, following = following, current
    return current


def matmul_operands(dim: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    return rng.random((dim, dim)), rng.random((dim, dim))


def matmul_reference(dim: int, seed: int = 0) -> np.ndarray:
    left, right = matmul_operands(dim, seed)
    return left @ right


def _matmul_entries(left: np.ndarray, right: np.ndarray, out: np.ndarray, first: int, last: int) -> None:
    dim = out.shape[1]
    index = np.arange(first, last)
    rows, cols = index // dim, index % dim
    out.reshape(-1)[first:last] = np.einsum("ij,ji->i", left[rows], right[:, cols])


def chunked_matmul(left: np.ndarray, right: np.ndarray, chunk: int) -> np.ndarray:
    """Single-threaded product computed the same chunk-by-chunk way the workers do."""
    out = np.zeros((left.shape[0], right.shape[1]), dtype=np.result_type(left, right, np.float64))
    for first in range(0, out.size, chunk):
        _matmul_entries(left, right, out, first, min(first + chunk, out.size))
    return out


# ---------------------------------------------------------------------------
# Synchronisation and injection plumbing
# ---------------------------------------------------------------------------


class CyclePhaser:
    """Reusable cycle barrier whose parties can leave and rejoin.

    A worker in an injected episode leaves so the rest keep cycling.
    """

    def __init__(self, parties: Sequence[int]):
        self._members = set(parties)
        self._arrived: set[int] = set()
        self._generation = 0
        self._cond = threading.Condition()

    @property
    def generation(self) -> int:
        return self._generation

    def arrive_and_wait(self, party: int) -> int:
        with self._cond:
            generation = self._generation
            self._arrived.add(party)
            self._advance_if_complete()
            while self._generation == generation:
                self._cond.wait()
            return self._generation

    def leave(self, party: int) -> None:
        with self._cond:
            self._members.discard(party)
            self._arrived.discard(party)
            self._advance_if_complete()

    def join(self, party: int) -> int:
        with self._cond:
            self._members.add(party)
            return self._generation

    def _advance_if_complete(self) -> None:
        if self._members and self._arrived >= self._members:
            self._generation += 1
            self._arrived.clear()
            self._cond.notify_all()


@dataclass
class _Armed:
    spec: InjectionSpec
    ready: threading.Event = field(default_factory=threading.Event)
    fired: bool = False


class InjectionController:
    """Arms time-triggered injections from its own thread; workers poll ``due``."""

    def __init__(self, injections: Sequence[InjectionSpec], clock: Clock = SYSTEM_CLOCK):
        self.clock = clock
        self.records: List[InjectionRecord] = []
        self._armed: Dict[int, List[_Armed]] = {}
        for spec in injections:
            self._armed.setdefault(spec.target_thread, []).append(_Armed(spec))
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self._lock = threading.Lock()
        self.condition = threading.Condition()
        self.started_at_ns = 0

    @property
    def aborted(self) -> bool:
        return self._stop.is_set()

    def start(self) -> None:
        self.started_at_ns = self.clock.now_ns()
        timed = sorted(
            (armed for pending in self._armed.values() for armed in pending if armed.spec.start_ms is not None),
            key=lambda armed: armed.spec.start_ms,
        )
        if timed:
            self._thread = threading.Thread(target=self._arm_timed, args=(timed,), name="hbtm-injector", daemon=True)
            self._thread.start()

    def _arm_timed(self, timed: List[_Armed]) -> None:
        for armed in timed:
            deadline = self.started_at_ns + int(armed.spec.start_ms * 1_000_000)
            if not self.clock.wait_until(deadline, self._stop):
                return
            armed.ready.set()
            logger.debug(
                "Injection armed",
                extra={
                    "event": "workload.inject.armed",
                    "thread_id": armed.spec.target_thread,
                    "behavior": armed.spec.behavior.value,
                },
            )

    def wait_until(self, deadline_ns: int) -> bool:
        """Sleep on the shared clock; False once the run was aborted."""
        return self.clock.wait_until(deadline_ns, self._stop)

    def stop(self) -> None:
        self._stop.set()
        with self.condition:
            self.condition.notify_all()
        if self._thread is not None:
            self._thread.join()

    def due(self, thread_id: int, iteration: int) -> Optional[InjectionSpec]:
        for armed in self._armed.get(thread_id, ()):
            if armed.fired:
                continue
            spec = armed.spec
            if armed.ready.is_set() or (spec.start_iteration is not None and iteration >= spec.start_iteration):
                armed.fired = True
                return spec
        return None

    def record(self, record: InjectionRecord) -> InjectionRecord:
        with self._lock:
            self.records.append(record)
        return record


# ---------------------------------------------------------------------------
# Workers
# ---------------------------------------------------------------------------


class _Worker:
    """Per-thread loop hooks: beat, poll the injector, act out episodes."""

    def __init__(
        self,
        thread_id: int,
        spec: WorkloadSpec,
        session: Optional[HeartbeatSession],
        controller: InjectionController,
        clock: Clock,
        phaser: Optional[CyclePhaser] = None,
    ):
        self.thread_id = thread_id
        self.spec = spec
        self.session = session
        self.controller = controller
        self.clock = clock
        self.phaser = phaser
        self.stopped_early = False
        self.elapsed_s = 0.0

    def interval(self) -> int:
        if self.session is None:
            return self.spec.iterations_per_beat
        return self.session.interval(self.thread_id).value

    def next_step(self, done: int, remaining: int) -> int:
        """Steps to run before the next beat boundary."""
        interval = self.interval()
        return min(interval - done % interval, remaining)

    def step(self, done: int) -> bool:
        """Loop step completed; False once the worker must stop."""
        if self.session is not None:
            self.session.generate(self.thread_id, self.spec.loop_id, done)
        injection = self.controller.due(self.thread_id, done)
        if injection is None:
            return True
        return self._perform(injection, done)

    def finish(self) -> None:
        # a normally completed worker closes its own sequence
        if self.session is not None and not self.stopped_early:
            self.session.exit_thread(self.thread_id)

    def _perform(self, injection: InjectionSpec, done: int) -> bool:
        record = self.controller.record(
            InjectionRecord(
                thread_id=self.thread_id,
                behavior=injection.behavior,
                triggered_at_ns=self.clock.now_ns(),
            )
        )
        logger.info(
            "Injected %s on thread %d",
            injection.behavior.value,
            self.thread_id,
            extra={"event": "workload.inject.fire", "thread_id": self.thread_id, "behavior": injection.behavior.value},
        )
        if injection.behavior is BehaviorState.EXIT:
            self.stopped_early = True
            if self.session is not None:
                self.session.exit_thread(self.thread_id)
            return False
        if injection.behavior is BehaviorState.FAILURE:
            self.stopped_early = True
            return False

        assert injection.duration_ms is not None
        if self.phaser is not None:
            self.phaser.leave(self.thread_id)
        try:
            if injection.behavior is BehaviorState.BUSY_WAITING:
                self._busy_wait(injection.duration_ms, done)
            else:
                self._conditional_wait(injection.duration_ms)
        finally:
            if self.phaser is not None:
                self.phaser.join(self.thread_id)
        record.ended_at_ns = self.clock.now_ns()
        return True

    def _normal_cadence_ns(self) -> int:
        fallback = 1_000_000
        if self.session is None:
            return fallback
        fallback = self.session.config.detection_period_ns
        rate = windowed_rate(self.session.table.read_sequence(self.thread_id), _CADENCE_SAMPLE)
        return int(1e9 / rate) if rate > 0 else fallback

    def _busy_cadence_ns(self) -> int:
        """Reduced beat interval for a busy episode.

        Kept between one detection period and half the stall window so the
        episode reads as slow but steady rather than stalled.
        """
        slow = self._normal_cadence_ns() / BUSY_WAIT_CADENCE
        if self.session is not None:
            config = self.session.config
            ceiling = max(1, config.stall_window_ns // 2)
            slow = min(max(slow, config.detection_period_ns), ceiling)
        return max(1, int(slow))

    def _busy_wait(self, duration_ms: float, done: int) -> None:
        """Make no progress while beating at a reduced, steady cadence."""
        slow_ns = self._busy_cadence_ns()
        service_ns = self.session.config.detection_period_ns if self.session is not None else slow_ns
        end = self.clock.now_ns() + int(duration_ms * 1_000_000)
        next_beat = self.clock.now_ns() + slow_ns
        while True:
            now = self.clock.now_ns()
            if now >= end:
                return
            if not self.controller.wait_until(min(next_beat, end, now + service_ns)):
                return
            now = self.clock.now_ns()
            if now >= end or self.session is None:
                continue
            if now >= next_beat:
                self.session.beat(self.thread_id, self.spec.loop_id, done)
                # next interval counts from the actual emission, late beats are not caught up
                next_beat = self.clock.now_ns() + slow_ns
            else:
                self.session.service(self.thread_id)

    def _conditional_wait(self, duration_ms: float) -> None:
        """Block on a condition that only the timeout (or an abort) releases."""
        with self.controller.condition:
            self.controller.condition.wait_for(lambda: self.controller.aborted, timeout=duration_ms / 1000.0)


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


def _pi_worker(worker: _Worker, partials: Dict[int, float]) -> None:
    spec = worker.spec
    total = spec.iterations * spec.thread_count
    step = 1.0 / total
    offset = worker.thread_id * spec.iterations
    done = 0
    acc = 0.0
    while done < spec.iterations:
        count = worker.next_step(done, spec.iterations - done)
        first = offset + done
        for block in range(first, first + count, _PI_BLOCK):
            acc += _pi_terms(block, min(block + _PI_BLOCK, first + count), step)
        done += count
        if not worker.step(done):
            break
    partials[worker.thread_id] = acc


def _jacobi_worker(worker: _Worker, grids: List[np.ndarray], bounds: tuple[int, int]) -> None:
    spec = worker.spec
    phaser = worker.phaser
    assert phaser is not None
    first, last = bounds
    computed = 0
    try:
        while True:
            generation = phaser.generation
            if generation >= spec.cycles:
                break
            _relax_rows(grids[generation % 2], grids[(generation + 1) % 2], first, last)
            computed += 1
            phaser.arrive_and_wait(worker.thread_id)
            if not worker.step(computed):
                break
    finally:
        phaser.leave(worker.thread_id)


def _matmul_worker(
    worker: _Worker,
    operands: tuple[np.ndarray, np.ndarray],
    out: np.ndarray,
    chunks: range,
) -> None:
    spec = worker.spec
    left, right = operands
    entries = spec.dim * spec.dim
    done = 0
    while done < len(chunks):
        count = worker.next_step(done, len(chunks) - done)
        for index in chunks[done : done + count]:
            first = index * spec.chunk
            _matmul_entries(left, right, out, first, min(first + spec.chunk, entries))
        done += count
        if not worker.step(done):
            break


@dataclass
class WorkloadResult:
    spec: WorkloadSpec
    value: "float | np.ndarray"
    elapsed_s: float
    thread_elapsed_s: Dict[int, float]
    injections: List[InjectionRecord]
    completed: bool

    def matches_reference(self, rel_tol: float = 1e-9) -> bool:
        return result_matches_reference(self.spec, self.value, rel_tol)


def result_matches_reference(spec: WorkloadSpec, value: "float | np.ndarray", rel_tol: float = 1e-9) -> bool:
    if spec.kind is WorkloadKind.PI:
        expected = pi_reference(spec.iterations * spec.thread_count)
        return abs(float(value) - expected) <= rel_tol * abs(expected)
    if spec.kind is WorkloadKind.JACOBI:
        expected_grid = jacobi_reference(spec.grid, spec.cycles)
    else:
        expected_grid = matmul_reference(spec.dim, spec.seed)
    return bool(np.allclose(value, expected_grid, rtol=rel_tol, atol=0.0))


def verify_result(result: WorkloadResult, rel_tol: float = 1e-9) -> None:
    """Raise WorkloadFailureError when a completed run disagrees with its sequential reference."""
    if not result.completed:
        return
    if not result.matches_reference(rel_tol):
        logger.error(
            "Kernel result does not match reference",
            extra={"event": "workload.verify.failed", "kind": result.spec.kind.value},
        )
        raise WorkloadFailureError(f"{result.spec.kind.value} result differs from the sequential reference")


def _validate(spec: WorkloadSpec, session: Optional[HeartbeatSession], injections: Sequence[InjectionSpec]) -> None:
    for injection in injections:
        if injection.target_thread >= spec.thread_count:
            raise InvalidSpecError(
                f"injection targets thread {injection.target_thread} but only {spec.thread_count} threads run"
            )
    if session is not None and session.mode is MonitorMode.DECENTRALIZED and spec.thread_count < 2:
        raise InvalidSpecError("decentralized monitoring needs at least two threads")


@contextmanager
def switch_interval(microseconds: int) -> Iterator[None]:
    """Run the block with a shorter interpreter thread-switch interval."""
    previous = sys.getswitchinterval()
    sys.setswitchinterval(microseconds / 1_000_000)
    try:
        yield
    finally:
        sys.setswitchinterval(previous)


def run_workload(
    spec: WorkloadSpec,
    session: Optional[HeartbeatSession] = None,
    injections: Sequence[InjectionSpec] = (),
    clock: Clock = SYSTEM_CLOCK,
) -> WorkloadResult:
    """Run one kernel to completion; ``session=None`` is the uninstrumented baseline."""
    _validate(spec, session, injections)
    controller = InjectionController(injections, clock)
    phaser = CyclePhaser(range(spec.thread_count)) if spec.kind is WorkloadKind.JACOBI else None
    workers = [_Worker(tid, spec, session, controller, clock, phaser) for tid in range(spec.thread_count)]

    value: "float | np.ndarray"
    partials: Dict[int, float] = {}
    targets: List[Callable[[], None]] = []
    if spec.kind is WorkloadKind.PI:
        targets = [lambda worker=worker: _pi_worker(worker, partials) for worker in workers]
    elif spec.kind is WorkloadKind.JACOBI:
        grids = [jacobi_initial_grid(spec.grid), jacobi_initial_grid(spec.grid)]
        rows = np.array_split(np.arange(1, spec.grid - 1), spec.thread_count)
        targets = [
            lambda worker=worker, block=block: _jacobi_worker(worker, grids, (int(block[0]), int(block[-1]) + 1))
            for worker, block in zip(workers, rows)
        ]
    else:
        operands = matmul_operands(spec.dim, spec.seed)
        product = np.zeros((spec.dim, spec.dim), dtype=np.float64)
        chunk_count = -(-spec.dim * spec.dim // spec.chunk)
        per_thread = spec.steps_per_thread
        targets = [
            lambda worker=worker: _matmul_worker(
                worker,
                operands,
                product,
                range(worker.thread_id * per_thread, min((worker.thread_id + 1) * per_thread, chunk_count)),
            )
            for worker in workers
        ]

    def run(worker: _Worker, target: Callable[[], None]) -> None:
        started = clock.now_ns()
        try:
            target()
        finally:
            worker.elapsed_s = (clock.now_ns() - started) / 1e9
        worker.finish()

    threads = [
        threading.Thread(target=run, args=(worker, target), name=f"hbtm-worker-{worker.thread_id}", daemon=True)
        for worker, target in zip(workers, targets)
    ]
    if session is not None:
        for worker, thread in zip(workers, threads):
            if worker.thread_id in session.table:
                session.attach_thread(worker.thread_id, thread)
                if spec.beats_every is not None:
                    session.interval(worker.thread_id).set(spec.beats_every)
            else:
                session.register_worker(worker.thread_id, thread, spec.iterations_per_beat)

    logger.info(
        "Workload started",
        extra={
            "event": "workload.start",
            "kind": spec.kind.value,
            "threads": spec.thread_count,
            "instrumented": session is not None,
            "injections": len(injections),
        },
    )
    started = clock.now_ns()
    controller.start()
    for thread in threads:
        thread.start()
    try:
        for thread in threads:
            thread.join()
    finally:
        controller.stop()
    elapsed_s = (clock.now_ns() - started) / 1e9

    if spec.kind is WorkloadKind.PI:
        value = sum(partials[tid] for tid in sorted(partials)) / (spec.iterations * spec.thread_count)
    elif spec.kind is WorkloadKind.JACOBI:
        assert phaser is not None
        value = grids[phaser.generation % 2].copy()
    else:
        value = product

    completed = not any(worker.stopped_early for worker in workers)
    logger.info(
        "Workload finished",
        extra={"event": "workload.finish", "kind": spec.kind.value, "elapsed_s": elapsed_s, "completed": completed},
    )
    return WorkloadResult(
        spec=spec,
        value=value,
        elapsed_s=elapsed_s,
        thread_elapsed_s={worker.thread_id: worker.elapsed_s for worker in workers},
        injections=sorted(controller.records, key=lambda record: record.triggered_at_ns),
        completed=completed,
    )
