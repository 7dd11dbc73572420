"""Experiment runner: overhead, detection latency and query-load measurements."""

from __future__ import annotations

import logging
import statistics
from collections import Counter
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from .. import config as env
from ..models.experiment import ExperimentConfig, ExperimentReport, LatencySample, MetricsReport
from ..models.monitor import MONITOR_THREAD_ID, BehaviorState, DetectionEvent, MonitorConfig, MonitorMode
from ..models.workload import InjectionRecord, InjectionSpec, WorkloadSpec
from ..utils.clock import SYSTEM_CLOCK, Clock
from ..utils.errors import ZeroBaselineError
from .rate_control import windowed_rate
from .reports import write_reports
from .session_manager import HeartbeatSession
from .workloads import WorkloadResult, run_workload, switch_interval, verify_result

logger = logging.getLogger(__name__)

LATENCY_ORIGIN = "injection trigger"

SessionCallback = Callable[[HeartbeatSession], None]


def compute_overhead(e_alpha: float, e_beta: float) -> float:
    """Relative slowdown of the instrumented run: (e_alpha - e_beta) / e_beta."""
    if e_beta <= 0:
        raise ZeroBaselineError(f"baseline time must be positive, got {e_beta}")
    return (e_alpha - e_beta) / e_beta


def measure_latency(
    events: Iterable[DetectionEvent], schedule: Sequence[InjectionRecord]
) -> List[LatencySample]:
    """Time from each injection to the first event reporting its behaviour on its thread.

    Undetected injections come back with ``latency_ms=None``.
    """
    ordered = sorted(events, key=lambda event: event.detected_at_ns)
    samples = []
    for injection in schedule:
        detected = next(
            (
                event
                for event in ordered
                if event.subject_id == injection.thread_id
                and event.state is injection.behavior
                and event.detected_at_ns >= injection.triggered_at_ns
            ),
            None,
        )
        samples.append(
            LatencySample(
                thread_id=injection.thread_id,
                behavior=injection.behavior,
                triggered_at_ns=injection.triggered_at_ns,
                latency_ms=None if detected is None else (detected.detected_at_ns - injection.triggered_at_ns) / 1e6,
            )
        )
    return samples


class QueryCounts(BaseModel):
    """Sequence queries per detector; the central monitor is -1."""

    per_thread: Dict[int, int] = Field(default_factory=dict)
    total: int = 0
    max: int = 0
    periods: int = 0
    max_per_period: int = 0


def count_queries(events: Iterable[DetectionEvent], mode: "MonitorMode | int | str") -> QueryCounts:
    """Centralized runs charge every query to the monitor; ring runs to each detecting worker."""
    centralized = MonitorMode.parse(mode) is MonitorMode.CENTRALIZED

    def detector(event: DetectionEvent) -> int:
        return MONITOR_THREAD_ID if centralized else event.detector_id

    events = list(events)
    per_thread = dict(Counter(detector(event) for event in events))
    per_period = Counter((detector(event), event.detected_at_ns) for event in events)
    instants = Counter(detector_id for detector_id, _ in per_period)
    return QueryCounts(
        per_thread=per_thread,
        total=len(events),
        max=max(per_thread.values(), default=0),
        periods=max(instants.values(), default=0),
        max_per_period=max(per_period.values(), default=0),
    )


def experiment_monitor_config(
    experiment: ExperimentConfig, rate: float, log_path: "str | Path"
) -> MonitorConfig:
    """Two beats per detection period at the target rate, 1 ms floor, 20-period rate window."""
    period_ms = experiment.detection_period_ms or max(1.0, 2000.0 / rate)
    return MonitorConfig(
        mode=experiment.mode,
        detection_period_ms=period_ms,
        rate_window_ms=experiment.rate_window_ms or 20.0 * period_ms,
        log_path=str(log_path),
    )


def default_probe(experiment: ExperimentConfig, baseline_s: float) -> InjectionSpec:
    """Seeded Exit on the last worker somewhere between 30% and 60% of the baseline run."""
    rng = np.random.default_rng(experiment.seed)
    fraction = float(rng.uniform(0.3, 0.6))
    return InjectionSpec(
        target_thread=experiment.workload.thread_count - 1,
        behavior=BehaviorState.EXIT,
        start_ms=fraction * baseline_s * 1000.0,
    )


def _instrumented_run(
    spec: WorkloadSpec,
    monitor_config: MonitorConfig,
    injections: Sequence[InjectionSpec],
    clock: Clock,
    on_session: Optional[SessionCallback] = None,
) -> tuple[WorkloadResult, HeartbeatSession]:
    session = HeartbeatSession(monitor_config, clock=clock)
    session.start()
    if on_session is not None:
        on_session(session)
    try:
        result = run_workload(spec, session, injections, clock=clock)
    finally:
        session.finish()
    return result, session


def _achieved_rate(session: HeartbeatSession) -> float:
    rates = [
        windowed_rate(sequence)
        for sequence in session.table.snapshot().sequences.values()
        if len(sequence.records) >= 2
    ]
    return float(np.mean(rates)) if rates else 0.0


def _measure_rate(
    experiment: ExperimentConfig,
    spec: WorkloadSpec,
    rate: float,
    steps_per_second: float,
    baseline_s: float,
    out_dir: Path,
    clock: Clock,
    on_session: Optional[SessionCallback] = None,
) -> MetricsReport:
    beats_every = max(1, int(round(steps_per_second / rate)))
    rate_spec = spec.model_copy(update={"beats_every": beats_every})
    monitor_config = experiment_monitor_config(experiment, rate, out_dir / f"heartbeats_{rate:g}.log")

    alphas: List[float] = []
    betas: List[float] = []
    session: Optional[HeartbeatSession] = None
    for _ in range(experiment.repetitions):
        baseline = run_workload(rate_spec, None, clock=clock)
        verify_result(baseline)
        betas.append(baseline.elapsed_s)
        instrumented, session = _instrumented_run(rate_spec, monitor_config, (), clock, on_session)
        verify_result(instrumented)
        alphas.append(instrumented.elapsed_s)
    assert session is not None

    e_alpha = statistics.median(alphas)
    e_beta = statistics.median(betas)
    queries = count_queries(session.sink.events(), experiment.mode)

    groups: Dict[BehaviorState, List[InjectionSpec]] = {}
    for injection in experiment.injections or [default_probe(experiment, baseline_s)]:
        groups.setdefault(injection.behavior, []).append(injection)

    latency: Dict[str, List[Optional[float]]] = {}
    behavior_overhead: Dict[str, float] = {}
    for behavior, injections in groups.items():
        probe_config = monitor_config.model_copy(
            update={"log_path": str(out_dir / f"probe_{behavior.value}_{rate:g}.log")}
        )
        probe, probe_session = _instrumented_run(rate_spec, probe_config, injections, clock, on_session)
        samples = measure_latency(probe_session.sink.events(), probe.injections)
        latency[behavior.value] = [sample.latency_ms for sample in samples]
        if experiment.injections:
            probe_baseline = run_workload(rate_spec, None, injections, clock=clock)
            behavior_overhead[behavior.value] = compute_overhead(probe.elapsed_s, probe_baseline.elapsed_s)

    metrics = MetricsReport(
        target_rate=rate,
        beats_every=beats_every,
        detection_period_ms=monitor_config.detection_period_ms,
        e_alpha_s=e_alpha,
        e_beta_s=e_beta,
        overhead=compute_overhead(e_alpha, e_beta),
        achieved_rate=_achieved_rate(session),
        latency_ms=latency,
        query_counts=queries.per_thread,
        behavior_overhead=behavior_overhead,
    )
    logger.info(
        "Rate target measured",
        extra={
            "event": "bench.rate.done",
            "target_rate": rate,
            "beats_every": beats_every,
            "overhead": metrics.overhead,
            "achieved_rate": metrics.achieved_rate,
        },
    )
    return metrics


def run_experiment(
    experiment: ExperimentConfig,
    *,
    clock: Clock = SYSTEM_CLOCK,
    write_files: bool = True,
    on_session: Optional[SessionCallback] = None,
) -> ExperimentReport:
    """Sweep the heart-rate targets and write the report files into ``output_dir``."""
    out_dir = Path(experiment.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = experiment.workload.model_copy(update={"seed": experiment.seed})

    with switch_interval(env.SWITCH_INTERVAL_US):
        # warm-up run doubles as throughput calibration and correctness check
        warmup = run_workload(spec, None, clock=clock)
        verify_result(warmup)
        slowest = max(warmup.thread_elapsed_s.values()) or warmup.elapsed_s
        steps_per_second = spec.steps_per_thread / slowest if slowest > 0 else float(spec.steps_per_thread)
        logger.info(
            "Calibrated workload throughput",
            extra={"event": "bench.calibrate", "kind": spec.kind.value, "steps_per_second": steps_per_second},
        )
        metrics = [
            _measure_rate(experiment, spec, rate, steps_per_second, warmup.elapsed_s, out_dir, clock, on_session)
            for rate in experiment.rates
        ]

    report = ExperimentReport(
        workload=spec,
        mode=experiment.mode.name.lower(),
        repetitions=experiment.repetitions,
        seed=experiment.seed,
        metrics=metrics,
        metadata={
            "latency_origin": LATENCY_ORIGIN,
            "timing": f"median of {experiment.repetitions} interleaved repetitions",
            "clock": "monotonic",
        },
    )
    if write_files:
        write_reports(report, out_dir)
    return report
