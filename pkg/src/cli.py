"""``hbtm`` command line: run experiments, replay persisted logs, re-emit reports.

Exit codes: 0 success, 2 configuration or input error, 3 kernel correctness failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import threading
from pathlib import Path
from typing import List, Optional, Sequence

import uvicorn

from . import config
from .main import create_app
from .models.experiment import ExperimentConfig, load_experiment_config
from .models.monitor import MonitorMode, default_monitor_config
from .models.workload import InjectionSpec, WorkloadKind
from .services.bench import run_experiment
from .services.log_store import load_log
from .services.monitor import EventSink
from .services.replay import replay_trace
from .services.reports import REPORT_JSON, read_report_json, write_reports
from .services.session_manager import HeartbeatSession
from .utils.errors import ConfigError, HbtmError, LogIOError, MalformedRecordError, WorkloadFailureError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_WORKLOAD = 3


def _rates(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid rate list {text!r}") from None


def _injection(text: str) -> InjectionSpec:
    try:
        return InjectionSpec.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _mode(text: str) -> MonitorMode:
    try:
        return MonitorMode.parse(text)
    except (KeyError, ValueError):
        raise argparse.ArgumentTypeError(f"unknown mode {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hbtm", description="Heartbeat thread-behaviour monitoring toolkit")
    parser.add_argument("--log-level", default=config.LOG_LEVEL, help="Python logging level")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Measure overhead, latency and query load over heart-rate targets")
    run.add_argument("--workload", choices=[kind.value for kind in WorkloadKind], required=True)
    run.add_argument("--mode", type=_mode, default=MonitorMode.CENTRALIZED, help="centralized or decentralized")
    run.add_argument("--threads", type=int, default=4, help="Worker threads (at most 8)")
    run.add_argument("--rate", type=_rates, required=True, help="Comma-separated heart-rate targets (beats/s)")
    run.add_argument("--reps", type=int, default=3, help="Timing repetitions per target")
    run.add_argument(
        "--inject",
        type=_injection,
        action="append",
        default=[],
        help="<behavior>@<thread>:<ms>[+<duration_ms>], repeatable",
    )
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", default="hbtm-report", help="Report directory")
    run.add_argument("--iterations", type=int, help="Pi iterations per thread")
    run.add_argument("--grid", type=int, help="Jacobi grid edge")
    run.add_argument("--cycles", type=int, help="Jacobi cycles")
    run.add_argument("--dim", type=int, help="MatMul matrix dimension")
    run.add_argument("--chunk", type=int, help="MatMul output entries per chunk")
    run.add_argument("--period", type=float, help="Detection period in ms (default derived from rate)")
    run.add_argument("--status-port", type=int, help="Serve the live status API on this port")

    replay = commands.add_parser("replay", help="Run the monitors over a persisted heartbeat log")
    replay.add_argument("--log", required=True, help="Heartbeat log file")
    replay.add_argument("--mode", type=_mode, required=True)
    replay.add_argument("--period", type=float, help="Detection period in ms")
    replay.add_argument("--rate-window", type=float, help="Rate window in ms")
    replay.add_argument("--stall-periods", type=int)
    replay.add_argument("--out", help="Directory for events.csv")

    report = commands.add_parser("report", help="Re-emit the CSV files of an existing report.json")
    report.add_argument("--dir", required=True, help="Directory holding report.json")
    return parser


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    workload = {"kind": args.workload, "thread_count": args.threads}
    for field in ("iterations", "grid", "cycles", "dim", "chunk"):
        value = getattr(args, field)
        if value is not None:
            workload[field] = value
    return load_experiment_config(
        {
            "workload": workload,
            "mode": args.mode,
            "rates": args.rate,
            "repetitions": args.reps,
            "injections": args.inject,
            "output_dir": args.out,
            "seed": args.seed,
            "detection_period_ms": args.period,
        }
    )


class _LatestSession:
    """Session provider for the status API: whichever instrumented run started last."""

    def __init__(self) -> None:
        self.session: Optional[HeartbeatSession] = None

    def set(self, session: HeartbeatSession) -> None:
        self.session = session

    def __call__(self) -> Optional[HeartbeatSession]:
        return self.session


def _serve_status(port: int, provider: _LatestSession) -> uvicorn.Server:
    server = uvicorn.Server(
        uvicorn.Config(create_app(provider), host=config.STATUS_HOST, port=port, log_level="warning")
    )
    threading.Thread(target=server.run, name="hbtm-status", daemon=True).start()
    logger.info("Status API listening", extra={"event": "status.start", "port": port})
    return server


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        experiment = _experiment_config(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}")
        return EXIT_CONFIG

    provider = _LatestSession()
    server = _serve_status(args.status_port, provider) if args.status_port else None
    try:
        report = run_experiment(experiment, on_session=provider.set)
    except WorkloadFailureError as exc:
        logger.error("Kernel correctness check failed", extra={"event": "cli.run.workload_failure"})
        print(f"workload failure: {exc}")
        return EXIT_WORKLOAD
    except HbtmError as exc:
        print(f"error: {exc}")
        return EXIT_CONFIG
    finally:
        if server is not None:
            server.should_exit = True

    for row in report.metrics:
        print(
            f"rate={row.target_rate:g} beats_every={row.beats_every} overhead={row.overhead:.4f} "
            f"achieved={row.achieved_rate:.1f}/s latency_ms={json.dumps(row.latency_ms)}"
        )
    print(f"reports written to {experiment.output_dir}")
    return EXIT_OK


def _cmd_replay(args: argparse.Namespace) -> int:
    try:
        table = load_log(args.log)
        monitor_config = default_monitor_config(
            mode=args.mode,
            detection_period_ms=args.period,
            rate_window_ms=args.rate_window,
            stall_periods=args.stall_periods,
        )
    except (LogIOError, MalformedRecordError, ValueError) as exc:
        print(f"cannot replay {args.log}: {exc}")
        return EXIT_CONFIG

    result = replay_trace(table, args.mode, monitor_config)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        sink = EventSink()
        sink.extend(result.events)
        sink.write_csv(out_dir / "events.csv")
    print(
        json.dumps(
            {
                "mode": args.mode.name.lower(),
                "periods": result.periods,
                "queries": result.queries.model_dump(),
                "final_states": result.final_states,
            },
            indent=2,
        )
    )
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.dir) / REPORT_JSON
    try:
        report = read_report_json(path)
    except (OSError, ValueError) as exc:
        print(f"cannot read {path}: {exc}")
        return EXIT_CONFIG
    write_reports(report, args.dir)
    print(f"reports rewritten in {args.dir}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    handlers = {"run": _cmd_run, "replay": _cmd_replay, "report": _cmd_report}
    return handlers[args.command](args)
