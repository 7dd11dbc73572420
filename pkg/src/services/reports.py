"""Report files: JSON, a flat CSV that round-trips, and plot-ready CSVs."""

import csv
import json
import logging
import statistics
from pathlib import Path
from typing import List

from ..models.experiment import ExperimentReport, MetricsReport

logger = logging.getLogger(__name__)

REPORT_JSON = "report.json"
REPORT_CSV = "report.csv"
OVERHEAD_CSV = "overhead_vs_rate.csv"
LATENCY_CSV = "latency_vs_rate.csv"
QUERIES_CSV = "queries.csv"

REPORT_COLUMNS = [
    "target_rate",
    "beats_every",
    "detection_period_ms",
    "e_alpha_s",
    "e_beta_s",
    "overhead",
    "achieved_rate",
    "latency_ms",
    "query_counts",
    "behavior_overhead",
]
_JSON_COLUMNS = {"latency_ms", "query_counts", "behavior_overhead"}


def _cell(metrics: MetricsReport, column: str) -> str:
    value = getattr(metrics, column)
    if column in _JSON_COLUMNS:
        return json.dumps(value, sort_keys=True)
    # repr keeps every float bit
    return repr(value)


def write_report_json(report: ExperimentReport, path: "str | Path") -> None:
    Path(path).write_text(report.model_dump_json(by_alias=True, indent=2), encoding="utf-8")


def read_report_json(path: "str | Path") -> ExperimentReport:
    return ExperimentReport.model_validate_json(Path(path).read_text(encoding="utf-8"))


def write_report_csv(metrics: List[MetricsReport], path: "str | Path") -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(REPORT_COLUMNS)
        for row in metrics:
            writer.writerow([_cell(row, column) for column in REPORT_COLUMNS])


def read_report_csv(path: "str | Path") -> List[MetricsReport]:
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    parsed = []
    for row in rows:
        data = {
            column: json.loads(row[column]) if column in _JSON_COLUMNS else row[column]
            for column in REPORT_COLUMNS
        }
        parsed.append(MetricsReport.model_validate(data))
    return parsed


def _median_latency(samples: List) -> "float | None":
    detected = [sample for sample in samples if sample is not None]
    return statistics.median(detected) if detected else None


def write_plot_csvs(report: ExperimentReport, out_dir: "str | Path") -> None:
    out_dir = Path(out_dir)
    with open(out_dir / OVERHEAD_CSV, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["target_rate", "achieved_rate", "beats_every", "overhead"])
        for row in report.metrics:
            writer.writerow([repr(row.target_rate), repr(row.achieved_rate), row.beats_every, repr(row.overhead)])

    with open(out_dir / LATENCY_CSV, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["target_rate", "behavior", "median_latency_ms", "samples", "not_detected"])
        for row in report.metrics:
            for behavior, samples in sorted(row.latency_ms.items()):
                median = _median_latency(samples)
                writer.writerow(
                    [
                        repr(row.target_rate),
                        behavior,
                        "" if median is None else repr(median),
                        len(samples),
                        sum(sample is None for sample in samples),
                    ]
                )

    with open(out_dir / QUERIES_CSV, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["target_rate", "detector_id", "queries"])
        for row in report.metrics:
            for detector_id, count in sorted(row.query_counts.items()):
                writer.writerow([repr(row.target_rate), detector_id, count])


def write_reports(report: ExperimentReport, out_dir: "str | Path") -> Path:
    """Write every report file into ``out_dir`` and return it."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_json(report, out_dir / REPORT_JSON)
    write_report_csv(report.metrics, out_dir / REPORT_CSV)
    write_plot_csvs(report, out_dir)
    logger.info(
        "Reports written",
        extra={"event": "bench.reports.written", "out_dir": str(out_dir), "rows": len(report.metrics)},
    )
    return out_dir
