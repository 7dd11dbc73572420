"""Heartbeat log persistence.

File layout (UTF-8)::

    hbtm-log v1[ session=<label>] capacity=<window_capacity>
    #ring,<id>,<id>,...
    #start,<thread_id>
    <thread_id>,<seq_no>,<timestamp_ns>,<loop_id>,<iteration>
    ...
    #exit,<thread_id>

Every line, including the last, ends with a newline; a final line without one
is treated as truncated.
"""

import logging
import os
from pathlib import Path
from typing import Optional

from .. import config
from ..models.heartbeat import Heartbeat
from ..utils.errors import LogIOError, MalformedRecordError
from .heartbeat_store import HeartbeatTable

logger = logging.getLogger(__name__)

LOG_MAGIC = "hbtm-log"
LOG_VERSION = "v1"


def persist_log(table: HeartbeatTable, path: "str | os.PathLike[str]") -> int:
    """Write every retained record, marker and the ring order. Returns the record count."""
    snapshot = table.snapshot()
    header = f"{LOG_MAGIC} {LOG_VERSION}"
    if table.session_label:
        header += f" session={table.session_label}"
    header += f" capacity={table.window_capacity}"
    lines = [header]
    if snapshot.ring_order:
        lines.append("#ring," + ",".join(str(thread_id) for thread_id in snapshot.ring_order))

    record_count = 0
    for thread_id in snapshot.ring_order:
        sequence = snapshot.sequences[thread_id]
        if sequence.started:
            lines.append(f"#start,{thread_id}")
        for record in sequence.records:
            lines.append(
                f"{record.thread_id},{record.seq_no},{record.timestamp_ns},"
                f"{record.loop_id},{record.iteration}"
            )
            record_count += 1
        if sequence.exited:
            lines.append(f"#exit,{thread_id}")

    target = Path(path)
    temp = target.with_name(target.name + ".tmp")
    try:
        temp.write_text("\n".join(lines) + "\n", encoding="utf-8")
        os.replace(temp, target)
    except OSError as exc:
        raise LogIOError(f"failed to write heartbeat log {target}: {exc}") from exc

    logger.info(
        "Heartbeat log persisted",
        extra={"event": "log.persist", "path": str(target), "records": record_count},
    )
    return record_count


def _parse_int(value: str, line_no: int, what: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise MalformedRecordError(line_no, f"invalid {what}: {value!r}") from None


def load_log(
    path: "str | os.PathLike[str]", window_capacity: Optional[int] = None
) -> HeartbeatTable:
    """Rebuild a table from a persisted log. Raises MalformedRecordError with the line number."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise LogIOError(f"failed to read heartbeat log {path}: {exc}") from exc

    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    elif lines:
        raise MalformedRecordError(len(lines), "truncated line (missing newline)")
    if not lines:
        raise MalformedRecordError(1, "missing header")

    header = lines[0].split()
    if len(header) < 2 or header[0] != LOG_MAGIC:
        raise MalformedRecordError(1, "not a heartbeat log")
    if header[1] != LOG_VERSION:
        raise MalformedRecordError(1, f"unsupported log version {header[1]!r}")
    label = None
    stored_capacity = None
    for token in header[2:]:
        if token.startswith("session="):
            label = token.split("=", 1)[1]
        elif token.startswith("capacity="):
            stored_capacity = _parse_int(token.split("=", 1)[1], 1, "window capacity")

    ring: list[int] = []
    records: dict[int, list[Heartbeat]] = {}
    started: set[int] = set()
    exited: set[int] = set()

    for line_no, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if line.startswith("#ring,"):
            if ring:
                raise MalformedRecordError(line_no, "duplicate ring line")
            ring = [_parse_int(value, line_no, "thread id") for value in fields[1:]]
            if len(set(ring)) != len(ring):
                raise MalformedRecordError(line_no, "ring order repeats a thread id")
            records = {thread_id: [] for thread_id in ring}
            continue
        if line.startswith("#start,") or line.startswith("#exit,"):
            if len(fields) != 2:
                raise MalformedRecordError(line_no, "marker needs exactly one thread id")
            thread_id = _parse_int(fields[1], line_no, "thread id")
            if thread_id not in records:
                raise MalformedRecordError(line_no, f"marker for unknown thread {thread_id}")
            (started if fields[0] == "#start" else exited).add(thread_id)
            continue
        if line.startswith("#"):
            raise MalformedRecordError(line_no, f"unknown marker {fields[0]!r}")
        if len(fields) != 5:
            raise MalformedRecordError(line_no, f"expected 5 fields, got {len(fields)}")

        thread_id, seq_no, timestamp_ns, loop_id, iteration = (
            _parse_int(value, line_no, name)
            for value, name in zip(
                fields, ("thread_id", "seq_no", "timestamp_ns", "loop_id", "iteration")
            )
        )
        if thread_id not in records:
            raise MalformedRecordError(line_no, f"record for unknown thread {thread_id}")
        history = records[thread_id]
        if history:
            previous = history[-1]
            if seq_no != previous.seq_no + 1:
                raise MalformedRecordError(line_no, f"sequence gap after {previous.seq_no}")
            if timestamp_ns < previous.timestamp_ns:
                raise MalformedRecordError(line_no, "timestamp went backwards")
        elif seq_no < 1:
            raise MalformedRecordError(line_no, "sequence numbers start at 1")
        history.append(Heartbeat(thread_id, seq_no, timestamp_ns, loop_id, iteration))

    longest = max((len(history) for history in records.values()), default=0)
    capacity = max(window_capacity or stored_capacity or config.WINDOW_CAPACITY, longest, 2)
    table = HeartbeatTable(window_capacity=capacity, session_label=label)
    for thread_id in ring:
        handle = table.register_thread(thread_id)
        handle.restore(records[thread_id], started=thread_id in started, exited=thread_id in exited)

    logger.debug(
        "Heartbeat log loaded",
        extra={"event": "log.load", "path": str(path), "threads": len(ring)},
    )
    return table
