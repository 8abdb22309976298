"""Smart-meter CSV ingestion and export.

Input rows are snapped onto the 15-minute grid (within one minute) or
rejected; every row read is either used or listed in the ingest report.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ..errors import EmptyFileError, MissingColumnError, TimestampParseError
from .series import STEP, STEP_MINUTES, TimeSeries

log = logging.getLogger(__name__)

SNAP_TOLERANCE_S = 60
HASH_PREFIX = "# config_hash:"


@dataclass(frozen=True)
class CsvSchema:
    timestamp: str = "timestamp"
    node_id: str = "node_id"
    power_kw: str = "power_kw"


@dataclass
class IngestReport:
    rows_read: int = 0
    rows_used: int = 0
    duplicates: int = 0
    rejects: list = field(default_factory=list)
    config_hash: str | None = None

    def reject(self, line: int, reason: str) -> None:
        log.info("rejected line %d: %s", line, reason)
        self.rejects.append({"line": line, "reason": reason})

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["config_hash"] is None:
            del d["config_hash"]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def parse_timestamp(text: str) -> datetime:
    """RFC 3339 or ``YYYY-MM-DD HH:MM``; aware values are converted to naive UTC."""
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc).replace(tzinfo=None)
    return dt


def _snap(dt: datetime) -> np.datetime64 | None:
    secs = int(np.datetime64(dt, "s").astype(np.int64))
    step = STEP_MINUTES * 60
    nearest = round(secs / step) * step
    if abs(secs - nearest) > SNAP_TOLERANCE_S:
        return None
    return np.datetime64(nearest, "s").astype("datetime64[m]")


def format_timestamp(ts) -> str:
    return str(np.datetime64(ts, "m")).replace("T", " ")


def read_config_hash(path) -> str | None:
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            if not raw.startswith("#"):
                return None
            if raw.startswith(HASH_PREFIX):
                return raw[len(HASH_PREFIX):].strip()
    return None


def ingest_csv(path, schema: CsvSchema = CsvSchema()) -> tuple[list[TimeSeries], IngestReport]:
    report = IngestReport()
    cells: dict[str, dict[np.datetime64, tuple[float, int]]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        lines = list(fh)
    lineno = 0
    while lineno < len(lines) and lines[lineno].startswith("#"):
        if lines[lineno].startswith(HASH_PREFIX):
            report.config_hash = lines[lineno][len(HASH_PREFIX):].strip()
        lineno += 1
    body = [ln for ln in lines[lineno:]]
    if not body or not body[0].strip():
        raise EmptyFileError(f"{path}: no header row")
    reader = csv.reader(body)
    header = [h.strip() for h in next(reader)]
    cols = {}
    for role in ("timestamp", "node_id", "power_kw"):
        name = getattr(schema, role)
        if name not in header:
            raise MissingColumnError(f"{path}: column {name!r} ({role}) not in header {header}")
        cols[role] = header.index(name)
    header_line = lineno + 1

    for offset, row in enumerate(reader, start=1):
        line = header_line + offset
        if not row or all(not c.strip() for c in row):
            continue
        report.rows_read += 1
        if len(row) < len(header):
            report.reject(line, f"expected {len(header)} fields, got {len(row)}")
            continue
        raw_ts = row[cols["timestamp"]]
        try:
            dt = parse_timestamp(raw_ts)
        except ValueError:
            raise TimestampParseError(line, raw_ts) from None
        try:
            value = float(row[cols["power_kw"]])
        except ValueError:
            report.reject(line, f"unparsable power value {row[cols['power_kw']]!r}")
            continue
        if not math.isfinite(value):
            report.reject(line, "non-finite power value")
            continue
        ts = _snap(dt)
        if ts is None:
            report.reject(line, f"timestamp {raw_ts} more than {SNAP_TOLERANCE_S}s off the 15-minute grid")
            continue
        node = row[cols["node_id"]].strip()
        node_cells = cells.setdefault(node, {})
        if ts in node_cells:
            report.duplicates += 1
            prev_line = node_cells[ts][1]
            log.warning("node %s: duplicate reading at %s (line %d supersedes line %d)",
                        node, ts, line, prev_line)
            report.reject(prev_line, f"duplicate of ({node}, {format_timestamp(ts)}); superseded by line {line}")
        node_cells[ts] = (value, line)

    if report.rows_read == 0:
        raise EmptyFileError(f"{path}: no data rows")
    report.rejects.sort(key=lambda r: r["line"])

    series = []
    for node in sorted(cells):
        stamps = sorted(cells[node])
        start = stamps[0]
        n = int((stamps[-1] - start) // STEP) + 1
        values = np.full(n, np.nan)
        for ts in stamps:
            values[int((ts - start) // STEP)] = cells[node][ts][0]
        report.rows_used += len(stamps)
        series.append(TimeSeries(node, start, values))
    return series, report


def export_csv(series: list[TimeSeries], path, config_hash: str | None = None) -> Path:
    """Write series in long format; missing readings are omitted."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if config_hash:
            fh.write(f"{HASH_PREFIX} {config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "node_id", "power_kw"])
        for s in series:
            for ts, v in zip(s.timestamps, s.values):
                if not np.isnan(v):
                    w.writerow([format_timestamp(ts), s.node_id, repr(float(v))])
    return path
