# app/utils/trace_io.py

import csv
import json
import os
from typing import Optional

from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import InputError, MalformedTraceError
from app.core.logger import get_logger
from app.models.trace_schema import EventTrace, IntervalSeries, TraceEvent
from app.services.trace_service import gen_synthetic, to_interval_series

logger = get_logger("trace_io")

EVENT_HEADER = ["timestamp_s", "kind", "instance_id"]
INTERVAL_HEADER = ["interval_index", "num_available"]
SYNTHETIC_PREFIX = "synthetic:"
SYNTHETIC_FIELDS = ("seed", "capacity", "length", "preemptions", "allocations", "min_mag", "max_mag")


def meta_path(path: str) -> str:
    return os.path.splitext(path)[0] + ".meta.json"


def _read_header(path: str) -> list:
    if not os.path.isfile(path):
        raise InputError(f"trace file not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as f:
        return next(csv.reader(f), [])


# ============================================================
# EVENT TRACES
# ============================================================

def read_event_csv(path: str) -> EventTrace:
    header = _read_header(path)
    if header != EVENT_HEADER:
        raise MalformedTraceError(f"{path}: expected header {','.join(EVENT_HEADER)}, got {','.join(header)}")
    events = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for line_no, row in enumerate(csv.DictReader(f), start=2):
            try:
                events.append(TraceEvent(timestamp_s=float(row["timestamp_s"]), kind=row["kind"], instance_id=row["instance_id"]))
            except (ValueError, ValidationError) as e:
                raise MalformedTraceError(f"{path}:{line_no}: {e}") from e
    try:
        return EventTrace(events=events)
    except ValidationError as e:
        raise MalformedTraceError(f"{path}: {e}") from e


def write_event_csv(trace: EventTrace, path: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(EVENT_HEADER)
        for event in trace.events:
            writer.writerow([repr(event.timestamp_s), event.kind, event.instance_id])


# ============================================================
# INTERVAL SERIES
# ============================================================

def read_interval_csv(path: str, interval_seconds: Optional[float] = None, capacity: Optional[int] = None) -> IntervalSeries:
    """Interval CSV plus `<name>.meta.json`; explicit arguments override the sidecar."""
    header = _read_header(path)
    if header != INTERVAL_HEADER:
        raise MalformedTraceError(f"{path}: expected header {','.join(INTERVAL_HEADER)}, got {','.join(header)}")
    meta = {}
    if os.path.isfile(meta_path(path)):
        with open(meta_path(path), "r", encoding="utf-8") as f:
            meta = json.load(f)
    counts = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for line_no, row in enumerate(csv.DictReader(f), start=2):
            try:
                index, value = int(row["interval_index"]), int(row["num_available"])
            except ValueError as e:
                raise MalformedTraceError(f"{path}:{line_no}: {e}") from e
            if index != len(counts):
                raise MalformedTraceError(f"{path}:{line_no}: interval_index {index}, expected {len(counts)}")
            counts.append(value)

    capacity = capacity or meta.get("capacity") or (max(counts) if counts else None)
    if not capacity:
        raise InputError(f"{path}: capacity unknown; pass it or add a {os.path.basename(meta_path(path))}")
    try:
        return IntervalSeries(
            interval_seconds=interval_seconds or meta.get("interval_seconds", settings.INTERVAL_SECONDS),
            counts=counts,
            capacity=capacity,
            name=meta.get("name", os.path.splitext(os.path.basename(path))[0]),
        )
    except ValidationError as e:
        raise MalformedTraceError(f"{path}: {e}") from e


def write_interval_csv(series: IntervalSeries, path: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(INTERVAL_HEADER)
        for i, n in enumerate(series.counts):
            writer.writerow([i, n])
    with open(meta_path(path), "w", encoding="utf-8") as f:
        json.dump(
            {"interval_seconds": series.interval_seconds, "capacity": series.capacity, "name": series.name},
            f,
            indent=2,
            sort_keys=True,
        )
        f.write("\n")
    logger.info(f"Wrote {len(series.counts)} intervals to {path}")


# ============================================================
# TRACE SPECIFIERS
# ============================================================

def parse_synthetic(text: str, interval_seconds: Optional[float] = None) -> IntervalSeries:
    """`synthetic:seed,capacity,length,preemptions,allocations[,min_mag,max_mag]`"""
    body = text[len(SYNTHETIC_PREFIX):]
    try:
        values = [int(part) for part in body.split(",") if part.strip()]
    except ValueError as e:
        raise InputError(f"bad synthetic trace '{text}': {e}") from e
    if len(values) not in (5, 7):
        raise InputError(f"synthetic trace needs {', '.join(SYNTHETIC_FIELDS)} (last two optional), got '{body}'")
    seed, capacity, length, preemptions, allocations = values[:5]
    magnitude = tuple(values[5:7]) if len(values) == 7 else (1, 4)
    return gen_synthetic(
        seed,
        capacity,
        length,
        preemptions,
        allocations,
        magnitude_range=magnitude,
        interval_seconds=interval_seconds or settings.INTERVAL_SECONDS,
    )


def load_trace(spec: str, interval_seconds: Optional[float] = None, capacity: Optional[int] = None) -> IntervalSeries:
    """Interval CSV, event CSV or `synthetic:...` specifier."""
    if spec.startswith(SYNTHETIC_PREFIX):
        return parse_synthetic(spec, interval_seconds)
    header = _read_header(spec)
    if header == EVENT_HEADER:
        trace = read_event_csv(spec)
        if capacity is None:
            raise InputError(f"{spec}: event traces need an explicit capacity")
        return to_interval_series(
            trace,
            interval_seconds or settings.INTERVAL_SECONDS,
            capacity,
            name=os.path.splitext(os.path.basename(spec))[0],
        )
    return read_interval_csv(spec, interval_seconds, capacity)
