# app/services/trace_service.py

import math
from typing import List, Optional, Tuple

import numpy as np

from app.core.errors import MalformedTraceError, TraceGenerationError
from app.core.logger import get_logger
from app.models.trace_schema import (
    HIGH_AVAILABILITY_RATIO,
    EventTrace,
    IntervalSeries,
    TraceMetrics,
)

logger = get_logger("trace_service")


# ============================================================
# INGEST
# ============================================================

def to_interval_series(trace: EventTrace, interval_seconds: float, capacity: int, name: str = "trace") -> IntervalSeries:
    """
    Fold raw preemption/allocation events onto interval starts.

    N_i is the number of live instances once every event with a timestamp
    inside interval i has been applied. Events sharing a timestamp apply
    preemptions before allocations.
    """
    if interval_seconds <= 0:
        raise MalformedTraceError(f"interval_seconds must be positive, got {interval_seconds}")
    if not trace.events:
        return IntervalSeries(interval_seconds=interval_seconds, counts=[], capacity=capacity, name=name)

    # stable sort: same-timestamp preemptions first, chronological order otherwise
    ordered = sorted(trace.events, key=lambda e: (e.timestamp_s, 0 if e.kind == "preempt" else 1))
    num_intervals = int(ordered[-1].timestamp_s // interval_seconds) + 1

    alive = set()
    counts: List[int] = []
    cursor = 0
    for i in range(num_intervals):
        end = (i + 1) * interval_seconds
        while cursor < len(ordered) and ordered[cursor].timestamp_s < end:
            event = ordered[cursor]
            if event.kind == "preempt":
                if event.instance_id not in alive:
                    raise MalformedTraceError(
                        f"preempt at t={event.timestamp_s}s references unknown instance '{event.instance_id}'"
                    )
                alive.remove(event.instance_id)
            else:
                if event.instance_id in alive:
                    raise MalformedTraceError(
                        f"allocate at t={event.timestamp_s}s for instance '{event.instance_id}' already present"
                    )
                alive.add(event.instance_id)
            cursor += 1
        if len(alive) > capacity:
            raise MalformedTraceError(f"interval {i} has {len(alive)} instances, above capacity {capacity}")
        counts.append(len(alive))

    logger.debug(f"Folded {len(ordered)} events into {num_intervals} intervals of {interval_seconds}s")
    return IntervalSeries(interval_seconds=interval_seconds, counts=counts, capacity=capacity, name=name)


# ============================================================
# DERIVED QUANTITIES
# ============================================================

def derive_deltas(series: IntervalSeries) -> List[Tuple[int, int]]:
    """Per-interval (N+, N-); the first interval counts every instance as allocated."""
    if not series.counts:
        raise MalformedTraceError("cannot derive deltas of an empty series")
    counts = series.counts
    deltas = [(counts[0], 0)]
    for prev, cur in zip(counts, counts[1:]):
        deltas.append((max(0, cur - prev), max(0, prev - cur)))
    return deltas


def segment_metrics(series: IntervalSeries) -> TraceMetrics:
    """Availability and preemption intensity of a trace segment."""
    deltas = derive_deltas(series)
    preemptions = sum(1 for plus, minus in deltas[1:] if minus > 0)
    allocations = sum(1 for plus, minus in deltas[1:] if plus > 0)
    avg = float(np.mean(series.counts))
    klass = "high" if avg / series.capacity > HIGH_AVAILABILITY_RATIO else "low"
    return TraceMetrics(
        availability_class=klass,
        preemption_events=preemptions,
        allocation_events=allocations,
        avg_instances=avg,
    )


# ============================================================
# SYNTHETIC TRACES
# ============================================================

def _feasible_with_unit_steps(level: int, kinds: List[str], capacity: int) -> bool:
    for kind in kinds:
        level += -1 if kind == "preempt" else 1
        if level < 0 or level > capacity:
            return False
    return True


def gen_synthetic(
    seed: int,
    capacity: int,
    length: int,
    preemption_events: int,
    allocation_events: int,
    magnitude_range: Tuple[int, int] = (1, 4),
    start: Optional[int] = None,
    interval_seconds: float = 60.0,
    name: Optional[str] = None,
) -> IntervalSeries:
    """
    Seeded availability trace with exactly the requested number of
    preemption and allocation events (intervals whose count drops/rises).
    """
    lo, hi = magnitude_range
    start = capacity if start is None else start
    total_events = preemption_events + allocation_events
    if length < 1:
        raise TraceGenerationError("length must be at least one interval")
    if preemption_events < 0 or allocation_events < 0:
        raise TraceGenerationError("event counts must be non-negative")
    if total_events > length - 1:
        raise TraceGenerationError(f"{total_events} events do not fit in {length} intervals")
    if lo < 1 or hi < lo:
        raise TraceGenerationError(f"invalid magnitude range {magnitude_range}")
    if not 0 <= start <= capacity:
        raise TraceGenerationError(f"start level {start} outside [0, {capacity}]")

    rng = np.random.default_rng(seed)
    kinds = ["preempt"] * preemption_events + ["allocate"] * allocation_events
    for _ in range(1000):
        order = [kinds[k] for k in rng.permutation(len(kinds))]
        if _feasible_with_unit_steps(start, order, capacity):
            break
    else:
        raise TraceGenerationError(
            f"no feasible ordering of {preemption_events} preemptions / {allocation_events} allocations "
            f"from level {start} within capacity {capacity}"
        )

    positions = sorted(rng.choice(np.arange(1, length), size=total_events, replace=False).tolist())
    counts = [start] * length
    level = start
    event_at = dict(zip(positions, order))
    for i in range(1, length):
        kind = event_at.get(i)
        if kind is not None:
            remaining = [event_at[p] for p in positions if p > i]
            sign = -1 if kind == "preempt" else 1
            room = level if kind == "preempt" else capacity - level
            magnitude = min(int(rng.integers(lo, hi + 1)), room)
            # shrink until the rest of the schedule stays feasible with unit steps
            while magnitude > 1 and not _feasible_with_unit_steps(level + sign * magnitude, remaining, capacity):
                magnitude -= 1
            level += sign * magnitude
        counts[i] = level

    logger.debug(
        f"Generated synthetic trace seed={seed}: {preemption_events} preemptions, "
        f"{allocation_events} allocations over {length} intervals"
    )
    return IntervalSeries(
        interval_seconds=interval_seconds,
        counts=counts,
        capacity=capacity,
        name=name or f"synthetic_s{seed}_p{preemption_events}_a{allocation_events}",
    )


def gen_multigpu(series: IntervalSeries, gpus_per_instance: int) -> IntervalSeries:
    """
    Group every `gpus_per_instance` single-GPU events into one multi-GPU
    instance: allocated at the first allocation of its group, preempted at
    the last preemption of its group. Counts become instance counts.
    """
    if gpus_per_instance < 1:
        raise TraceGenerationError("gpus_per_instance must be >= 1")
    g = gpus_per_instance
    allocated = 0
    preempted = 0
    counts = []
    for plus, minus in derive_deltas(series) if series.counts else []:
        allocated += plus
        preempted += minus
        counts.append(-(-allocated // g) - preempted // g)
    capacity = max([math.ceil(series.capacity / g)] + counts)
    return IntervalSeries(
        interval_seconds=series.interval_seconds,
        counts=counts,
        capacity=capacity,
        name=f"{series.name}_x{g}gpu",
    )


def gpu_hours(series: IntervalSeries, gpus_per_instance: int = 1) -> float:
    return series.instance_seconds() * gpus_per_instance / 3600.0
