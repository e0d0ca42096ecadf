# app/models/trace_schema.py

from typing import List, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.config import settings

HIGH_AVAILABILITY_RATIO = 0.70


class IntervalSeries(BaseModel):
    """Instances available per fixed-length interval, N_0..N_{K-1}."""

    model_config = ConfigDict(frozen=True)

    interval_seconds: float = Field(default=settings.INTERVAL_SECONDS, gt=0)
    counts: List[int] = Field(default_factory=list)
    capacity: int = Field(gt=0)
    name: str = "trace"

    @model_validator(mode="after")
    def _counts_within_capacity(self):
        for i, n in enumerate(self.counts):
            if n < 0 or n > self.capacity:
                raise ValueError(f"counts[{i}]={n} outside [0, {self.capacity}]")
        return self

    def __len__(self) -> int:
        return len(self.counts)

    def instance_seconds(self) -> float:
        return float(sum(self.counts)) * self.interval_seconds


class TraceEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    timestamp_s: float = Field(ge=0)
    kind: Literal["preempt", "allocate"]
    instance_id: str


class EventTrace(BaseModel):
    model_config = ConfigDict(frozen=True)

    events: List[TraceEvent] = Field(default_factory=list)

    @field_validator("events")
    @classmethod
    def _non_decreasing(cls, events: List[TraceEvent]) -> List[TraceEvent]:
        for prev, cur in zip(events, events[1:]):
            if cur.timestamp_s < prev.timestamp_s:
                raise ValueError(
                    f"event timestamps must be non-decreasing ({cur.timestamp_s} after {prev.timestamp_s})"
                )
        return events


class TraceMetrics(BaseModel):
    model_config = ConfigDict(frozen=True)

    availability_class: Literal["high", "low"]
    preemption_events: int = Field(ge=0)
    allocation_events: int = Field(ge=0)
    avg_instances: float = Field(ge=0)
