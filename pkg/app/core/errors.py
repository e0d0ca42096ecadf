# app/core/errors.py

from typing import Sequence


class SpotPlanError(Exception):
    """Base class for every domain error raised by the planner and simulator."""


class MalformedTraceError(SpotPlanError):
    pass


class TraceGenerationError(SpotPlanError):
    pass


class ForecastUsageError(SpotPlanError, ValueError):
    pass


class EnumerationCapError(SpotPlanError):
    def __init__(self, count: int, cap: int):
        super().__init__(f"{count} preemption scenarios exceed the enumeration cap {cap}; use sampling")
        self.count = count
        self.cap = cap


class InfeasibleTargetError(SpotPlanError, ValueError):
    pass


class RollbackRequiredError(SpotPlanError):
    """No live migration can recover: every replica of some stage was preempted."""

    def __init__(self, wiped_stages: Sequence[int]):
        super().__init__(f"stages {list(wiped_stages)} lost all replicas; rollback to checkpoint required")
        self.wiped_stages = tuple(wiped_stages)


class InputError(SpotPlanError):
    pass
