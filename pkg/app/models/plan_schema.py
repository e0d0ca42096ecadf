# app/models/plan_schema.py

from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

from app.models.workload_schema import ParallelConfig


class PlanStep(BaseModel):
    """One interval of an optimized plan; config None means training is suspended."""

    model_config = ConfigDict(frozen=True)

    interval_index: int = Field(ge=0)
    config: Optional[ParallelConfig] = None
    predicted_instances: int = Field(default=0, ge=0)
    expected_committed: float = Field(default=0.0, ge=0)
    expected_mig_cost: float = Field(default=0.0, ge=0)

    @property
    def suspended(self) -> bool:
        return self.config is None
