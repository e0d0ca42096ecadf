# app/models/workload_schema.py

from typing import Dict, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ParallelConfig(BaseModel):
    """D data-parallel pipelines, each P stages deep."""

    model_config = ConfigDict(frozen=True)

    D: int = Field(ge=1)
    P: int = Field(ge=1)

    @property
    def instances(self) -> int:
        return self.D * self.P

    def __str__(self) -> str:
        return f"{self.D}x{self.P}"


class WorkloadProfile(BaseModel):
    """Per-model cost parameters driving the throughput and migration models."""

    model_config = ConfigDict(frozen=True)

    name: str = "custom"
    total_compute_per_microbatch: float = Field(ge=0, description="seconds, fwd+bwd over all layers")
    param_bytes_total: float = Field(ge=0)
    activation_bytes_per_boundary: float = Field(default=0.0, ge=0)
    minibatch_size: int = Field(ge=1)
    microbatch_size: int = Field(ge=1)
    device_memory: float = Field(gt=0)
    memory_fixed_bytes: float = Field(default=0.0, ge=0)
    memory_model_bytes: float = Field(default=0.0, ge=0, description="split evenly across P stages")
    alpha: float = Field(default=0.0, ge=0, description="seconds per message")
    beta: float = Field(default=0.0, ge=0, description="seconds per byte")
    spot_price: float = Field(default=0.0, ge=0, description="per instance-hour")
    ondemand_price: float = Field(default=0.0, ge=0, description="per instance-hour")
    num_layers: Optional[int] = Field(default=None, ge=1)
    pipeline_throughput: Optional[Dict[int, float]] = None

    @field_validator("pipeline_throughput")
    @classmethod
    def _non_negative_table(cls, table):
        if table is not None:
            for depth, value in table.items():
                if depth < 1 or value < 0:
                    raise ValueError(f"pipeline_throughput[{depth}]={value} is invalid")
        return table

    @model_validator(mode="after")
    def _microbatch_divides(self):
        if self.minibatch_size % self.microbatch_size != 0:
            raise ValueError(
                f"microbatch_size {self.microbatch_size} must divide minibatch_size {self.minibatch_size}"
            )
        return self

    def memory_per_stage(self, P: int) -> float:
        return self.memory_fixed_bytes + self.memory_model_bytes / P

    def __hash__(self) -> int:
        return hash(self.model_dump_json())


class CostTable(BaseModel):
    """Migration cost terms in seconds (defaults are midpoints of the profiled ranges)."""

    model_config = ConfigDict(frozen=True)

    start_process: float = Field(default=1.0, ge=0)
    rendezvous: float = Field(default=5.0, ge=0)
    cuda_context: float = Field(default=5.0, ge=0)
    load_data: float = Field(default=5.0, ge=0)
    build_model: float = Field(default=5.0, ge=0)
    update_comm_groups: float = Field(default=10.0, ge=0)
    comm_groups_per_instance: float = Field(default=0.0, ge=0)

    @property
    def fixed_terms(self) -> float:
        return self.start_process + self.rendezvous + self.cuda_context + self.load_data

    def reconfigure_terms(self, instances: int) -> float:
        return self.build_model + self.update_comm_groups + self.comm_groups_per_instance * instances

    @classmethod
    def zero(cls) -> "CostTable":
        return cls(start_process=0, rendezvous=0, cuda_context=0, load_data=0, build_model=0, update_comm_groups=0)
