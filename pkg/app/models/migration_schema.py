# app/models/migration_schema.py

from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.workload_schema import ParallelConfig

MigrationKind = Literal["none", "intra_stage", "inter_stage", "pipeline"]
# where the instance filling a slot comes from
MoveSource = Literal["intra", "spare", "surplus", "fresh", "repartition", "checkpoint"]


class Move(BaseModel):
    model_config = ConfigDict(frozen=True)

    instance: int
    from_slot: Optional[Tuple[int, int]] = None
    to_slot: Tuple[int, int]
    source: MoveSource
    # stage parameters must be sent to the instance
    transfer: bool = False


class MigrationPlan(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: MigrationKind
    source: Optional[ParallelConfig] = None
    target: Optional[ParallelConfig] = None
    moves: List[Move] = Field(default_factory=list)
    est_cost: float = Field(default=0.0, ge=0)
    fresh_instances: int = Field(default=0, ge=0)
    # surviving holders of each stage's parameters, keyed by stage
    stage_senders: Dict[int, int] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _kind_consistent(self):
        if self.kind == "none" and (self.moves or self.est_cost != 0):
            raise ValueError("a 'none' plan has no moves and zero cost")
        if self.source is not None and self.target is not None:
            if (self.kind == "pipeline") != (self.source.P != self.target.P):
                raise ValueError(f"pipeline migration iff depth changes ({self.source} -> {self.target})")
        return self

    def transfer_counts(self) -> Dict[int, int]:
        counts: Dict[int, int] = {}
        for move in self.moves:
            if move.transfer:
                counts[move.to_slot[1]] = counts.get(move.to_slot[1], 0) + 1
        return counts
