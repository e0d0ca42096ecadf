# app/models/experiment_schema.py

import os
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.models.sim_schema import Policy
from app.models.workload_schema import CostTable


def parse_seeds(text: str) -> List[int]:
    """`3`, `1,4,9` or an inclusive range `1..5`."""
    seeds: List[int] = []
    for part in filter(None, (p.strip() for p in str(text).split(","))):
        if ".." in part:
            lo, _, hi = part.partition("..")
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


def split_list(text: str) -> List[str]:
    return [p.strip() for p in str(text).split(",") if p.strip()]


class ExperimentSpec(BaseModel):
    """One reproducible experiment: a trace, a workload and the policies and seeds to replay."""

    model_config = ConfigDict(frozen=True)

    trace: str
    profile: str = "gpt2"
    policies: List[str] = Field(default_factory=lambda: ["parcae", "reactive"])
    seeds: List[int] = Field(default_factory=lambda: [0])
    out: str = "results"
    interval_seconds: Optional[float] = Field(default=None, gt=0)
    capacity: Optional[int] = Field(default=None, gt=0)
    lookahead: Optional[int] = Field(default=None, ge=1)
    history: Optional[int] = Field(default=None, ge=3)
    mc_trials: Optional[int] = Field(default=None, ge=1)
    epoch_size: Optional[int] = Field(default=None, ge=1)
    costs: CostTable = Field(default_factory=CostTable)

    @field_validator("policies", mode="before")
    @classmethod
    def _policy_list(cls, value):
        return split_list(value) if isinstance(value, str) else value

    @field_validator("seeds", mode="before")
    @classmethod
    def _seed_list(cls, value):
        if isinstance(value, (str, int)):
            return parse_seeds(value)
        return value

    @model_validator(mode="after")
    def _check(self):
        if not self.policies:
            raise ValueError("policies: at least one policy is required")
        if not self.seeds:
            raise ValueError("seeds: at least one seed is required")
        if not self.trace.startswith("synthetic:") and not os.path.isfile(self.trace):
            raise ValueError(f"trace: file not found: {self.trace}")
        for text in self.policies:
            self.build_policy(text)
        return self

    def build_policy(self, text: str) -> Policy:
        overrides = {}
        if self.lookahead is not None:
            overrides["lookahead"] = self.lookahead
        if self.history is not None:
            overrides["history"] = self.history
        if self.mc_trials is not None:
            overrides["mc_trials"] = self.mc_trials
        return Policy.parse(text, **overrides)

    def build_policies(self) -> List[Policy]:
        return [self.build_policy(text) for text in self.policies]
