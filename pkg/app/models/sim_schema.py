# app/models/sim_schema.py

from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.config import settings
from app.models.forecast_schema import ForecastMethod

PolicyKind = Literal["parcae", "parcae_ideal", "reactive", "checkpoint", "redundancy"]
POLICY_KINDS = ("parcae", "parcae_ideal", "reactive", "checkpoint", "redundancy")

LEDGER_CATEGORIES = ("effective", "migration", "checkpoint_overhead", "wasted_rollback", "idle")


class EpochRecord(BaseModel):
    """Commit-count range over the sample indices of one finished epoch."""

    model_config = ConfigDict(frozen=True)

    epoch: int
    min_commits: int
    max_commits: int

    @property
    def exactly_once(self) -> bool:
        return self.min_commits == 1 and self.max_commits == 1


class Policy(BaseModel):
    """How the simulated job reacts to availability changes."""

    model_config = ConfigDict(frozen=True)

    kind: PolicyKind
    name: Optional[str] = None

    # parcae / parcae_ideal
    lookahead: int = Field(default=settings.LOOKAHEAD_LEN, ge=1)
    history: int = Field(default=settings.HISTORY_LEN, ge=3)
    predictor_method: ForecastMethod = "arima"
    replan_every: int = Field(default=1, ge=1)
    expectation: Literal["auto", "exact", "mc"] = "auto"
    mc_trials: int = Field(default=settings.MC_TRIALS, ge=1)
    rollback_penalty: float = Field(default=settings.ROLLBACK_PENALTY, ge=0)
    strict_conditional: bool = False
    # DP also charges commits a rollback discards from the interval before it
    charge_lost_commits: bool = True
    # parcae only: plan flat forecasts against the preemption rate seen in the history window
    hedge_preemptions: bool = True

    # checkpoint
    period: int = Field(default=10, ge=1, description="intervals between checkpoints")
    save_cost: float = Field(default=10.0, ge=0)
    restore_cost: float = Field(default=settings.ROLLBACK_PENALTY, ge=0)
    restart_cost: float = Field(default=60.0, ge=0)

    # redundancy
    fixed_P: Optional[int] = Field(default=None, ge=1)
    slowdown_factor: float = Field(default=0.6, gt=0, le=1)

    @property
    def label(self) -> str:
        return self.name or self.kind

    @classmethod
    def parse(cls, text: str, **overrides) -> "Policy":
        """`parcae`, `checkpoint`, ... optionally with `:key=value` overrides, e.g. `redundancy:fixed_P=16`."""
        kind, _, rest = text.strip().partition(":")
        fields = dict(overrides)
        for item in filter(None, rest.split(";")):
            key, _, value = item.partition("=")
            fields[key.strip()] = value.strip()
        return cls(kind=kind, **fields)


class IntervalLog(BaseModel):
    """One simulated interval. Ledger columns are instance-seconds charged in this interval,
    including reclassifications of earlier effective time after a rollback."""

    interval: int
    N: int
    preempted: int = 0
    allocated: int = 0
    D: int = 0
    P: int = 0
    throughput: float = 0.0
    commits: int = 0
    migration_kind: str = "none"
    migration_seconds: float = 0.0
    rolled_back_samples: int = 0
    effective: float = 0.0
    migration: float = 0.0
    checkpoint_overhead: float = 0.0
    wasted_rollback: float = 0.0
    idle: float = 0.0


class SimReport(BaseModel):
    trace_name: str
    policy: str
    profile: str
    seed: int
    interval_seconds: float
    intervals: List[IntervalLog] = Field(default_factory=list)
    committed_samples: int = 0
    wall_time_s: float = 0.0
    instance_seconds: float = 0.0
    gpu_seconds: Dict[str, float] = Field(default_factory=dict)
    spot_cost: float = 0.0
    ondemand_cost: float = 0.0
    # None when nothing was committed
    per_sample_cost: Optional[float] = None
    samples_per_gpu_hour: float = 0.0
    suspended_intervals: int = 0
    rollbacks: int = 0
    epochs: List[EpochRecord] = Field(default_factory=list)

    @model_validator(mode="after")
    def _all_categories(self):
        for category in LEDGER_CATEGORIES:
            self.gpu_seconds.setdefault(category, 0.0)
        return self

    @property
    def gpu_hours(self) -> Dict[str, float]:
        return {k: v / 3600.0 for k, v in self.gpu_seconds.items()}

    @property
    def exactly_once(self) -> bool:
        return all(record.exactly_once for record in self.epochs)
