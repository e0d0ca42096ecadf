# app/services/liveput_optimizer.py

from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence

import numpy as np

from app.core.config import settings
from app.core.errors import InfeasibleTargetError, InputError
from app.core.logger import get_logger
from app.models.forecast_schema import PreemptionHazard
from app.models.plan_schema import PlanStep
from app.models.workload_schema import CostTable, ParallelConfig, WorkloadProfile
from app.services.migration_planner import restart_cost, scenario_costs
from app.services.perf_model import enumerate_configs, feasible, throughput
from app.services.preemption_model import ExpectationMode, ScenarioCache, default_cache, scenario_table

logger = get_logger("liveput_optimizer")

State = Optional[ParallelConfig]


@dataclass(frozen=True)
class PhiRow:
    """phi from one (prev, N_i, N_next) to every candidate next state."""

    targets: List[State]
    values: np.ndarray
    mig_costs: np.ndarray
    index: Dict[State, int]
    # expected commits of prev's own interval that a wiped stage rolls back
    exposure: float = 0.0


class LiveputOptimizer:
    """
    Expected committed samples per interval (phi) and the dynamic program
    over predicted availability that maximizes their sum.

    phi(prev -> next) = Throughput(next) * E_v[max(0, T - T_mig(prev -> next | v))]
    where v ranges over uniform placements of the N_i - N_next preemptions
    on prev's instances. Scenarios where a stage loses every replica reload
    from checkpoint and additionally pay `rollback_penalty`. With
    `strict_conditional` the throughput of a same-depth target is also
    capped by the pipelines that survive v.

    Two planning extensions leave phi itself untouched:
    `charge_lost_commits` subtracts the commits of the previous interval
    that a rollback discards from the DP objective, and a PreemptionHazard
    passed to optimize() mixes a churn scenario (instances preempted and
    replaced within one interval) into every step the forecast calls flat.
    """

    def __init__(
        self,
        profile: WorkloadProfile,
        costs: Optional[CostTable] = None,
        interval_seconds: Optional[float] = None,
        mode: Optional[ExpectationMode] = None,
        rollback_penalty: Optional[float] = None,
        strict_conditional: bool = False,
        cache: Optional[ScenarioCache] = None,
        charge_lost_commits: bool = False,
    ):
        self.profile = profile
        self.costs = costs or CostTable()
        self.interval_seconds = interval_seconds or settings.INTERVAL_SECONDS
        self.mode = mode or ExpectationMode.auto()
        self.rollback_penalty = settings.ROLLBACK_PENALTY if rollback_penalty is None else rollback_penalty
        self.strict_conditional = strict_conditional
        self.cache = cache if cache is not None else default_cache
        self.charge_lost_commits = charge_lost_commits
        self._rows: Dict[tuple, PhiRow] = {}
        self._targets: Dict[int, List[State]] = {}
        self._throughput: Dict[ParallelConfig, float] = {}

    # ------------------------------------------------------------------
    def throughput(self, cfg: State) -> float:
        if cfg is None:
            return 0.0
        value = self._throughput.get(cfg)
        if value is None:
            value = throughput(cfg, self.profile)
            self._throughput[cfg] = value
        return value

    def targets(self, N: int) -> List[State]:
        """DP states for N instances, larger D then smaller P first; [None] when nothing fits."""
        states = self._targets.get(N)
        if states is None:
            configs = sorted(enumerate_configs(N, self.profile), key=lambda c: (-c.D, c.P))
            states = list(configs) if configs else [None]
            self._targets[N] = states
        return states

    def row(self, prev: State, N_i: int, N_next: int, N_minus: Optional[int] = None) -> PhiRow:
        """phi row with N_minus preemptions; defaults to the net drop N_i - N_next."""
        N_minus = max(0, N_i - N_next) if N_minus is None else N_minus
        key = (prev, N_i, N_next, N_minus)
        cached = self._rows.get(key)
        if cached is None:
            cached = self._compute_row(prev, N_i, N_next, N_minus)
            self._rows[key] = cached
        return cached

    def hedged_row(self, prev: State, N_i: int, N_next: int, hazard: Optional[PreemptionHazard]) -> PhiRow:
        """Mix of the forecast's row and a churn row losing hazard.size instances."""
        base = self.row(prev, N_i, N_next)
        if hazard is None or prev is None or hazard.probability == 0:
            return base
        net = max(0, N_i - N_next)
        churn = min(N_i, max(net, hazard.size))
        if churn == net:
            return base
        key = (prev, N_i, N_next, hazard)
        cached = self._rows.get(key)
        if cached is None:
            shock = self.row(prev, N_i, N_next, churn)
            p = hazard.probability
            cached = PhiRow(
                targets=base.targets,
                values=(1 - p) * base.values + p * shock.values,
                mig_costs=(1 - p) * base.mig_costs + p * shock.mig_costs,
                index=base.index,
                exposure=(1 - p) * base.exposure + p * shock.exposure,
            )
            self._rows[key] = cached
        return cached

    def _objective(self, row: PhiRow) -> np.ndarray:
        if self.charge_lost_commits:
            return row.values - row.exposure
        return row.values

    def _compute_row(self, prev: State, N_i: int, N_next: int, N_minus: int) -> PhiRow:
        targets = self.targets(N_next)
        index = {t: k for k, t in enumerate(targets)}
        if targets == [None]:
            exposure = self._exposure(prev, N_i, N_minus) if prev is not None else 0.0
            return PhiRow(targets, np.zeros(1), np.zeros(1), index, exposure)

        T = self.interval_seconds
        w = self.profile
        thr = np.array([self.throughput(t) for t in targets])

        if prev is None:
            mig = np.array([restart_cost(t, w, self.costs) for t in targets])
            values = thr * np.maximum(0.0, T - mig)
            return PhiRow(targets, values, mig, index)

        if prev.instances > N_i:
            raise InfeasibleTargetError(f"{prev} does not fit in {N_i} instances")
        if N_minus > N_i:
            raise InputError(f"{N_minus} preemptions out of {N_i} instances")
        table = scenario_table(N_i, N_minus, prev.D, prev.P, self.mode, self.cache)
        mig, rollback, wiped = scenario_costs(prev, targets, table, w, self.costs)
        spent = np.where(wiped[None, :], rollback + self.rollback_penalty, mig)
        effective = np.maximum(0.0, T - spent)

        rate = np.broadcast_to(thr[:, None], effective.shape)
        if self.strict_conditional:
            rate = rate.copy()
            by_width = np.array([0.0] + [self.throughput(ParallelConfig(D=d, P=prev.P)) for d in range(1, prev.D + 1)])
            for k, t in enumerate(targets):
                if t.P == prev.P:
                    alive = np.minimum(t.D, table.min_survivors)
                    rate[k] = np.where(alive >= t.D, thr[k], by_width[alive])

        values = (rate * effective) @ table.counts / table.total
        mig_costs = spent @ table.counts / table.total
        return PhiRow(targets, values, mig_costs, index, self._exposure(prev, N_i, N_minus))

    def _exposure(self, prev: ParallelConfig, N_i: int, N_minus: int) -> float:
        table = scenario_table(N_i, N_minus, prev.D, prev.P, self.mode, self.cache)
        return table.expectation(table.min_survivors == 0) * self.throughput(prev) * self.interval_seconds

    # ------------------------------------------------------------------
    def phi(self, prev: State, nxt: State, N_i: int, N_next: int) -> float:
        """Expected committed samples in the interval that starts by moving prev -> nxt."""
        if nxt is None:
            return 0.0
        if not feasible(nxt, self.profile):
            return 0.0
        if nxt.instances > N_next:
            raise InfeasibleTargetError(f"{nxt} does not fit in {N_next} instances")
        row = self.row(prev, N_i, N_next)
        return float(row.values[row.index[nxt]])

    def plan_value(self, current: State, configs: Sequence[State], N_seq: Sequence[int]) -> float:
        """Sum of phi along an explicit configuration sequence, less lost commits when those are charged."""
        if len(configs) != len(N_seq) - 1:
            raise InputError(f"{len(configs)} configs for {len(N_seq) - 1} intervals")
        total = 0.0
        prev = current
        for j, cfg in enumerate(configs):
            total += self.phi(prev, cfg, N_seq[j], N_seq[j + 1])
            if self.charge_lost_commits:
                total -= self.row(prev, N_seq[j], N_seq[j + 1]).exposure
            prev = cfg
        return total

    def optimize(
        self,
        current: State,
        N_seq: Sequence[int],
        start_index: int = 0,
        hazard: Optional[PreemptionHazard] = None,
    ) -> List[PlanStep]:
        """
        Liveput DP: F(j+1, c') = max_c F(j, c) + phi(c, c', N_j, N_{j+1}),
        F(0, current) = 0. Ties go to lower cumulative migration cost, then
        larger D, then smaller P.
        """
        if len(N_seq) < 2:
            raise InputError("N_seq needs the current count plus at least one predicted interval")
        if current is not None and current.instances > N_seq[0]:
            raise InfeasibleTargetError(f"current config {current} does not fit in {N_seq[0]} instances")

        states: List[State] = [current]
        value = np.zeros(1)
        spent = np.zeros(1)
        history = []
        for j in range(len(N_seq) - 1):
            nxt = self.targets(N_seq[j + 1])
            best_value = np.full(len(nxt), -np.inf)
            best_spent = np.full(len(nxt), np.inf)
            best_prev = np.zeros(len(nxt), dtype=int)
            for k, state in enumerate(states):
                row = self.hedged_row(state, N_seq[j], N_seq[j + 1], hazard)
                cand_value = value[k] + self._objective(row)
                cand_spent = spent[k] + row.mig_costs
                better = (cand_value > best_value) | ((cand_value == best_value) & (cand_spent < best_spent))
                best_value = np.where(better, cand_value, best_value)
                best_spent = np.where(better, cand_spent, best_spent)
                best_prev = np.where(better, k, best_prev)
            history.append((states, best_prev))
            states, value, spent = nxt, best_value, best_spent

        # states are ordered larger D then smaller P, so the first maximum wins ties
        end = 0
        for k in range(1, len(states)):
            if value[k] > value[end] or (value[k] == value[end] and spent[k] < spent[end]):
                end = k

        path = [end]
        for _, best_prev in reversed(history[1:]):
            path.append(int(best_prev[path[-1]]))
        path.reverse()

        steps = []
        prev = current
        for j, k in enumerate(path):
            cfg = (history[j + 1][0] if j + 1 < len(history) else states)[k]
            row = self.hedged_row(prev, N_seq[j], N_seq[j + 1], hazard)
            pos = row.index[cfg]
            steps.append(PlanStep(
                interval_index=start_index + j + 1,
                config=cfg,
                predicted_instances=N_seq[j + 1],
                expected_committed=float(row.values[pos]),
                expected_mig_cost=float(row.mig_costs[pos]),
            ))
            prev = cfg
        logger.debug(
            f"DP over {len(N_seq) - 1} intervals from {current}: value {value[end]:.1f}, "
            f"first step {steps[0].config}"
        )
        return steps

    def reactive(self, N_now: int) -> State:
        return reactive_plan(N_now, self.profile)


# ============================================================
# FUNCTIONAL API
# ============================================================

@lru_cache(maxsize=64)
def get_optimizer(
    w: WorkloadProfile,
    costs: CostTable,
    interval_seconds: float,
    mode: ExpectationMode,
    rollback_penalty: float,
    strict_conditional: bool,
) -> LiveputOptimizer:
    return LiveputOptimizer(w, costs, interval_seconds, mode, rollback_penalty, strict_conditional)


def _shared(w, costs, mode, interval_seconds, rollback_penalty, strict_conditional) -> LiveputOptimizer:
    return get_optimizer(
        w,
        costs or CostTable(),
        interval_seconds or settings.INTERVAL_SECONDS,
        mode or ExpectationMode.auto(),
        settings.ROLLBACK_PENALTY if rollback_penalty is None else rollback_penalty,
        strict_conditional,
    )


def phi(
    prev: State,
    nxt: State,
    N_i: int,
    N_next: int,
    w: WorkloadProfile,
    costs: Optional[CostTable] = None,
    mode: Optional[ExpectationMode] = None,
    interval_seconds: Optional[float] = None,
    rollback_penalty: Optional[float] = None,
    strict_conditional: bool = False,
) -> float:
    return _shared(w, costs, mode, interval_seconds, rollback_penalty, strict_conditional).phi(prev, nxt, N_i, N_next)


def dp_optimize(
    current: State,
    N_seq: Sequence[int],
    w: WorkloadProfile,
    costs: Optional[CostTable] = None,
    mode: Optional[ExpectationMode] = None,
    interval_seconds: Optional[float] = None,
    rollback_penalty: Optional[float] = None,
    strict_conditional: bool = False,
) -> List[PlanStep]:
    optimizer = _shared(w, costs, mode, interval_seconds, rollback_penalty, strict_conditional)
    return optimizer.optimize(current, N_seq)


def plan_value(
    current: State,
    configs: Sequence[State],
    N_seq: Sequence[int],
    w: WorkloadProfile,
    costs: Optional[CostTable] = None,
    mode: Optional[ExpectationMode] = None,
    interval_seconds: Optional[float] = None,
    rollback_penalty: Optional[float] = None,
    strict_conditional: bool = False,
) -> float:
    optimizer = _shared(w, costs, mode, interval_seconds, rollback_penalty, strict_conditional)
    return optimizer.plan_value(current, configs, N_seq)


def reactive_plan(N_now: int, w: WorkloadProfile) -> State:
    """Throughput-maximizing config for the instances at hand; None when nothing fits."""
    best = None
    best_key = None
    for cfg in enumerate_configs(N_now, w):
        key = (throughput(cfg, w), cfg.D, -cfg.P)
        if best_key is None or key > best_key:
            best, best_key = cfg, key
    return best
