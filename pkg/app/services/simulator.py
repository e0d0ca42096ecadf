# app/services/simulator.py

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from app.core.errors import InputError
from app.core.logger import get_logger
from app.models.forecast_schema import ForecastConfig, PreemptionHazard
from app.models.sim_schema import LEDGER_CATEGORIES, IntervalLog, Policy, SimReport
from app.models.trace_schema import IntervalSeries
from app.models.workload_schema import CostTable, ParallelConfig, WorkloadProfile
from app.services.liveput_optimizer import LiveputOptimizer, reactive_plan
from app.services.migration_planner import plan_migration, plan_restart, rollback_cost
from app.services.perf_model import feasible, feasible_depths, throughput
from app.services.predictor_service import predict, preemption_hazard
from app.services.preemption_model import ExpectationMode, Topology, stage_survivors
from app.services.profile_catalog import redundancy_config
from app.services.sample_manager import SampleManager

logger = get_logger("simulator")


@dataclass
class SimState:
    interval: int = 0
    cfg: Optional[ParallelConfig] = None
    manager: SampleManager = field(default_factory=SampleManager)
    ckpt_interval: int = 0
    # effective instance-seconds and commits since the last checkpoint mark
    effective_since_mark: float = 0.0
    commits_since_mark: int = 0
    plan: Dict[int, Optional[ParallelConfig]] = field(default_factory=dict)
    rollbacks: int = 0
    suspended: int = 0


@dataclass
class _Charges:
    """Seconds of the interval the running config spends not training, by ledger category."""

    migration: float = 0.0
    wasted: float = 0.0
    overhead: float = 0.0


# ============================================================
# CONFIG ADAPTATION
# ============================================================

def adjust_config(planned: Optional[ParallelConfig], N_actual: int, w: WorkloadProfile) -> Optional[ParallelConfig]:
    """
    Fit a planned config to the instances that actually showed up: keep it if
    it fits, else drop data-parallel pipelines, else fall back to a single
    pipeline at the deepest feasible depth. None means suspended.
    """
    if planned is None:
        return None
    if N_actual >= planned.instances:
        return planned
    D = N_actual // planned.P
    if D >= 1:
        return ParallelConfig(D=D, P=planned.P)
    depths = feasible_depths(w, N_actual)
    if not depths:
        return None
    return ParallelConfig(D=1, P=depths[-1])


def _placement(seed: int, interval: int, N_prev: int, N_minus: int) -> np.ndarray:
    """Which of the previous interval's instances get preempted, uniformly at random."""
    rng = np.random.default_rng([seed, interval])
    v = np.zeros(N_prev, dtype=bool)
    v[rng.choice(N_prev, size=N_minus, replace=False)] = True
    return v


# ============================================================
# SIMULATOR
# ============================================================

class Simulator:
    """Replays one policy over an availability trace, interval by interval."""

    def __init__(
        self,
        series: IntervalSeries,
        w: WorkloadProfile,
        policy: Policy,
        seed: int = 0,
        costs: Optional[CostTable] = None,
        epoch_size: Optional[int] = None,
    ):
        if not series.counts:
            raise InputError("cannot simulate an empty trace")
        self.series = series
        self.w = w
        self.policy = policy
        self.seed = seed
        self.costs = costs or CostTable()
        self.T = series.interval_seconds
        self.state = SimState(manager=SampleManager(epoch_size))
        self.logs: List[IntervalLog] = []
        self.optimizer: Optional[LiveputOptimizer] = None
        if policy.kind in ("parcae", "parcae_ideal"):
            mode = ExpectationMode(kind=policy.expectation, trials=policy.mc_trials)
            self.optimizer = LiveputOptimizer(
                w,
                self.costs,
                self.T,
                mode,
                policy.rollback_penalty,
                policy.strict_conditional,
                charge_lost_commits=policy.charge_lost_commits,
            )
        if policy.kind == "redundancy":
            self.fixed_P = policy.fixed_P or redundancy_config(w).P
            if not feasible(ParallelConfig(D=1, P=self.fixed_P), w):
                raise InputError(f"redundancy depth {self.fixed_P} is infeasible for profile '{w.name}'")

    # ------------------------------------------------------------------
    # ledger helpers
    def _mark(self) -> None:
        self.state.manager.checkpoint()
        self.state.ckpt_interval = self.state.interval
        self.state.effective_since_mark = 0.0
        self.state.commits_since_mark = 0

    def _rollback(self, log: IntervalLog) -> None:
        """Return commits since the last mark to pending and reclassify the time that produced them."""
        state = self.state
        rolled = state.manager.rollback()
        fraction = rolled / state.commits_since_mark if state.commits_since_mark else 1.0
        moved = state.effective_since_mark * min(1.0, fraction)
        log.effective -= moved
        log.wasted_rollback += moved
        log.rolled_back_samples = rolled
        state.effective_since_mark = 0.0
        state.commits_since_mark = 0
        state.rollbacks += 1
        logger.warning(f"Interval {state.interval}: rollback to interval {state.ckpt_interval}, {rolled} samples lost")

    def _train(self, log: IntervalLog, cfg: Optional[ParallelConfig], charges: _Charges, rate: float, useful: float = 1.0) -> None:
        """Charge the interval's instance-seconds and commit whole mini-batches."""
        N = log.N
        if cfg is None:
            log.idle += N * self.T
            self.state.suspended += 1
            return
        busy = cfg.instances
        remaining = self.T
        migration = min(charges.migration, remaining)
        remaining -= migration
        wasted = min(charges.wasted, remaining)
        remaining -= wasted
        overhead = min(charges.overhead, remaining)
        remaining -= overhead

        log.migration += migration * busy
        log.wasted_rollback += wasted * busy
        log.checkpoint_overhead += overhead * busy
        log.effective += remaining * busy * useful
        log.checkpoint_overhead += remaining * busy * (1.0 - useful)
        log.idle += (N - busy) * self.T
        log.migration_seconds = migration + wasted

        B = self.w.minibatch_size
        commits = int(math.floor(rate * remaining / B)) * B
        self.state.manager.train(commits)
        self.state.effective_since_mark += remaining * busy * useful
        self.state.commits_since_mark += commits
        log.D, log.P = cfg.D, cfg.P
        log.throughput = rate
        log.commits = commits

    # ------------------------------------------------------------------
    # policy steps
    def _initial(self, N: int) -> Optional[ParallelConfig]:
        if self.policy.kind == "redundancy":
            return self._redundancy_target(N)
        return reactive_plan(N, self.w)

    def _live_step(self, log: IntervalLog, N_prev: int, planned: Optional[ParallelConfig]) -> None:
        """parcae, parcae_ideal and reactive: live migration with in-memory checkpoints one interval old."""
        old = self.state.cfg
        N = log.N
        target = adjust_config(planned, N, self.w) if planned is not None else reactive_plan(N, self.w)
        charges = _Charges()

        v = None
        wiped = False
        if old is not None and log.preempted > 0:
            v = _placement(self.seed, log.interval, N_prev, log.preempted)
            topo = Topology.for_config(old, N_prev)
            wiped = bool((stage_survivors(topo, v)[0] == 0).any())

        if wiped:
            # no surviving replica of some stage: in-memory state since the last mark is gone
            self._rollback(log)

        if target is None:
            # the grace period flushes state before suspending
            log.migration_kind = "suspended"
            self.state.manager.abort()
        elif old is None:
            charges.migration = plan_restart(target, self.w, self.costs, available=N).est_cost
            log.migration_kind = "restart"
        elif wiped:
            alive = N_prev - log.preempted
            charges.migration = rollback_cost(target, alive, self.w, self.costs)
            charges.wasted = self.policy.rollback_penalty
            log.migration_kind = "rollback"
        else:
            topo = Topology.for_config(old, N_prev)
            v = v if v is not None else np.zeros(N_prev, dtype=bool)
            plan = plan_migration(topo, v, target, self.w, self.costs, available=N)
            charges.migration = plan.est_cost
            log.migration_kind = plan.kind

        self.state.cfg = target
        self._mark()
        self._train(log, target, charges, throughput(target, self.w) if target else 0.0)

    def checkpoint_policy_step(self, log: IntervalLog) -> None:
        """Checkpoint/restart: throughput-optimal config, any preemption restarts from the last save."""
        old = self.state.cfg
        target = reactive_plan(log.N, self.w)
        charges = _Charges()
        log.migration_kind = "none"

        if old is not None and log.preempted > 0:
            self._rollback(log)
            log.migration_kind = "rollback"
            if target is not None:
                charges.wasted = self.policy.restore_cost
                charges.migration = self.policy.restart_cost
        elif target is not None and target != old:
            charges.migration = self.policy.restart_cost
            log.migration_kind = "restart"

        if target is None:
            log.migration_kind = "suspended"
        elif self.state.interval % self.policy.period == 0:
            self._mark()
            charges.overhead = self.policy.save_cost

        self.state.cfg = target
        self._train(log, target, charges, throughput(target, self.w) if target else 0.0)

    def _redundancy_target(self, N: int) -> Optional[ParallelConfig]:
        if N < self.fixed_P:
            return None
        return ParallelConfig(D=N // self.fixed_P, P=self.fixed_P)

    def redundancy_policy_step(self, log: IntervalLog) -> None:
        """Redundant computation: fixed depth, preemptions absorbed for free, every step slowed down."""
        old = self.state.cfg
        target = self._redundancy_target(log.N)
        charges = _Charges()
        log.migration_kind = "none"
        if target is None:
            log.migration_kind = "suspended"
        elif old is None:
            charges.migration = self.policy.restart_cost
            log.migration_kind = "restart"
        self.state.cfg = target
        self._mark()
        slowdown = self.policy.slowdown_factor
        rate = throughput(target, self.w) * slowdown if target else 0.0
        self._train(log, target, charges, rate, useful=slowdown)

    # ------------------------------------------------------------------
    # planning
    def _history(self, i: int) -> List[int]:
        H = self.policy.history
        history = self.series.counts[max(0, i - H + 1): i + 1]
        return [history[0]] * (H - len(history)) + history

    def _future(self, i: int) -> List[int]:
        counts = self.series.counts
        I = self.policy.lookahead
        if self.policy.kind == "parcae_ideal":
            future = counts[i + 1: i + 1 + I]
            return future + [future[-1] if future else counts[i]] * (I - len(future))
        config = ForecastConfig(history_len=self.policy.history, lookahead_len=I, capacity=self.series.capacity)
        return predict(self._history(i), config, self.policy.predictor_method).values

    def _hazard(self, i: int) -> Optional[PreemptionHazard]:
        # the truth already carries every drop
        if self.policy.kind != "parcae" or not self.policy.hedge_preemptions:
            return None
        return preemption_hazard(self._history(i))

    def _replan(self, i: int) -> None:
        if i % self.policy.replan_every != 0 and (i + 1) in self.state.plan:
            return
        N_seq = [self.series.counts[i]] + self._future(i)
        steps = self.optimizer.optimize(self.state.cfg, N_seq, start_index=i, hazard=self._hazard(i))
        self.state.plan = {step.interval_index: step.config for step in steps}

    # ------------------------------------------------------------------
    def run(self) -> SimReport:
        counts = self.series.counts
        kind = self.policy.kind
        logger.info(
            f"Simulating {self.policy.label} on '{self.series.name}' ({len(counts)} intervals, "
            f"profile '{self.w.name}', seed {self.seed})"
        )
        for i, N in enumerate(counts):
            self.state.interval = i
            N_prev = counts[i - 1] if i else N
            log = IntervalLog(
                interval=i,
                N=N,
                preempted=max(0, N_prev - N),
                allocated=max(0, N - N_prev) if i else N,
            )
            if i == 0:
                # instances start ready; the first configuration is free
                self.state.cfg = self._initial(N)
                log.migration_kind = "initial" if self.state.cfg else "suspended"
                self._mark()
                rate = throughput(self.state.cfg, self.w) if self.state.cfg else 0.0
                useful = 1.0
                if kind == "redundancy" and self.state.cfg:
                    useful = self.policy.slowdown_factor
                    rate *= useful
                self._train(log, self.state.cfg, _Charges(), rate, useful)
            elif kind == "checkpoint":
                self.checkpoint_policy_step(log)
            elif kind == "redundancy":
                self.redundancy_policy_step(log)
            elif kind == "reactive":
                self._live_step(log, N_prev, reactive_plan(N, self.w))
            else:
                self._live_step(log, N_prev, self.state.plan.get(i))

            if self.optimizer is not None and i + 1 < len(counts):
                self._replan(i)
            self.logs.append(log)
            logger.debug(
                f"[{self.policy.label}] i={i} N={N} cfg={log.D}x{log.P} {log.migration_kind} commits={log.commits}"
            )
        report = self._report()
        logger.info(
            f"{self.policy.label} on '{self.series.name}': {report.committed_samples} samples committed, "
            f"{report.rollbacks} rollbacks, ${report.spot_cost:.2f} spot"
        )
        return report

    def _report(self) -> SimReport:
        ledger = {c: float(sum(getattr(log, c) for log in self.logs)) for c in LEDGER_CATEGORIES}
        instance_seconds = self.series.instance_seconds()
        hours = instance_seconds / 3600.0
        committed = self.state.manager.total_committed
        spot_cost = hours * self.w.spot_price
        return SimReport(
            trace_name=self.series.name,
            policy=self.policy.label,
            profile=self.w.name,
            seed=self.seed,
            interval_seconds=self.T,
            intervals=self.logs,
            committed_samples=committed,
            wall_time_s=len(self.logs) * self.T,
            instance_seconds=instance_seconds,
            gpu_seconds=ledger,
            spot_cost=spot_cost,
            ondemand_cost=hours * self.w.ondemand_price,
            per_sample_cost=spot_cost / committed if committed else None,
            samples_per_gpu_hour=committed / hours if hours else 0.0,
            suspended_intervals=self.state.suspended,
            rollbacks=self.state.rollbacks,
            epochs=list(self.state.manager.records),
        )


def run(
    series: IntervalSeries,
    w: WorkloadProfile,
    policy: Policy,
    seed: int = 0,
    costs: Optional[CostTable] = None,
    epoch_size: Optional[int] = None,
) -> SimReport:
    return Simulator(series, w, policy, seed, costs, epoch_size).run()
