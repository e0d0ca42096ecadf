# app/services/migration_planner.py

import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import InfeasibleTargetError, RollbackRequiredError
from app.core.logger import get_logger
from app.models.migration_schema import MigrationPlan, Move
from app.models.workload_schema import CostTable, ParallelConfig, WorkloadProfile
from app.services.perf_model import feasible
from app.services.preemption_model import ScenarioTable, Topology, stage_survivors

logger = get_logger("migration_planner")


# ============================================================
# TRANSFER TIMES (alpha-beta model)
# ============================================================

def stage_transfer_time(w: WorkloadProfile, P: int) -> float:
    """One stage's parameters over one link."""
    return (w.param_bytes_total / P) * w.beta + w.alpha


def broadcast_transfer_time(w: WorkloadProfile, P: int) -> float:
    """Serialized bound for redistributing the whole model across P stages."""
    return w.param_bytes_total * w.beta + P * w.alpha


def migration_cost(plan: MigrationPlan, w: WorkloadProfile, costs: CostTable, fresh_instances: Optional[int] = None) -> float:
    """T_mig in seconds: process start-up (only with fresh instances), rebuild, then parameter transfer."""
    if plan.kind == "none":
        return 0.0
    fresh = plan.fresh_instances if fresh_instances is None else fresh_instances
    target = plan.target
    total = costs.fixed_terms if fresh > 0 else 0.0
    total += costs.reconfigure_terms(target.instances)

    if plan.kind == "pipeline":
        total += broadcast_transfer_time(w, target.P)
    elif plan.kind == "inter_stage":
        per_stage = stage_transfer_time(w, target.P)
        # disjoint transfers run in parallel; a stage's senders serialize its own moves
        rounds = max(
            math.ceil(moves / max(1, plan.stage_senders.get(stage, 1)))
            for stage, moves in plan.transfer_counts().items()
        )
        total += min(rounds * per_stage, broadcast_transfer_time(w, target.P))
    return total


def restart_cost(target: ParallelConfig, w: WorkloadProfile, costs: CostTable) -> float:
    return costs.fixed_terms + costs.reconfigure_terms(target.instances) + broadcast_transfer_time(w, target.P)


def rollback_cost(target: ParallelConfig, alive: int, w: WorkloadProfile, costs: CostTable) -> float:
    """Reload `target` from the last checkpoint using `alive` surviving instances plus fresh ones."""
    fixed = costs.fixed_terms if target.instances > alive else 0.0
    return fixed + costs.reconfigure_terms(target.instances) + broadcast_transfer_time(w, target.P)


def scenario_costs(
    prev: ParallelConfig, targets: Sequence[ParallelConfig], table: ScenarioTable, w: WorkloadProfile, costs: CostTable
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Per (target, scenario row) of a table over `prev`: T_mig of the plan
    plan_migration builds for any vector mapping to that row, the cost of
    reloading the target from checkpoint instead, and which rows need that
    rollback because some stage lost every replica. Shapes (C, S), (C, S), (S,).
    """
    survivors = table.survivors
    alive = survivors.sum(axis=1) + table.spares
    wiped = survivors[:, 0] == 0
    D = np.array([t.D for t in targets])[:, None]
    P = np.array([t.P for t in targets])[:, None]
    instances = D * P

    fresh = np.maximum(0, instances - alive[None, :])
    base = (
        np.where(fresh > 0, costs.fixed_terms, 0.0)
        + costs.build_model
        + costs.update_comm_groups
        + costs.comm_groups_per_instance * instances
    )
    broadcast = w.param_bytes_total * w.beta + P * w.alpha
    rollback = base + broadcast

    same_depth = P[:, 0] == prev.P
    mig = rollback.copy()
    if same_depth.any():
        Ds = D[same_depth]
        # (targets, rows, stages): parameter copies each stage is missing
        short = np.maximum(0, Ds[:, :, None] - survivors[None, :, :])
        rounds = np.max(-(-short // np.maximum(survivors, 1)[None, :, :]), axis=2)
        transfer = np.minimum(rounds * ((w.param_bytes_total / prev.P) * w.beta + w.alpha), broadcast[same_depth])
        untouched = (survivors.sum(axis=1) == prev.instances)[None, :] & (Ds == prev.D)
        mig[same_depth] = np.where(untouched, 0.0, base[same_depth] + transfer)
    return mig, rollback, wiped


# ============================================================
# PLANNING
# ============================================================

def _check_target(target: ParallelConfig, w: WorkloadProfile, available: int) -> None:
    if not feasible(target, w):
        raise InfeasibleTargetError(f"target {target} is infeasible for profile '{w.name}'")
    if target.instances > available:
        raise InfeasibleTargetError(f"target {target} needs {target.instances} instances, {available} available")


def _pipeline_plan(
    topo: Topology, alive_ids: List[int], target: ParallelConfig, w: WorkloadProfile, costs: CostTable
) -> MigrationPlan:
    moves = []
    pool = list(alive_ids)
    next_fresh = topo.N
    fresh = 0
    for d in range(target.D):
        for p in range(target.P):
            if pool:
                instance = pool.pop(0)
                from_slot = topo.slot(instance) if instance < topo.assigned else None
                moves.append(Move(instance=instance, from_slot=from_slot, to_slot=(d, p), source="repartition", transfer=True))
            else:
                moves.append(Move(instance=next_fresh, to_slot=(d, p), source="fresh", transfer=True))
                next_fresh += 1
                fresh += 1
    plan = MigrationPlan(
        kind="pipeline",
        source=ParallelConfig(D=topo.D, P=topo.P) if topo.D > 0 else None,
        target=target,
        moves=moves,
        fresh_instances=fresh,
    )
    return plan.model_copy(update={"est_cost": migration_cost(plan, w, costs)})


def plan_migration(
    topo: Topology,
    v: np.ndarray,
    target: ParallelConfig,
    w: WorkloadProfile,
    costs: CostTable,
    available: Optional[int] = None,
) -> MigrationPlan:
    """
    Move from `topo` to `target` after preemption vector `v`.

    A depth change repartitions the model (pipeline migration). Otherwise
    holes in the kept pipelines are filled, in order of preference, by
    same-stage survivors of dropped pipelines (no parameter transfer), then
    surviving spares, surplus survivors of other stages and finally fresh
    instances, each of which receives the stage's parameters.

    `available` is the instance count after preemptions and allocations;
    it defaults to the survivors.
    """
    v = np.asarray(v, dtype=bool)
    alive_ids = [k for k in range(topo.N) if not v[k]]
    available = len(alive_ids) if available is None else available
    _check_target(target, w, available)

    survivors = stage_survivors(topo, v)[0]
    wiped = [p for p in range(topo.P) if survivors[p] == 0]
    if topo.D > 0 and wiped:
        logger.debug(f"Stages {wiped} of {topo.D}x{topo.P} lost every replica")
        raise RollbackRequiredError(wiped)

    if target.P != topo.P:
        return _pipeline_plan(topo, alive_ids, target, w, costs)

    source = ParallelConfig(D=topo.D, P=topo.P)
    grid = ~v[: topo.assigned].reshape(topo.D, topo.P)
    if target.D == topo.D and grid.all():
        return MigrationPlan(kind="none", source=source, target=target)

    # complete pipelines first, then the most intact broken ones
    order = sorted(range(topo.D), key=lambda d: (-int(grid[d].sum()), d))
    hosts = order[: target.D]
    donors = order[target.D:]

    moves: List[Move] = []
    holes: List[Tuple[int, int]] = []
    for new_d in range(target.D):
        for p in range(topo.P):
            if new_d >= len(hosts) or not grid[hosts[new_d], p]:
                holes.append((new_d, p))

    intra_pool: Dict[int, List[int]] = {p: [] for p in range(topo.P)}
    for d in donors:
        for p in range(topo.P):
            if grid[d, p]:
                intra_pool[p].append(d * topo.P + p)

    remaining = []
    for new_d, p in holes:
        if intra_pool[p]:
            instance = intra_pool[p].pop(0)
            moves.append(Move(instance=instance, from_slot=topo.slot(instance), to_slot=(new_d, p), source="intra"))
        else:
            remaining.append((new_d, p))

    spare_pool = [k for k in alive_ids if k >= topo.assigned]
    surplus_pool = sorted(k for p in intra_pool for k in intra_pool[p])
    next_fresh = topo.N
    fresh = 0
    for new_d, p in remaining:
        if spare_pool:
            instance = spare_pool.pop(0)
            moves.append(Move(instance=instance, to_slot=(new_d, p), source="spare", transfer=True))
        elif surplus_pool:
            instance = surplus_pool.pop(0)
            moves.append(
                Move(instance=instance, from_slot=topo.slot(instance), to_slot=(new_d, p), source="surplus", transfer=True)
            )
        else:
            moves.append(Move(instance=next_fresh, to_slot=(new_d, p), source="fresh", transfer=True))
            next_fresh += 1
            fresh += 1

    kind = "inter_stage" if any(m.transfer for m in moves) else "intra_stage"
    plan = MigrationPlan(
        kind=kind,
        source=source,
        target=target,
        moves=moves,
        fresh_instances=fresh,
        stage_senders={p: int(survivors[p]) for p in range(topo.P)},
    )
    plan = plan.model_copy(update={"est_cost": migration_cost(plan, w, costs)})
    logger.debug(f"{source} -> {target}: {kind}, {len(moves)} moves, {plan.est_cost:.2f}s")
    return plan


def plan_restart(target: ParallelConfig, w: WorkloadProfile, costs: CostTable, available: Optional[int] = None) -> MigrationPlan:
    """Bring training back from suspension or rollback: every slot loads its stage from the checkpoint store."""
    _check_target(target, w, target.instances if available is None else available)
    moves = [
        Move(instance=d * target.P + p, to_slot=(d, p), source="checkpoint", transfer=True)
        for d in range(target.D)
        for p in range(target.P)
    ]
    plan = MigrationPlan(kind="pipeline", target=target, moves=moves, fresh_instances=target.instances)
    return plan.model_copy(update={"est_cost": restart_cost(target, w, costs)})
