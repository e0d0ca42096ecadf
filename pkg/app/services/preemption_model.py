# app/services/preemption_model.py

import itertools
import json
import math
import os
from dataclasses import dataclass
from typing import Dict, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.core.config import settings
from app.core.errors import EnumerationCapError, InputError
from app.core.logger import get_logger
from app.models.workload_schema import ParallelConfig, WorkloadProfile
from app.services.perf_model import throughput

logger = get_logger("preemption_model")

SeedLike = Union[int, Sequence[int]]


class Topology(BaseModel):
    """
    D x P grid of assigned slots plus unassigned spares. Slot (d, p) is
    instance d * P + p; spares follow the D * P assigned slots.
    """

    model_config = ConfigDict(frozen=True)

    D: int = Field(ge=0)
    P: int = Field(ge=1)
    spare_instances: int = Field(default=0, ge=0)

    @classmethod
    def for_config(cls, cfg: ParallelConfig, N: int) -> "Topology":
        if cfg.instances > N:
            raise InputError(f"config {cfg} needs {cfg.instances} instances, only {N} available")
        return cls(D=cfg.D, P=cfg.P, spare_instances=N - cfg.instances)

    @property
    def assigned(self) -> int:
        return self.D * self.P

    @property
    def N(self) -> int:
        return self.assigned + self.spare_instances

    def slot(self, index: int) -> Tuple[int, int]:
        return divmod(index, self.P)


class ExpectationMode(BaseModel):
    """How expectations over preemption scenarios are taken."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["exact", "mc", "auto"] = "auto"
    trials: int = Field(default=settings.MC_TRIALS, ge=1)
    seed: int = 0

    @classmethod
    def exact(cls) -> "ExpectationMode":
        return cls(kind="exact")

    @classmethod
    def mc(cls, trials: int = settings.MC_TRIALS, seed: int = 0) -> "ExpectationMode":
        return cls(kind="mc", trials=trials, seed=seed)

    @classmethod
    def auto(cls, trials: int = settings.MC_TRIALS, seed: int = 0) -> "ExpectationMode":
        return cls(kind="auto", trials=trials, seed=seed)

    def resolve(self, N: int, N_minus: int) -> "ExpectationMode":
        if self.kind != "auto":
            return self
        if math.comb(N, N_minus) <= settings.EXACT_SCENARIO_LIMIT:
            return ExpectationMode.exact()
        return ExpectationMode.mc(self.trials, self.seed)

    def __str__(self) -> str:
        return "exact" if self.kind == "exact" else f"{self.kind}({self.trials},{self.seed})"


# ============================================================
# SCENARIO GENERATION
# ============================================================

def enumerate_vectors(N: int, N_minus: int, cap: int = settings.ENUM_CAP) -> np.ndarray:
    """All C(N, N_minus) preemption vectors, one boolean row each."""
    if not 0 <= N_minus <= N:
        raise InputError(f"cannot preempt {N_minus} of {N} instances")
    count = math.comb(N, N_minus)
    if count > cap:
        raise EnumerationCapError(count, cap)
    vectors = np.zeros((count, N), dtype=bool)
    if N_minus > 0:
        hits = np.array(list(itertools.combinations(range(N), N_minus)), dtype=np.intp)
        vectors[np.arange(count)[:, None], hits] = True
    return vectors


def sample_vectors(N: int, N_minus: int, trials: int, seed: SeedLike) -> np.ndarray:
    """`trials` uniform N_minus-subsets of the N instances, one boolean row each."""
    if not 0 <= N_minus <= N:
        raise InputError(f"cannot preempt {N_minus} of {N} instances")
    if trials < 1:
        raise InputError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    vectors = np.zeros((trials, N), dtype=bool)
    if N_minus == 0 or N == 0:
        return vectors
    # the N_minus smallest uniform keys pick a uniform subset
    keys = rng.random((trials, N))
    hit = np.argpartition(keys, N_minus - 1, axis=1)[:, :N_minus]
    np.put_along_axis(vectors, hit, True, axis=1)
    return vectors


# ============================================================
# RECOVERABILITY
# ============================================================

def stage_survivors(topo: Topology, vectors: np.ndarray) -> np.ndarray:
    """Surviving instances per stage, shape (scenarios, P)."""
    vectors = np.atleast_2d(vectors)
    grid = vectors[:, : topo.assigned].reshape(len(vectors), topo.D, topo.P)
    return topo.D - grid.sum(axis=1)


def surviving_pipelines(topo: Topology, v: np.ndarray, allow_intra_stage: bool = True) -> int:
    """Complete pipelines left after preemption `v`."""
    v = np.asarray(v, dtype=bool)
    if v.shape[-1] != topo.N:
        raise InputError(f"preemption vector has {v.shape[-1]} entries, topology has {topo.N} instances")
    if topo.D == 0:
        return 0
    if allow_intra_stage:
        return int(min(topo.D, stage_survivors(topo, v).min()))
    grid = v[: topo.assigned].reshape(topo.D, topo.P)
    return int((~grid.any(axis=1)).sum())


def conditional_throughput(topo: Topology, v: np.ndarray, w: WorkloadProfile) -> float:
    D_alive = surviving_pipelines(topo, v, allow_intra_stage=True)
    if D_alive == 0:
        return 0.0
    return throughput(ParallelConfig(D=D_alive, P=topo.P), w)


# ============================================================
# SCENARIO TABLES
# ============================================================

@dataclass(frozen=True)
class ScenarioTable:
    """
    Distribution of post-preemption states of a D x P topology with spares:
    each row is the ascending per-stage survivor counts plus surviving spares,
    weighted by how many preemption vectors map to it.
    """

    survivors: np.ndarray  # (rows, P), ascending per row
    spares: np.ndarray  # (rows,)
    counts: np.ndarray  # (rows,)
    total: int

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.total

    @property
    def min_survivors(self) -> np.ndarray:
        return self.survivors[:, 0]

    def expectation(self, values: np.ndarray) -> float:
        """Probability-weighted mean of one value per row."""
        return float(np.asarray(values, dtype=float) @ self.counts / self.total)

    def to_dict(self) -> Dict:
        return {
            "survivors": self.survivors.tolist(),
            "spares": self.spares.tolist(),
            "counts": self.counts.tolist(),
            "total": int(self.total),
        }

    @classmethod
    def from_dict(cls, data: Dict, P: int) -> "ScenarioTable":
        return cls(
            survivors=np.asarray(data["survivors"], dtype=np.int64).reshape(-1, P),
            spares=np.asarray(data["spares"], dtype=np.int64),
            counts=np.asarray(data["counts"], dtype=np.int64),
            total=int(data["total"]),
        )


def _build_table(vectors: np.ndarray, D: int, P: int) -> ScenarioTable:
    topo = Topology(D=D, P=P, spare_instances=vectors.shape[1] - D * P)
    survivors = np.sort(stage_survivors(topo, vectors), axis=1)
    spares = topo.spare_instances - vectors[:, topo.assigned:].sum(axis=1)
    keys = np.column_stack([survivors, spares])
    unique, counts = np.unique(keys, axis=0, return_counts=True)
    return ScenarioTable(
        survivors=unique[:, :P].astype(np.int64),
        spares=unique[:, P].astype(np.int64),
        counts=counts.astype(np.int64),
        total=int(len(vectors)),
    )


class ScenarioCache:
    """In-process memo of scenario tables, persistable as JSON."""

    def __init__(self):
        self._tables: Dict[Tuple[int, int, int, int, str], ScenarioTable] = {}
        # one scenario ensemble per (N, N_minus, mode), shared by every topology
        self._vectors: Dict[Tuple[int, int, str], np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._tables)

    def get(self, N: int, N_minus: int, D: int, P: int, mode: ExpectationMode) -> ScenarioTable:
        if D * P > N:
            raise InputError(f"{D}x{P} does not fit in {N} instances")
        resolved = mode.resolve(N, N_minus)
        key = (N, N_minus, D, P, str(resolved))
        table = self._tables.get(key)
        if table is None:
            if mode.kind == "auto" and resolved.kind == "mc" and (N, N_minus, str(resolved)) not in self._vectors:
                logger.warning(f"C({N},{N_minus}) above exact limit, sampling {resolved.trials} scenarios")
            table = _build_table(self._scenarios(N, N_minus, resolved), D, P)
            self._tables[key] = table
        return table

    def _scenarios(self, N: int, N_minus: int, mode: ExpectationMode) -> np.ndarray:
        key = (N, N_minus, str(mode))
        vectors = self._vectors.get(key)
        if vectors is None:
            if mode.kind == "exact":
                vectors = enumerate_vectors(N, N_minus)
            else:
                vectors = sample_vectors(N, N_minus, mode.trials, [mode.seed, N, N_minus])
            self._vectors[key] = vectors
        return vectors

    def clear(self) -> None:
        self._tables.clear()
        self._vectors.clear()

    def save(self, path: str) -> None:
        payload = {
            "|".join(map(str, key)): table.to_dict()
            for key, table in sorted(self._tables.items(), key=lambda kv: kv[0][:4])
        }
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f)
        logger.info(f"Saved {len(payload)} scenario tables to {path}")

    def load(self, path: str) -> int:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
        for raw_key, data in payload.items():
            N, N_minus, D, P, mode = raw_key.split("|")
            self._tables[(int(N), int(N_minus), int(D), int(P), mode)] = ScenarioTable.from_dict(data, int(P))
        logger.info(f"Loaded {len(payload)} scenario tables from {path}")
        return len(payload)


default_cache = ScenarioCache()


def scenario_table(
    N: int, N_minus: int, D: int, P: int, mode: Optional[ExpectationMode] = None, cache: Optional[ScenarioCache] = None
) -> ScenarioTable:
    return (cache if cache is not None else default_cache).get(N, N_minus, D, P, mode or ExpectationMode.auto())


def expected_liveput(
    cfg: ParallelConfig, N: int, N_minus: int, w: WorkloadProfile, mode: Optional[ExpectationMode] = None
) -> float:
    """Mean throughput after intra-stage recovery over uniform N_minus-preemptions of N instances."""
    table = scenario_table(N, N_minus, cfg.D, cfg.P, mode)
    alive = np.minimum(table.min_survivors, cfg.D)
    per_depth = np.array([throughput(ParallelConfig(D=d, P=cfg.P), w) if d > 0 else 0.0 for d in range(cfg.D + 1)])
    return table.expectation(per_depth[alive])
