# app/services/perf_model.py

import math
from functools import lru_cache
from typing import List, Optional

from app.core.logger import get_logger
from app.models.workload_schema import ParallelConfig, WorkloadProfile

logger = get_logger("perf_model")


def feasible(cfg: ParallelConfig, w: WorkloadProfile) -> bool:
    """A depth fits if one stage's share of the model fits in device memory."""
    if w.num_layers is not None and cfg.P > w.num_layers:
        return False
    if w.pipeline_throughput is not None and cfg.P not in w.pipeline_throughput:
        return False
    return w.memory_per_stage(cfg.P) <= w.device_memory


def microbatches_per_pipeline(D: int, w: WorkloadProfile) -> int:
    return max(1, math.ceil(w.minibatch_size / (D * w.microbatch_size)))


def iteration_time(cfg: ParallelConfig, w: WorkloadProfile) -> float:
    """Fill-drain pipeline time plus per-stage ring all-reduce, in seconds."""
    D, P = cfg.D, cfg.P
    M = microbatches_per_pipeline(D, w)
    stage_time = w.total_compute_per_microbatch / P
    hop = w.alpha + w.activation_bytes_per_boundary * w.beta
    t_pipe = (M + P - 1) * stage_time + 2 * (P - 1) * hop
    t_sync = 2 * (D - 1) / D * (w.param_bytes_total / P) * w.beta + 2 * (D - 1) * w.alpha
    return t_pipe + t_sync


def throughput(cfg: ParallelConfig, w: WorkloadProfile) -> float:
    """Samples per second of a D x P configuration; 0 when infeasible."""
    if not feasible(cfg, w):
        return 0.0
    if w.pipeline_throughput is not None:
        return cfg.D * float(w.pipeline_throughput[cfg.P])
    elapsed = iteration_time(cfg, w)
    # once M clamps to 1 every pipeline still runs one full micro-batch
    samples = max(w.minibatch_size, cfg.D * w.microbatch_size)
    if elapsed <= 0:
        return math.inf if samples > 0 else 0.0
    return samples / elapsed


@lru_cache(maxsize=1024)
def _feasible_depths(w: WorkloadProfile, max_P: int) -> tuple:
    return tuple(P for P in range(1, max_P + 1) if feasible(ParallelConfig(D=1, P=P), w))


def feasible_depths(w: WorkloadProfile, max_P: int) -> List[int]:
    """Pipeline depths in [1, max_P] the profile can run at."""
    if max_P < 1:
        return []
    return list(_feasible_depths(w, max_P))


def min_feasible_depth(w: WorkloadProfile, max_P: int) -> Optional[int]:
    depths = feasible_depths(w, max_P)
    return depths[0] if depths else None


def enumerate_configs(N: int, w: WorkloadProfile) -> List[ParallelConfig]:
    """
    Every (D, P) with D * P <= N at a feasible depth, ascending P then
    descending D. The space is O(N log N).
    """
    configs = []
    for P in feasible_depths(w, N):
        for D in range(N // P, 0, -1):
            configs.append(ParallelConfig(D=D, P=P))
    return configs
