import os

os.environ.setdefault("SPOTPLAN_LOG_TO_FILE", "0")
os.environ.setdefault("SPOTPLAN_LOG_LEVEL", "WARNING")

import numpy as np
import pytest

from app.models.workload_schema import CostTable, WorkloadProfile
from app.services.profile_catalog import PROFILES


@pytest.fixture
def example_profile() -> WorkloadProfile:
    """Depth-3 pipeline = 50 samples/s, depth-2 = 30 samples/s."""
    return PROFILES["liveput_example"]


@pytest.fixture
def gpt2_profile() -> WorkloadProfile:
    return PROFILES["gpt2"]


@pytest.fixture
def make_profile():
    """Random analytic profile whose shallowest feasible depth is `min_depth`."""

    def _make(rng: np.random.Generator, min_depth: int = 1) -> WorkloadProfile:
        micro = int(rng.choice([1, 2]))
        return WorkloadProfile(
            name=f"random_{int(rng.integers(1_000_000))}",
            total_compute_per_microbatch=float(rng.uniform(0.05, 2.0)),
            param_bytes_total=float(rng.uniform(0, 4e9)),
            activation_bytes_per_boundary=float(rng.uniform(0, 1e8)),
            minibatch_size=micro * int(rng.integers(2, 17)),
            microbatch_size=micro,
            device_memory=1.0,
            memory_model_bytes=float(min_depth) - 0.5,
            alpha=float(rng.uniform(0, 5e-3)),
            beta=float(rng.uniform(0, 1e-9)),
        )

    return _make


@pytest.fixture
def make_costs():
    def _make(rng: np.random.Generator) -> CostTable:
        return CostTable(
            start_process=float(rng.uniform(0, 10)),
            rendezvous=float(rng.uniform(0, 10)),
            cuda_context=float(rng.uniform(0, 10)),
            load_data=float(rng.uniform(0, 10)),
            build_model=float(rng.uniform(0, 10)),
            update_comm_groups=float(rng.uniform(0, 20)),
            comm_groups_per_instance=float(rng.uniform(0, 0.5)),
        )

    return _make


@pytest.fixture
def log_messages():
    """Messages logged through loguru while the test runs, as 'LEVEL module: text'."""
    from loguru import logger

    messages = []
    sink = logger.add(
        lambda message: messages.append(
            f"{message.record['level'].name} {message.record['extra'].get('module')}: {message.record['message']}"
        ),
        level="DEBUG",
    )
    yield messages
    logger.remove(sink)
