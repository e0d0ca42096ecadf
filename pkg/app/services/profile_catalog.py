# app/services/profile_catalog.py

import json
import os
from typing import Dict

from pydantic import ValidationError

from app.core.errors import InputError
from app.core.logger import get_logger
from app.models.workload_schema import ParallelConfig, WorkloadProfile
from app.services.perf_model import min_feasible_depth

logger = get_logger("profile_catalog")

GB = 1e9
V100_MEMORY = 16 * GB
# 10 Gbps instance network
BETA_10GBPS = 1.0 / 1.25e9
ALPHA = 1e-3
# p3.2xlarge, USD per instance-hour
SPOT_PRICE = 0.918
ONDEMAND_PRICE = 3.06

_COMMON = dict(
    device_memory=V100_MEMORY,
    alpha=ALPHA,
    beta=BETA_10GBPS,
    spot_price=SPOT_PRICE,
    ondemand_price=ONDEMAND_PRICE,
)

PROFILES: Dict[str, WorkloadProfile] = {
    # two-configuration liveput example: one pipeline does 30 samples/s at
    # depth 2 and 50 samples/s at depth 3
    "liveput_example": WorkloadProfile(
        name="liveput_example",
        total_compute_per_microbatch=1.0,
        param_bytes_total=0.0,
        minibatch_size=10,
        microbatch_size=1,
        device_memory=V100_MEMORY,
        spot_price=SPOT_PRICE,
        ondemand_price=ONDEMAND_PRICE,
        pipeline_throughput={2: 30.0, 3: 50.0},
    ),
    "resnet152": WorkloadProfile(
        name="resnet152",
        total_compute_per_microbatch=0.11,
        param_bytes_total=0.24 * GB,
        activation_bytes_per_boundary=0.1 * GB,
        minibatch_size=2048,
        microbatch_size=32,
        memory_fixed_bytes=3 * GB,
        memory_model_bytes=1 * GB,
        num_layers=50,
        **_COMMON,
    ),
    "vgg19": WorkloadProfile(
        name="vgg19",
        total_compute_per_microbatch=0.25,
        param_bytes_total=0.57 * GB,
        activation_bytes_per_boundary=0.2 * GB,
        minibatch_size=2048,
        microbatch_size=32,
        memory_fixed_bytes=4 * GB,
        memory_model_bytes=2.3 * GB,
        num_layers=19,
        **_COMMON,
    ),
    "bert_large": WorkloadProfile(
        name="bert_large",
        total_compute_per_microbatch=0.25,
        param_bytes_total=0.68 * GB,
        activation_bytes_per_boundary=8.4e6,
        minibatch_size=1024,
        microbatch_size=8,
        memory_fixed_bytes=3 * GB,
        memory_model_bytes=5.4 * GB,
        num_layers=24,
        **_COMMON,
    ),
    # 1.5B parameters, needs at least 4 stages
    "gpt2": WorkloadProfile(
        name="gpt2",
        total_compute_per_microbatch=0.3,
        param_bytes_total=3 * GB,
        activation_bytes_per_boundary=3.3e6,
        minibatch_size=128,
        microbatch_size=1,
        memory_fixed_bytes=6 * GB,
        memory_model_bytes=40 * GB,
        num_layers=48,
        **_COMMON,
    ),
    # 6.7B parameters, needs at least 20 stages
    "gpt3": WorkloadProfile(
        name="gpt3",
        total_compute_per_microbatch=2.0,
        param_bytes_total=13.4 * GB,
        activation_bytes_per_boundary=8.4e6,
        minibatch_size=64,
        microbatch_size=1,
        memory_fixed_bytes=4 * GB,
        memory_model_bytes=240 * GB,
        num_layers=32,
        **_COMMON,
    ),
}

# fixed (D, P) the redundancy baseline trains each model with
REDUNDANCY_CONFIGS: Dict[str, ParallelConfig] = {
    "resnet152": ParallelConfig(D=8, P=4),
    "vgg19": ParallelConfig(D=8, P=4),
    "bert_large": ParallelConfig(D=4, P=8),
    "gpt2": ParallelConfig(D=2, P=16),
    "gpt3": ParallelConfig(D=1, P=23),
}


def load_profile(name_or_path: str) -> WorkloadProfile:
    """Resolve a catalog name or a JSON profile file."""
    if name_or_path in PROFILES:
        return PROFILES[name_or_path]
    if not os.path.isfile(name_or_path):
        raise InputError(f"profile '{name_or_path}' is neither a catalog name nor an existing file")
    try:
        with open(name_or_path, "r", encoding="utf-8") as f:
            data = json.load(f)
        data.setdefault("name", os.path.splitext(os.path.basename(name_or_path))[0])
        if data.get("pipeline_throughput"):
            data["pipeline_throughput"] = {int(k): float(v) for k, v in data["pipeline_throughput"].items()}
        profile = WorkloadProfile(**data)
    except json.JSONDecodeError as e:
        raise InputError(f"profile file {name_or_path} is not valid JSON: {e}") from e
    except ValidationError as e:
        raise InputError(f"profile file {name_or_path}: {e}") from e
    logger.info(f"Loaded workload profile '{profile.name}' from {name_or_path}")
    return profile


def redundancy_config(profile: WorkloadProfile) -> ParallelConfig:
    """Fixed redundancy-baseline config for catalog models, else the shallowest feasible depth."""
    if profile.name in REDUNDANCY_CONFIGS:
        return REDUNDANCY_CONFIGS[profile.name]
    P = min_feasible_depth(profile, profile.num_layers or 64) or 1
    return ParallelConfig(D=1, P=P)
