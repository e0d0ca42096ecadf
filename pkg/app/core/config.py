from dotenv import load_dotenv
import os

load_dotenv()


def _env_int(name: str, default: int) -> int:
    return int(os.getenv(name, default))


def _env_float(name: str, default: float) -> float:
    return float(os.getenv(name, default))


class Settings:

    # Simulation / optimization time quantum
    INTERVAL_SECONDS: float = _env_float("SPOTPLAN_INTERVAL_SECONDS", 60.0)

    # Availability predictor
    HISTORY_LEN: int = _env_int("SPOTPLAN_HISTORY", 12)
    LOOKAHEAD_LEN: int = _env_int("SPOTPLAN_LOOKAHEAD", 12)
    MAX_STEP: int = _env_int("SPOTPLAN_MAX_STEP", 8)
    RESET_THRESHOLD: int = _env_int("SPOTPLAN_RESET_THRESHOLD", 10)
    MA_WINDOW: int = _env_int("SPOTPLAN_MA_WINDOW", 4)
    SMOOTHING_ALPHA: float = _env_float("SPOTPLAN_SMOOTHING_ALPHA", 0.5)

    # Preemption scenarios
    MC_TRIALS: int = _env_int("SPOTPLAN_MC_TRIALS", 1000)
    ENUM_CAP: int = _env_int("SPOTPLAN_ENUM_CAP", 1_000_000)
    EXACT_SCENARIO_LIMIT: int = _env_int("SPOTPLAN_EXACT_SCENARIO_LIMIT", 20_000)

    # Fault tolerance / sample manager
    ROLLBACK_PENALTY: float = _env_float("SPOTPLAN_ROLLBACK_PENALTY", 30.0)
    EPOCH_SIZE: int = _env_int("SPOTPLAN_EPOCH_SIZE", 1_000_000)

    # Logging
    LOG_LEVEL: str = os.getenv("SPOTPLAN_LOG_LEVEL", "INFO")
    LOG_DIR: str = os.getenv("SPOTPLAN_LOG_DIR", "logs")
    LOG_TO_FILE: bool = os.getenv("SPOTPLAN_LOG_TO_FILE", "1") not in ("0", "false", "False", "")

settings = Settings()
