"""
Runtime Configuration
Environment-driven defaults, loaded from a .env file at the project root.
"""

import os
from pathlib import Path

from dotenv import load_dotenv


project_root = Path(__file__).parent.parent
env_path = project_root / ".env"

load_dotenv(env_path)


def get_n_jobs(override: int | None = None) -> int:
    """Worker count for feature fits and repetitions; -1 means all cores."""
    if override is not None:
        return override
    value = os.getenv("MULTIPFA_N_JOBS", "-1")
    try:
        return int(value)
    except ValueError:
        return -1


def get_output_dir(override: str | None = None) -> Path:
    return Path(override or os.getenv("MULTIPFA_OUTPUT_DIR", "multipfa_output"))


def debug_mode() -> bool:
    return os.getenv("DEBUG_MODE", "false").lower() == "true"
