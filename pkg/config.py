"""
Process-level settings for iesbench
Environment overrides for output location, parallelism and debugging dumps
"""

import os
from typing import Optional

from dotenv import load_dotenv

from constants import OPTIONAL_ENV_VARS

load_dotenv()


def _env(name: str) -> str:
    return os.getenv(name, OPTIONAL_ENV_VARS.get(name, "")).strip()


def output_dir() -> str:
    """Directory that receives run outputs"""
    return _env("IES_OUTPUT_DIR") or OPTIONAL_ENV_VARS["IES_OUTPUT_DIR"]


def jobs() -> int:
    """Worker count for the design sweep"""
    try:
        return max(1, int(_env("IES_JOBS")))
    except ValueError:
        return 1


def dump_lp_dir() -> Optional[str]:
    return _env("IES_DUMP_LP_DIR") or None


def log_to_file() -> bool:
    return _env("IES_LOG_TO_FILE").lower() not in ("0", "false", "no", "off")


def log_level() -> str:
    return (_env("LOG_LEVEL") or "INFO").upper()
