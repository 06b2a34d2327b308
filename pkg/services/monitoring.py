"""
Run monitoring for iesbench
Wall/CPU time, peak memory and solve counts per command, plus static system info for manifests
"""

import platform
import time
from dataclasses import dataclass, field
from datetime import datetime
from importlib import metadata
from typing import Any, Dict, Optional

import psutil

from services.optimizer import solve_counts
from utils.logger import get_logger

logger = get_logger(__name__)

REPORTED_PACKAGES = ["numpy", "scipy", "pandas", "networkx", "pydantic", "psutil", "aiofiles"]


@dataclass
class RunMetrics:
    """Resources used by one monitored operation"""
    operation: str
    started: datetime
    wall_time_s: float = 0.0
    cpu_time_s: float = 0.0
    peak_rss_bytes: int = 0
    lp_solves: int = 0
    milp_solves: int = 0
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def solves(self) -> int:
        return self.lp_solves + self.milp_solves

    def to_dict(self) -> Dict[str, Any]:
        return {
            "operation": self.operation,
            "started": self.started.isoformat(timespec="seconds"),
            "wall_time_s": self.wall_time_s,
            "cpu_time_s": self.cpu_time_s,
            "peak_rss_mb": round(self.peak_rss_bytes / (1024 * 1024), 2),
            "lp_solves": self.lp_solves,
            "milp_solves": self.milp_solves,
            **self.extra,
        }


class RunMonitor:
    """Context manager timing an operation; `metrics` is filled on exit"""

    def __init__(self, operation: str, **extra):
        self.operation = operation
        self.metrics = RunMetrics(operation=operation, started=datetime.now(), extra=dict(extra))
        self._process = psutil.Process()
        self._wall_start = 0.0
        self._cpu_start = 0.0
        self._solves_start: Dict[str, int] = {}

    def _cpu_seconds(self) -> float:
        times = self._process.cpu_times()
        return times.user + times.system

    def sample(self):
        """Fold the current RSS into the peak; long loops call this between steps"""
        rss = self._process.memory_info().rss
        self.metrics.peak_rss_bytes = max(self.metrics.peak_rss_bytes, rss)

    def __enter__(self) -> "RunMonitor":
        self._wall_start = time.perf_counter()
        self._cpu_start = self._cpu_seconds()
        self._solves_start = solve_counts()
        self.sample()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.sample()
        counts = solve_counts()
        self.metrics.wall_time_s = time.perf_counter() - self._wall_start
        self.metrics.cpu_time_s = self._cpu_seconds() - self._cpu_start
        self.metrics.lp_solves = counts["lp"] - self._solves_start.get("lp", 0)
        self.metrics.milp_solves = counts["milp"] - self._solves_start.get("milp", 0)
        logger.log_performance(self.operation, self.metrics.wall_time_s,
                               solves=self.metrics.solves, failed=exc_type is not None)
        return False


def _version(package: str) -> Optional[str]:
    try:
        return metadata.version(package)
    except metadata.PackageNotFoundError:
        return None


def system_info() -> Dict[str, Any]:
    """Static host and package information"""
    try:
        return {
            "platform": platform.platform(),
            "python_version": platform.python_version(),
            "cpu_count": psutil.cpu_count(),
            "total_memory": psutil.virtual_memory().total,
            "hostname": platform.node(),
            "packages": {name: _version(name) for name in REPORTED_PACKAGES},
        }
    except Exception as e:
        logger.error(f"Failed to get system info: {str(e)}")
        return {"error": str(e)}
