"""
Input validation utilities for iesbench
Network case structure, time series coverage and environment checks
"""

import os
from typing import Any, Dict, List

import networkx as nx
import numpy as np

from constants import OPTIONAL_ENV_VARS
from exceptions import CaseValidationException
from utils.logger import get_logger

logger = get_logger(__name__)


class CaseValidator:
    """Structural checks on a network case; each check returns a list of issue strings"""

    @staticmethod
    def build_graph(case) -> nx.MultiGraph:
        graph = nx.MultiGraph()
        graph.add_nodes_from(bus.name for bus in case.buses)
        for line in case.lines:
            graph.add_edge(line.from_bus, line.to_bus, key=line.name)
        return graph

    @staticmethod
    def check_topology(case) -> List[str]:
        issues = []
        names = [bus.name for bus in case.buses]
        known = set(names)
        if len(known) != len(names):
            issues.append("duplicate bus names")
        if case.reference_bus not in known:
            issues.append(f"reference bus '{case.reference_bus}' is not a bus of the case")

        for line in case.lines:
            for end in (line.from_bus, line.to_bus):
                if end not in known:
                    issues.append(f"line '{line.name}' connects unknown bus '{end}'")
            if line.from_bus == line.to_bus:
                issues.append(f"line '{line.name}' is a self-loop at bus '{line.from_bus}'")
            if line.susceptance_pu <= 0:
                issues.append(f"line '{line.name}' has non-positive susceptance")
            if line.limit_mw <= 0:
                issues.append(f"line '{line.name}' has non-positive flow limit")
        if issues:
            return issues

        graph = CaseValidator.build_graph(case)
        if graph.number_of_nodes() and not nx.is_connected(graph):
            anchor = case.reference_bus
            reachable = nx.node_connected_component(graph, anchor)
            for name in names:
                if name not in reachable:
                    issues.append(f"bus '{name}' is disconnected from reference bus '{anchor}'")
        return issues

    @staticmethod
    def check_units(case) -> List[str]:
        issues = []
        known = {bus.name for bus in case.buses}
        for unit in case.thermal_units:
            if unit.bus not in known:
                issues.append(f"unit '{unit.name}' sits at unknown bus '{unit.bus}'")
            costs = [cost for _, cost in unit.segments]
            if any(b < a for a, b in zip(costs, costs[1:])):
                issues.append(f"unit '{unit.name}' has a non-convex cost curve (segment prices decrease)")
            total = sum(size for size, _ in unit.segments)
            if abs(total - unit.pmax_mw) > 1e-6:
                issues.append(f"unit '{unit.name}' segments sum to {total:g} MW, pmax is {unit.pmax_mw:g} MW")
            if not 0 <= unit.pmin_mw <= unit.pmax_mw:
                issues.append(f"unit '{unit.name}' needs 0 <= pmin <= pmax")
            if unit.initial_status_hr == 0:
                issues.append(f"unit '{unit.name}' initial status must be a signed non-zero hour count")
            if unit.initial_status_hr > 0 and not unit.pmin_mw <= unit.initial_power_mw <= unit.pmax_mw:
                issues.append(f"unit '{unit.name}' is on but its initial power is outside [pmin, pmax]")
            if unit.initial_status_hr < 0 and unit.initial_power_mw != 0:
                issues.append(f"unit '{unit.name}' is off but has non-zero initial power")
        for unit in case.renewables:
            if unit.bus not in known:
                issues.append(f"renewable '{unit.name}' sits at unknown bus '{unit.bus}'")
        if case.ies.bus not in known:
            issues.append(f"IES bus '{case.ies.bus}' is not a bus of the case")
        return issues

    @staticmethod
    def check_series(case) -> List[str]:
        issues = []
        horizon = case.horizon
        shares = np.array([bus.load_share for bus in case.buses])
        if np.any(shares < 0) or abs(shares.sum() - 1.0) > 1e-6:
            issues.append("bus load shares must be non-negative and sum to 1")
        if np.any(case.load_mw < 0):
            issues.append("load series contains negative values")
        for unit in case.renewables:
            if unit.capacity_factors.size < horizon:
                issues.append(f"renewable '{unit.name}' series covers {unit.capacity_factors.size} of {horizon} hours")
        if case.ies.wind.horizon < horizon:
            issues.append(f"IES wind series covers {case.ies.wind.horizon} of {horizon} hours")
        if case.historical_lmp is not None and case.historical_lmp.size < horizon:
            issues.append(f"historical LMP series covers {case.historical_lmp.size} of {horizon} hours")
        return issues

    @staticmethod
    def validate_case(case) -> Dict[str, Any]:
        """Run every check"""
        issues = CaseValidator.check_topology(case) + CaseValidator.check_units(case)
        if not any("unknown bus" in issue for issue in issues):
            issues += CaseValidator.check_series(case)
        return {
            "valid": len(issues) == 0,
            "issues": issues,
            "buses": len(case.buses),
            "lines": len(case.lines),
            "units": len(case.thermal_units) + len(case.renewables),
            "horizon": case.horizon,
        }


class ConfigValidator:
    """Validates environment variables"""

    @staticmethod
    def validate_environment() -> Dict[str, Any]:
        invalid_vars = []
        valid_config = {}

        for var, default in OPTIONAL_ENV_VARS.items():
            valid_config[var] = os.getenv(var, default)

        try:
            valid_config["IES_JOBS"] = int(valid_config["IES_JOBS"])
            if valid_config["IES_JOBS"] < 1:
                invalid_vars.append("IES_JOBS must be at least 1")
        except ValueError:
            invalid_vars.append("IES_JOBS must be integer")

        if valid_config["LOG_LEVEL"].upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            invalid_vars.append(f"LOG_LEVEL '{valid_config['LOG_LEVEL']}' is not a logging level")

        return {
            "valid": len(invalid_vars) == 0,
            "config": valid_config,
            "invalid_vars": invalid_vars,
        }


def validate_case(case) -> Dict[str, Any]:
    """Validate a case and raise CaseValidationException listing every issue"""
    report = CaseValidator.validate_case(case)
    if not report["valid"]:
        logger.warning(f"Case '{case.name}' failed validation with {len(report['issues'])} issue(s)")
        raise CaseValidationException(f"case '{case.name}' is invalid", issues=report["issues"])
    return report
