"""
Pytest configuration and fixtures for iesbench tests
Small wind assets, battery designs and hand-checkable network cases
"""

import os
import sys
from unittest.mock import patch

import numpy as np
import pytest

# Add project root to path; keep loggers off disk before any package module is imported
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
os.environ.setdefault("IES_LOG_TO_FILE", "0")

from core import BatteryDesign, HourlyOperation, WindAsset, feasible_envelope, soc_step  # noqa: E402
from services.bidder import BidCurve  # noqa: E402
from services.market import Bus, HourRecord, IesSite, Line, MarketLog, NetworkCase, ThermalUnit  # noqa: E402


def pytest_configure(config):
    """Configure pytest with custom markers"""
    config.addinivalue_line("markers", "slow: marks tests as slow (deselect with '-m \"not slow\"')")
    config.addinivalue_line("markers", "integration: marks tests as integration tests")
    config.addinivalue_line("markers", "unit: marks tests as unit tests")
    config.addinivalue_line("markers", "performance: marks tests as performance tests")


@pytest.fixture(autouse=True)
def mock_environment_variables(tmp_path):
    """Isolated environment: no log files, outputs under the test's temp dir"""
    env_vars = {
        "IES_LOG_TO_FILE": "0",
        "IES_OUTPUT_DIR": str(tmp_path / "runs"),
        "LOG_LEVEL": "WARNING",
    }
    with patch.dict(os.environ, env_vars):
        os.environ.pop("IES_JOBS", None)
        os.environ.pop("IES_DUMP_LP_DIR", None)
        yield


@pytest.fixture
def flat_wind():
    """100 MW farm at full output for 24 hours"""
    return WindAsset(100.0, np.ones(24))


@pytest.fixture
def ideal_design():
    """Lossless, non-degrading 10 MW / 2 h battery"""
    return BatteryDesign(10.0, 2.0, charge_eff=1.0, discharge_eff=1.0, degradation_coeff=0.0)


@pytest.fixture
def lossy_design():
    return BatteryDesign(10.0, 4.0)


def single_unit(name: str, bus: str, pmax: float, cost: float, pmin: float = 0.0,
                status: int = 24, power: float = None) -> ThermalUnit:
    """A flexible one-segment unit: no min up/down, unlimited ramp, no fixed costs"""
    on = status > 0
    return ThermalUnit(
        name, bus, pmin, pmax, pmax, 1, 1, ((pmax, cost),),
        startup_cost=0.0, no_load_cost=0.0, initial_status_hr=status,
        initial_power_mw=(pmin if power is None else power) if on else 0.0,
    )


@pytest.fixture
def thermal_unit():
    """Factory for flexible one-segment units"""
    return single_unit


@pytest.fixture
def one_bus_case():
    """Single bus, one 25 $/MWh unit, 100 MW flat load, 100 MW IES wind at the same bus"""
    hours = 48
    return NetworkCase(
        name="one_bus",
        buses=[Bus("a", 1.0)],
        lines=[],
        thermal_units=[single_unit("g", "a", 300.0, 25.0)],
        renewables=[],
        ies=IesSite("a", WindAsset(100.0, np.full(hours, 0.2))),
        load_mw=np.full(hours, 100.0),
        reference_bus="a",
        historical_lmp=np.full(hours, 25.0),
    )


@pytest.fixture
def two_bus_case():
    """Cheap unit at bus a, expensive unit at bus b, 50 MW line; all 120 MW of load at b"""
    hours = 48
    return NetworkCase(
        name="two_bus",
        buses=[Bus("a", 0.0), Bus("b", 1.0)],
        lines=[Line("ab", "a", "b", 10.0, 50.0)],
        thermal_units=[single_unit("cheap", "a", 200.0, 10.0), single_unit("dear", "b", 200.0, 50.0)],
        renewables=[],
        ies=IesSite("b", WindAsset(50.0, np.zeros(hours))),
        load_mw=np.full(hours, 120.0),
        reference_bus="a",
        historical_lmp=np.full(hours, 50.0),
    )


@pytest.fixture
def feasible_ops():
    """Factory for operations drawn uniformly from each hour's envelope"""
    def build(wind, design, initial, hours, seed=7):
        rng = np.random.default_rng(seed)
        ops, state = [], initial
        for hour in range(hours):
            envelope = feasible_envelope(state, wind.capacity_factors[hour], wind, design)
            charge = rng.uniform(0.0, envelope.max_charge)
            discharge = rng.uniform(0.0, envelope.max_discharge)
            direct_sale = rng.uniform(0.0, max(0.0, envelope.available_wind - charge))
            op = HourlyOperation.from_flows(charge, discharge, direct_sale)
            state = soc_step(state, op, design, hour=hour)
            ops.append(op)
        return ops
    return build


@pytest.fixture
def make_log():
    """Factory for a wind-only market log clearing `sale_mw` every hour at the given IES-bus LMPs;
    `delivered_mw` below it leaves a shortfall"""
    def build(lmps, sale_mw=100.0, bus_load_mw=200.0, mode="TI_zero_cost", delivered_mw=None):
        delivered = sale_mw if delivered_mw is None else delivered_mw
        log = MarketLog(mode=mode, case_name="synthetic", ies_bus="a", buses=("a", "b"),
                        design=BatteryDesign.none())
        for hour, lmp in enumerate(lmps):
            log.append(HourRecord(
                hour=hour, lmp=(float(lmp), float(lmp) + 1.0), ies_lmp=float(lmp), load_mw=2 * bus_load_mw,
                ies_bus_load_mw=bus_load_mw, wind_available_mw=delivered, offered_mw=sale_mw, cleared_mw=sale_mw,
                shortfall_mw=sale_mw - delivered, charge=0.0, discharge=0.0, direct_sale=delivered, soc=0.0,
                throughput=0.0, settlement_usd=float(lmp) * sale_mw, shed_mw=0.0, spill_mw=0.0, congested=False,
            ), bid=BidCurve.zero_cost(hour, sale_mw))
        return log
    return build
