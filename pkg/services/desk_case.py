"""
Bundled 5-bus desk-scale case for iesbench
Static network and fleet tables plus seeded synthesis of load, renewable and price series
"""

from typing import List

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from constants import DEFAULT_WIND_MAX_POWER_MW, DESK_CASE_SEED, HOURS_PER_DAY, HOURS_PER_YEAR
from core import WindAsset
from services.market import Bus, IesSite, Line, NetworkCase, RenewableUnit, ThermalUnit
from utils.logger import get_logger

logger = get_logger(__name__)

DESK_CASE_NAME = "desk5bus"
DESK_REFERENCE_BUS = "b1"
DESK_IES_BUS = "b5"
DESK_PEAK_LOAD_MW = 880.0

DESK_BUSES = [
    Bus("b1", 0.15),
    Bus("b2", 0.30),
    Bus("b3", 0.25),
    Bus("b4", 0.20),
    Bus("b5", 0.10),
]

# the two lines out of b5 cap IES exports well below the wind rating
DESK_LINES = [
    Line("l12", "b1", "b2", 10.0, 400.0),
    Line("l14", "b1", "b4", 8.0, 300.0),
    Line("l15", "b1", "b5", 12.0, 250.0),
    Line("l23", "b2", "b3", 10.0, 300.0),
    Line("l34", "b3", "b4", 9.0, 250.0),
    Line("l45", "b4", "b5", 11.0, 250.0),
]

DESK_UNITS = [
    ThermalUnit("g1", "b1", 150.0, 300.0, 60.0, 8, 8, ((150.0, 18.0), (150.0, 20.0)),
                startup_cost=5000.0, no_load_cost=800.0, initial_status_hr=24, initial_power_mw=200.0),
    ThermalUnit("g2", "b2", 80.0, 200.0, 80.0, 4, 4, ((100.0, 24.0), (100.0, 28.0)),
                startup_cost=2000.0, no_load_cost=400.0, initial_status_hr=8, initial_power_mw=100.0),
    ThermalUnit("g3", "b3", 10.0, 80.0, 80.0, 1, 1, ((40.0, 60.0), (40.0, 110.0)),
                startup_cost=300.0, no_load_cost=50.0, initial_status_hr=-24, initial_power_mw=0.0),
    ThermalUnit("g4", "b3", 100.0, 250.0, 100.0, 4, 4, ((125.0, 26.0), (125.0, 32.0)),
                startup_cost=2500.0, no_load_cost=500.0, initial_status_hr=4, initial_power_mw=125.0),
    ThermalUnit("g5", "b4", 20.0, 150.0, 50.0, 2, 2, ((75.0, 45.0), (75.0, 70.0)),
                startup_cost=800.0, no_load_cost=150.0, initial_status_hr=-8, initial_power_mw=0.0),
]

DESK_RENEWABLES = [("wind_b2", "b2", "wind", 200.0), ("solar_b4", "b4", "solar", 150.0)]


def _ar1(rng: np.random.Generator, hours: int, persistence: float) -> np.ndarray:
    """Stationary unit-variance AR(1) path"""
    shocks = rng.standard_normal(hours)
    if hours < 2:
        return shocks
    rest, _ = lfilter([np.sqrt(1.0 - persistence ** 2)], [1.0, -persistence], shocks[1:],
                      zi=[persistence * shocks[0]])
    return np.concatenate([shocks[:1], rest])


def _logistic(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _merit_order_price(net_load: np.ndarray) -> np.ndarray:
    blocks = sorted((cost, size) for unit in DESK_UNITS for size, cost in unit.segments)
    costs = np.array([cost for cost, _ in blocks])
    edges = np.cumsum([size for _, size in blocks])
    position = np.searchsorted(edges, net_load)
    price = np.where(position < costs.size, costs[np.minimum(position, costs.size - 1)], 1000.0)
    return np.where(net_load <= 0.0, 0.0, price)


def desk_timeseries(hours: int = HOURS_PER_YEAR, seed: int = DESK_CASE_SEED) -> pd.DataFrame:
    """Hourly load, capacity factors and historical LMP; identical for identical (hours, seed)"""
    rng = np.random.default_rng(seed)
    t = np.arange(hours)
    hour_of_day = t % HOURS_PER_DAY
    day = t // HOURS_PER_DAY

    diurnal = 0.5 * (1.0 - np.cos(2.0 * np.pi * (hour_of_day - 5) / HOURS_PER_DAY))
    seasonal = 0.85 + 0.15 * np.cos(2.0 * np.pi * (day - 200) / 366.0)
    noise = 1.0 + 0.02 * _ar1(rng, hours, 0.9)
    load = DESK_PEAK_LOAD_MW * seasonal * (0.62 + 0.38 * diurnal) * noise

    winter = np.cos(2.0 * np.pi * day / 366.0)
    night = np.cos(2.0 * np.pi * hour_of_day / HOURS_PER_DAY)
    z_ies = _ar1(rng, hours, 0.95)
    ies_cf = _logistic(1.3 * z_ies - 0.4 + 0.3 * winter + 0.15 * night)
    z_b2 = 0.7 * z_ies + np.sqrt(1.0 - 0.49) * _ar1(rng, hours, 0.95)
    wind_cf = _logistic(1.3 * z_b2 - 0.5 + 0.3 * winter + 0.15 * night)

    sun = np.clip(np.sin(np.pi * (hour_of_day - 6) / 12.0), 0.0, None)
    sun_season = 0.75 + 0.25 * np.cos(2.0 * np.pi * (day - 172) / 366.0)
    clouds = np.repeat(rng.uniform(0.5, 1.0, size=hours // HOURS_PER_DAY + 1), HOURS_PER_DAY)[:hours]
    solar_cf = sun * sun_season * clouds

    net = load - 200.0 * wind_cf - 150.0 * solar_cf - DEFAULT_WIND_MAX_POWER_MW * ies_cf
    lmp = _merit_order_price(net) * np.exp(0.05 * rng.standard_normal(hours))

    return pd.DataFrame({
        "hour": t,
        "load_mw": load,
        "cf_wind_b2": np.clip(wind_cf, 0.0, 1.0),
        "cf_solar_b4": np.clip(solar_cf, 0.0, 1.0),
        "cf_ies": np.clip(ies_cf, 0.0, 1.0),
        "historical_lmp": lmp,
    })


def desk_renewables(frame: pd.DataFrame) -> List[RenewableUnit]:
    return [RenewableUnit(name, bus, kind, pmax, frame[f"cf_{name}"].to_numpy(float))
            for name, bus, kind, pmax in DESK_RENEWABLES]


def build_desk_case(hours: int = HOURS_PER_YEAR, seed: int = DESK_CASE_SEED,
                    wind_max_power_mw: float = DEFAULT_WIND_MAX_POWER_MW) -> NetworkCase:
    """The bundled 5-bus case with the IES wind farm at b5"""
    frame = desk_timeseries(hours, seed)
    logger.debug(f"Synthesized {hours} h of desk case series with seed {seed}")
    return NetworkCase(
        name=DESK_CASE_NAME,
        buses=list(DESK_BUSES),
        lines=list(DESK_LINES),
        thermal_units=list(DESK_UNITS),
        renewables=desk_renewables(frame),
        ies=IesSite(DESK_IES_BUS, WindAsset(wind_max_power_mw, frame["cf_ies"].to_numpy(float))),
        load_mw=frame["load_mw"].to_numpy(float),
        reference_bus=DESK_REFERENCE_BUS,
        historical_lmp=frame["historical_lmp"].to_numpy(float),
    )
