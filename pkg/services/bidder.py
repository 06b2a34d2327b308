"""
Self-scheduling bidder for iesbench
Backcast price scenarios, stochastic bidding LP, bid curves and dispatch tracking
"""

import time
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from constants import (
    DEFAULT_BIDDING_WINDOW_HR,
    DEFAULT_FALLBACK_PRICE,
    DEFAULT_SCENARIO_COUNT,
    DEFAULT_TERMINAL_SOC_VALUE,
    DEFAULT_TIMESTEP_HR,
    HOURS_PER_DAY,
    POWER_TOLERANCE_MW,
)
from core import BatteryDesign, HourlyOperation, IesState, WindAsset, feasible_envelope
from exceptions import (
    BidMonotonicityException,
    InsufficientHistoryException,
    SolverFailureException,
    ValidationException,
)
from services.optimizer import LinearModel, SolverSettings, solve_lp
from services.price_taker import PriceSeries, add_storage_rows
from utils.logger import get_logger

logger = get_logger(__name__)

MONOTONICITY_TOLERANCE_MW = 1e-6
PRICE_MERGE_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """Equally weighted price scenarios, one row per scenario, one column per window hour"""
    prices: np.ndarray
    start_hour: int

    def __post_init__(self):
        prices = np.atleast_2d(np.asarray(self.prices, dtype=float))
        object.__setattr__(self, "prices", prices)
        if prices.shape[0] < 1 or prices.shape[1] < 1:
            raise ValidationException("scenario set needs at least one scenario and one hour", field="prices")
        if not np.all(np.isfinite(prices)):
            raise ValidationException("scenario prices must be finite", field="prices")

    @property
    def n_scenarios(self) -> int:
        return int(self.prices.shape[0])

    @property
    def window(self) -> int:
        return int(self.prices.shape[1])

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n_scenarios, 1.0 / self.n_scenarios)

    def truncated(self, length: int) -> "ScenarioSet":
        return ScenarioSet(self.prices[:, :length], self.start_hour)


def backcast(history: Union[PriceSeries, Sequence[float], np.ndarray], t0: int,
             window: int = DEFAULT_BIDDING_WINDOW_HR, n: int = DEFAULT_SCENARIO_COUNT) -> ScenarioSet:
    """Scenario i repeats the realized prices of day t0 - 24 i over the window"""
    values = history.values if isinstance(history, PriceSeries) else np.asarray(history, dtype=float)
    if not 1 <= window <= HOURS_PER_DAY:
        raise ValidationException(f"window must be between 1 and {HOURS_PER_DAY} hours", field="window")
    if n < 1:
        raise ValidationException("at least one scenario is required", field="n")
    required = HOURS_PER_DAY * n
    if t0 < required:
        raise InsufficientHistoryException(f"backcasting {n} days at hour {t0} needs {required} prior hours",
                                           required=required, available=max(0, t0))
    end = t0 - HOURS_PER_DAY + window
    if end > values.size:
        raise InsufficientHistoryException(f"history ends at hour {values.size}, backcast needs {end}",
                                           required=end, available=int(values.size))

    rows = np.array([values[t0 - HOURS_PER_DAY * i: t0 - HOURS_PER_DAY * i + window] for i in range(1, n + 1)])
    if not np.all(np.isfinite(rows)):
        raise InsufficientHistoryException(f"history has gaps before hour {t0}", required=required,
                                           available=int(np.isfinite(values[:t0]).sum()))
    return ScenarioSet(rows, t0)


class Backcaster:
    """Rolling price history fed with realized LMPs as the simulation advances"""

    def __init__(self, seed_history: Optional[Sequence[float]] = None, n_scenarios: int = DEFAULT_SCENARIO_COUNT,
                 window: int = DEFAULT_BIDDING_WINDOW_HR, fallback_price: float = DEFAULT_FALLBACK_PRICE):
        self._history = np.array(seed_history if seed_history is not None else [], dtype=float)
        self.n_scenarios = n_scenarios
        self.window = window
        self.fallback_price = fallback_price
        self._warned_fallback = False

    @property
    def history(self) -> np.ndarray:
        return self._history.copy()

    def record(self, hour: int, lmp: float):
        if hour >= self._history.size:
            self._history = np.concatenate([self._history, np.full(hour + 1 - self._history.size, np.nan)])
        self._history[hour] = lmp

    def scenarios(self, t0: int) -> ScenarioSet:
        try:
            return backcast(self._history, t0, self.window, self.n_scenarios)
        except InsufficientHistoryException:
            pass

        for days in range(min(self.n_scenarios, t0 // HOURS_PER_DAY), 0, -1):
            try:
                scenario_set = backcast(self._history, t0, self.window, days)
                logger.debug(f"Backcast at hour {t0} uses {days} of {self.n_scenarios} days", hour=t0)
                return scenario_set
            except InsufficientHistoryException:
                continue

        if not self._warned_fallback:
            logger.warning(f"No price history before hour {t0}; bidding against a flat "
                           f"{self.fallback_price:.2f} $/MWh scenario", hour=t0)
            self._warned_fallback = True
        return ScenarioSet(np.full((1, self.window), self.fallback_price), t0)


@dataclass(eq=False)
class BidPlan:
    """Per-scenario optimal operation over the bidding window; arrays are [scenario, hour]"""
    charge: np.ndarray
    discharge: np.ndarray
    direct_sale: np.ndarray
    soc: np.ndarray
    throughput: np.ndarray
    expected_revenue: float
    objective: float
    initial_state: IesState
    start_hour: int

    @property
    def offered(self) -> np.ndarray:
        return self.discharge + self.direct_sale

    @property
    def window(self) -> int:
        return int(self.charge.shape[1])

    def operation(self, scenario: int, t: int = 0) -> HourlyOperation:
        return HourlyOperation.from_flows(self.charge[scenario, t], self.discharge[scenario, t],
                                          self.direct_sale[scenario, t])


def solve_bidding(state: IesState, wind_window: Sequence[float], scenarios: ScenarioSet, design: BatteryDesign,
                  wind: WindAsset, dt: float = DEFAULT_TIMESTEP_HR,
                  terminal_soc_value: float = DEFAULT_TERMINAL_SOC_VALUE,
                  settings: Optional[SolverSettings] = None, hour: Optional[int] = None) -> BidPlan:
    """Expected-revenue self-schedule over price scenarios; higher-price scenarios offer at least as much each hour"""
    factors = np.asarray(wind_window, dtype=float).reshape(-1)
    W = min(factors.size, scenarios.window)
    if W == 0:
        raise ValidationException("bidding window is empty", field="wind_window")
    prices = scenarios.prices[:, :W]
    count = scenarios.n_scenarios
    available = factors[:W] * wind.max_power_mw
    hour = scenarios.start_hour if hour is None else hour
    start = time.perf_counter()

    model = LinearModel(f"bidding_h{hour}", sense="max")
    blocks: List[Tuple[np.ndarray, ...]] = []
    for i in range(count):
        value = prices[i] * dt / count
        pc = model.add_vars(f"charge_s{i}", W, ub=design.max_power_mw)
        pd_ = model.add_vars(f"discharge_s{i}", W, ub=design.max_power_mw, obj=value)
        ps = model.add_vars(f"direct_sale_s{i}", W, obj=value)
        terminal = np.zeros(W)
        terminal[-1] = terminal_soc_value / count
        soc = model.add_vars(f"soc_s{i}", W, obj=terminal)
        throughput = model.add_vars(f"throughput_s{i}", W)

        model.add_constraints(np.column_stack([pc, ps]), [1.0, 1.0], "<=", available, prefix=f"wind_s{i}")
        add_storage_rows(model, pc, pd_, soc, throughput, design, state, dt, prefix=f"s{i}_")
        model.add_constraints(np.column_stack([soc, throughput]), [1.0, design.degradation_coeff],
                              "<=", design.max_soc, prefix=f"capacity_s{i}")
        blocks.append((pc, pd_, ps, soc, throughput))

    for t in range(W):
        for i in range(count):
            for j in range(count):
                if prices[i, t] > prices[j, t]:
                    model.add_constraint(
                        {blocks[i][1][t]: 1.0, blocks[i][2][t]: 1.0, blocks[j][1][t]: -1.0, blocks[j][2][t]: -1.0},
                        ">=", 0.0, name=f"order_t{t}_s{i}_s{j}",
                    )

    solution = solve_lp(model, settings)
    if not solution.is_optimal:
        raise SolverFailureException(f"bidding model at hour {hour} is {solution.status}", status=solution.status)

    x = solution.x
    stacked = [np.vstack([x[block[k]] for block in blocks]) for k in range(5)]
    charge, discharge, direct_sale = (np.maximum(a, 0.0) for a in stacked[:3])
    expected = float(np.sum(prices * (discharge + direct_sale)) * dt / count)

    logger.log_performance("bidder.solve_bidding", time.perf_counter() - start, hour=hour,
                           status=solution.status, backend=solution.backend)
    return BidPlan(
        charge=charge,
        discharge=discharge,
        direct_sale=direct_sale,
        soc=stacked[3],
        throughput=stacked[4],
        expected_revenue=expected,
        objective=solution.objective,
        initial_state=state,
        start_hour=hour,
    )


@dataclass(frozen=True, eq=False)
class BidCurve:
    """Stepwise offer: powers[k] MW are offered at any price at or above prices[k]"""
    hour: int
    prices: np.ndarray
    powers: np.ndarray

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float).reshape(-1)
        powers = np.asarray(self.powers, dtype=float).reshape(-1)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "powers", powers)
        if prices.size == 0 or prices.size != powers.size:
            raise ValidationException("bid curve needs matching, non-empty price and power arrays", field="prices")
        if np.any(np.diff(prices) <= 0):
            raise ValidationException("bid prices must be strictly increasing", field="prices")
        if np.any(np.diff(powers) < -MONOTONICITY_TOLERANCE_MW) or powers.min() < -POWER_TOLERANCE_MW:
            raise ValidationException("bid powers must be non-negative and non-decreasing", field="powers")

    @property
    def max_power(self) -> float:
        return float(self.powers[-1])

    @classmethod
    def zero_cost(cls, hour: int, power: float) -> "BidCurve":
        return cls(hour, np.array([0.0]), np.array([max(0.0, power)]))

    def offered_at(self, price: float) -> float:
        """Power offered when the clearing price is `price`"""
        eligible = np.nonzero(self.prices <= price + PRICE_MERGE_TOLERANCE)[0]
        return float(self.powers[eligible[-1]]) if eligible.size else 0.0

    def segments(self) -> List[Tuple[float, float]]:
        """Incremental (price, MW) blocks for market clearing; empty blocks dropped"""
        increments = np.diff(self.powers, prepend=0.0)
        return [(float(p), float(q)) for p, q in zip(self.prices, increments) if q > POWER_TOLERANCE_MW]

    def capped(self, limit: float) -> "BidCurve":
        return BidCurve(self.hour, self.prices, np.minimum(self.powers, max(0.0, limit)))

    def to_rows(self) -> List[Dict[str, Any]]:
        return [{"hour": self.hour, "price": float(p), "power_mw": float(q)}
                for p, q in zip(self.prices, self.powers)]


def bid_curves_to_frame(curves: Sequence[BidCurve]) -> pd.DataFrame:
    rows = [row for curve in curves for row in curve.to_rows()]
    return pd.DataFrame(rows, columns=["hour", "price", "power_mw"])


def to_bid_curve(plan: BidPlan, scenarios: ScenarioSet, t: int = 0, hour: Optional[int] = None) -> BidCurve:
    """Stepwise curve from the (price, offered power) pairs of window hour t"""
    hour = plan.start_hour + t if hour is None else hour
    prices = scenarios.prices[:, t]
    powers = np.maximum(plan.offered[:, t], 0.0)

    order = np.lexsort((powers, prices))
    merged_prices: List[float] = []
    merged_powers: List[float] = []
    for k in order:
        if merged_prices and abs(prices[k] - merged_prices[-1]) <= PRICE_MERGE_TOLERANCE:
            merged_powers[-1] = max(merged_powers[-1], powers[k])
        else:
            merged_prices.append(float(prices[k]))
            merged_powers.append(float(powers[k]))

    merged_powers_arr = np.array(merged_powers)
    drops = merged_powers_arr[:-1] - merged_powers_arr[1:]
    if drops.size and drops.max() > MONOTONICITY_TOLERANCE_MW:
        raise BidMonotonicityException(
            f"bid at hour {hour} offers {drops.max():.6f} MW less at a higher price",
            hour=hour, violation=float(drops.max()),
        )
    merged_powers_arr = np.maximum.accumulate(merged_powers_arr)
    merged_prices_arr = np.array(merged_prices)

    # negative-price scenarios keep their own breakpoints; otherwise the curve opens with a (0, 0) anchor
    if merged_prices_arr[0] > 0.0:
        merged_prices_arr = np.r_[0.0, merged_prices_arr]
        merged_powers_arr = np.r_[0.0, merged_powers_arr]
    curve_prices, curve_powers = [float(merged_prices_arr[0])], [float(merged_powers_arr[0])]
    for price, power in zip(merged_prices_arr[1:], merged_powers_arr[1:]):
        if power > curve_powers[-1] + PRICE_MERGE_TOLERANCE:
            curve_prices.append(float(price))
            curve_powers.append(float(power))
    return BidCurve(hour, np.array(curve_prices), np.array(curve_powers))


@dataclass(frozen=True)
class TrackedDispatch:
    operation: HourlyOperation
    target: float
    shortfall: float


def track_dispatch(state: IesState, cleared_power: float, capacity_factor: float, design: BatteryDesign,
                   wind: WindAsset, dt: float = DEFAULT_TIMESTEP_HR) -> TrackedDispatch:
    """Meet the cleared power from wind first, then the battery; surplus wind charges or is curtailed"""
    envelope = feasible_envelope(state, capacity_factor, wind, design, dt)
    target = max(0.0, cleared_power)
    deliver = min(target, envelope.p_max)

    direct_sale = min(deliver, envelope.available_wind)
    discharge = min(max(0.0, deliver - direct_sale), envelope.max_discharge)
    charge = min(max(0.0, envelope.available_wind - direct_sale), envelope.max_charge)

    operation = HourlyOperation.from_flows(charge, discharge, direct_sale)
    shortfall = max(0.0, target - operation.total_sale)
    if shortfall > POWER_TOLERANCE_MW:
        logger.debug(f"Delivered {operation.total_sale:.3f} of {target:.3f} MW cleared", design=design.label(wind))
    return TrackedDispatch(operation=operation, target=target, shortfall=shortfall)

