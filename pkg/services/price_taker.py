"""
Price-taker techno-economic optimization for iesbench
Co-optimizes battery sizing and hourly operation against exogenous LMPs for lifetime NPV
"""

import time
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd

from constants import (
    DEFAULT_DISCOUNT_RATE,
    DEFAULT_LIFETIME_YEARS,
    DEFAULT_RENEWABLE_INCENTIVE,
    DEFAULT_TIMESTEP_HR,
    HOURS_PER_YEAR,
    KUSD,
    MIN_ANNUAL_HOURS,
    USD_PER_KUSD_PER_KW_MW,
)
from core import (
    BatteryDesign,
    HourlyOperation,
    IesState,
    Schedule,
    WindAsset,
    capex,
    om_cost,
)
from exceptions import SeriesLengthException, SolverFailureException, ValidationException
from services.optimizer import LinearModel, SolverSettings, solve_lp
from utils.logger import get_logger

logger = get_logger(__name__)

SIZING_POWER_FLOOR_MW = 1e-9


@dataclass(frozen=True, eq=False)
class PriceSeries:
    """Hourly LMPs at one bus for one scenario; negative prices allowed"""
    values: np.ndarray
    bus: str = "ies"
    scenario: str = "base"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        object.__setattr__(self, "values", values)
        if not np.all(np.isfinite(values)):
            raise ValidationException("price series contains non-finite values", field="values")

    def __len__(self) -> int:
        return int(self.values.size)

    def window(self, start: int, length: int) -> "PriceSeries":
        if start < 0 or start + length > len(self):
            raise SeriesLengthException(f"price window [{start}, {start + length}) outside series of {len(self)}",
                                        expected=start + length, actual=len(self))
        return PriceSeries(self.values[start:start + length], self.bus, self.scenario)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"hour": np.arange(len(self), dtype=int), "lmp": self.values})


def npv_factor(discount_rate: float, lifetime_years: int) -> float:
    """Annuity factor ((1+r)^N - 1) / (r (1+r)^N)"""
    if discount_rate <= 0:
        raise ValidationException("discount rate must be positive", field="discount_rate")
    if lifetime_years < 1:
        raise ValidationException("lifetime must be at least one year", field="lifetime_years")
    growth = (1.0 + discount_rate) ** lifetime_years
    return (growth - 1.0) / (discount_rate * growth)


@dataclass(frozen=True)
class FinanceParams:
    discount_rate: float = DEFAULT_DISCOUNT_RATE
    lifetime_years: int = DEFAULT_LIFETIME_YEARS
    incentive: float = DEFAULT_RENEWABLE_INCENTIVE  # $/MWh

    def __post_init__(self):
        npv_factor(self.discount_rate, self.lifetime_years)
        if self.incentive < 0:
            raise ValidationException("renewable incentive cannot be negative", field="incentive")

    @property
    def npv_factor(self) -> float:
        return npv_factor(self.discount_rate, self.lifetime_years)

    def npv(self, annual_revenue: float, annual_om: float, capital_cost: float) -> float:
        return self.npv_factor * (annual_revenue - annual_om) - capital_cost

    def to_dict(self) -> Dict[str, float]:
        return {
            "discount_rate": self.discount_rate,
            "lifetime_years": self.lifetime_years,
            "incentive": self.incentive,
            "npv_factor": self.npv_factor,
        }


@dataclass(frozen=True)
class BatteryBounds:
    """Sizing limits for co-optimization; max SoC is kept within [H_min, H_max] times power"""
    max_power_mw: float
    min_duration_hr: float = 0.0
    max_duration_hr: float = 10.0

    def __post_init__(self):
        if self.max_power_mw < 0:
            raise ValidationException("battery power bound cannot be negative", field="max_power_mw")
        if not 0 <= self.min_duration_hr <= self.max_duration_hr:
            raise ValidationException("duration bounds must satisfy 0 <= min <= max", field="min_duration_hr")


def annualization_factor(hours: int, dt: float = DEFAULT_TIMESTEP_HR) -> float:
    """Scale from a simulated span to one year; spans of a year or more are taken as annual"""
    span = hours * dt
    if span <= 0 or span >= MIN_ANNUAL_HOURS:
        return 1.0
    return HOURS_PER_YEAR / span


def _sale_series(schedule: Union[Schedule, Sequence[HourlyOperation], np.ndarray]) -> np.ndarray:
    if isinstance(schedule, Schedule):
        return schedule.total_sale
    if isinstance(schedule, np.ndarray):
        return schedule.astype(float)
    return np.array([op.total_sale for op in schedule], dtype=float)


def revenue(prices: PriceSeries, schedule: Union[Schedule, Sequence[HourlyOperation], np.ndarray],
            incentive: float = DEFAULT_RENEWABLE_INCENTIVE, dt: float = DEFAULT_TIMESTEP_HR) -> float:
    """Settlement sum of (price + incentive) * sold power * dt"""
    sold = _sale_series(schedule)
    if sold.size != len(prices):
        raise SeriesLengthException(f"schedule has {sold.size} hours, prices have {len(prices)}",
                                    expected=len(prices), actual=sold.size)
    return float(np.sum((prices.values + incentive) * sold) * dt)


@dataclass(eq=False)
class PtResult:
    """Price-taker optimum; revenues are over the priced span, NPV uses the annualized value"""
    design: BatteryDesign
    schedule: Schedule
    prices: PriceSeries
    wind_available: np.ndarray
    revenue: float
    market_revenue: float
    annualization: float
    om_cost: float
    capex: float
    npv: float
    objective: float
    finance: FinanceParams = field(default_factory=FinanceParams)
    backend: str = ""

    @property
    def annual_revenue(self) -> float:
        return self.revenue * self.annualization

    @property
    def curtailment(self) -> np.ndarray:
        return self.wind_available - self.schedule.wind_used

    def to_dict(self) -> Dict[str, Any]:
        return {
            "design": self.design.to_dict(),
            "hours": len(self.schedule),
            "bus": self.prices.bus,
            "scenario": self.prices.scenario,
            "revenue_usd": self.revenue,
            "market_revenue_usd": self.market_revenue,
            "annualization": self.annualization,
            "annual_revenue_usd": self.annual_revenue,
            "om_cost_usd_per_yr": self.om_cost,
            "capex_usd": self.capex,
            "npv_usd": self.npv,
            "objective_usd": self.objective,
            "finance": self.finance.to_dict(),
            "initial_state": self.schedule.initial_state.to_dict(),
            "backend": self.backend,
        }


@dataclass
class UpperBoundReport:
    pt_revenue: float
    realized_revenue: float
    gap: float
    holds: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "pt_revenue_usd": self.pt_revenue,
            "realized_revenue_usd": self.realized_revenue,
            "gap_usd": self.gap,
            "holds": self.holds,
        }


def _chain(model: LinearModel, current: np.ndarray, flows: Sequence[np.ndarray],
           flow_coeffs: Sequence[float], initial: float, prefix: str):
    """Rows x_t - x_{t-1} + sum(coeff * flow_t) = 0, with x_{-1} taken as a constant"""
    T = current.size
    first = {int(current[0]): 1.0}
    for idx, coeff in zip(flows, flow_coeffs):
        first[int(idx[0])] = first.get(int(idx[0]), 0.0) + coeff
    model.add_constraint(first, "=", initial, name=f"{prefix}[0]")
    if T > 1:
        cols = np.column_stack([current[1:], current[:-1]] + [idx[1:] for idx in flows])
        values = np.array([1.0, -1.0] + list(flow_coeffs))
        model.add_constraints(cols, values, "=", 0.0, prefix=f"{prefix}_next")


def add_storage_rows(model: LinearModel, charge: np.ndarray, discharge: np.ndarray, soc: np.ndarray,
                     throughput: np.ndarray, design: BatteryDesign, state: IesState,
                     dt: float = DEFAULT_TIMESTEP_HR, prefix: str = ""):
    """SoC and throughput recursions for one hourly block of battery variables"""
    _chain(model, soc, [charge, discharge], [-design.charge_eff * dt, dt / design.discharge_eff],
           state.soc, prefix=f"{prefix}soc_balance")
    _chain(model, throughput, [charge, discharge], [-0.5 * dt, -0.5 * dt],
           state.throughput, prefix=f"{prefix}throughput")


def optimize(prices: PriceSeries, wind: WindAsset, bounds: Optional[BatteryBounds] = None,
             finance: Optional[FinanceParams] = None, fixed_design: Optional[BatteryDesign] = None,
             initial_state: Optional[IesState] = None, periodic: bool = True,
             dt: float = DEFAULT_TIMESTEP_HR, start_hour: int = 0,
             design_template: Optional[BatteryDesign] = None,
             settings: Optional[SolverSettings] = None) -> PtResult:
    """Maximize lifetime NPV over battery size (unless fixed) and the hourly schedule"""
    finance = finance or FinanceParams()
    initial_state = initial_state or IesState()
    if fixed_design is None and bounds is None:
        raise ValidationException("either a fixed design or sizing bounds is required", field="bounds")
    template = fixed_design or design_template or BatteryDesign.none()

    T = len(prices)
    available = wind.available_series(start_hour, T)
    phi = finance.npv_factor
    scale = annualization_factor(T, dt)
    wind_om = KUSD * wind.om_cost_rate * wind.max_power_mw
    start = time.perf_counter()

    if T == 0:
        design = fixed_design or BatteryDesign.none()
        schedule = Schedule.empty(initial_state)
        annual_om, capital = om_cost(wind, design), capex(design)
        npv = finance.npv(0.0, annual_om, capital)
        return PtResult(design, schedule, prices, available, 0.0, 0.0, 1.0, annual_om, capital, npv, npv, finance)

    model = LinearModel("price_taker", sense="max")
    sale_value = phi * scale * (prices.values + finance.incentive) * dt
    power_ub = fixed_design.max_power_mw if fixed_design else bounds.max_power_mw
    pc = model.add_vars("charge", T, ub=power_ub)
    pd_ = model.add_vars("discharge", T, ub=power_ub, obj=sale_value)
    ps = model.add_vars("direct_sale", T, obj=sale_value)
    soc = model.add_vars("soc", T)
    throughput = model.add_vars("throughput", T)

    model.add_constraints(np.column_stack([pc, ps]), [1.0, 1.0], "<=", available, prefix="wind")
    add_storage_rows(model, pc, pd_, soc, throughput, template, initial_state, dt)

    if fixed_design is not None:
        model.add_constraints(np.column_stack([soc, throughput]), [1.0, template.degradation_coeff],
                              "<=", fixed_design.max_soc, prefix="capacity")
    else:
        p_bar = model.add_var("battery_power", ub=bounds.max_power_mw,
                              obj=-USD_PER_KUSD_PER_KW_MW * template.capex_rate)
        s_bar = model.add_var("battery_energy", obj=-phi * KUSD * template.om_cost_rate)
        ones = np.full(T, s_bar)
        model.add_constraints(np.column_stack([soc, throughput, ones]),
                              [1.0, template.degradation_coeff, -1.0], "<=", 0.0, prefix="capacity")
        p_col = np.full(T, p_bar)
        model.add_constraints(np.column_stack([pc, p_col]), [1.0, -1.0], "<=", 0.0, prefix="charge_rating")
        model.add_constraints(np.column_stack([pd_, p_col]), [1.0, -1.0], "<=", 0.0, prefix="discharge_rating")
        model.add_constraint({s_bar: 1.0, p_bar: -bounds.max_duration_hr}, "<=", 0.0, name="max_duration")
        model.add_constraint({p_bar: bounds.min_duration_hr, s_bar: -1.0}, "<=", 0.0, name="min_duration")

    if periodic:
        model.add_constraint({int(soc[-1]): 1.0}, "=", initial_state.soc, name="periodic_soc")

    solution = solve_lp(model, settings)
    if not solution.is_optimal:
        raise SolverFailureException(f"price-taker model is {solution.status}", status=solution.status)

    x = solution.x
    if fixed_design is not None:
        design = fixed_design
    else:
        power = float(x[model.var_index("battery_power")])
        energy = float(x[model.var_index("battery_energy")])
        if power <= SIZING_POWER_FLOOR_MW:
            power, duration = 0.0, 0.0
        else:
            duration = max(0.0, energy) / power
        design = BatteryDesign(
            max_power_mw=power,
            duration_hr=duration,
            charge_eff=template.charge_eff,
            discharge_eff=template.discharge_eff,
            degradation_coeff=template.degradation_coeff,
            om_cost_rate=template.om_cost_rate,
            capex_rate=template.capex_rate,
        )

    schedule = Schedule(
        charge=np.maximum(x[pc], 0.0),
        discharge=np.maximum(x[pd_], 0.0),
        direct_sale=np.maximum(x[ps], 0.0),
        soc=x[soc],
        throughput=x[throughput],
        initial_state=initial_state,
    )
    total = revenue(prices, schedule, finance.incentive, dt)
    market = revenue(prices, schedule, 0.0, dt)
    annual_om = om_cost(wind, design)
    capital = capex(design)
    npv = finance.npv(total * scale, annual_om, capital)
    objective = solution.objective - phi * wind_om

    logger.log_performance("price_taker.optimize", time.perf_counter() - start, status=solution.status,
                           backend=solution.backend)
    logger.info(
        f"Price-taker optimum: P_b={design.max_power_mw:.2f} MW, H={design.duration_hr:.2f} h, "
        f"revenue={total:,.0f} $, NPV={npv:,.0f} $"
    )
    return PtResult(
        design=design,
        schedule=schedule,
        prices=prices,
        wind_available=available,
        revenue=total,
        market_revenue=market,
        annualization=scale,
        om_cost=annual_om,
        capex=capital,
        npv=npv,
        objective=objective,
        finance=finance,
        backend=solution.backend,
    )


def evaluate_design(prices: PriceSeries, wind: WindAsset, design: BatteryDesign,
                    finance: Optional[FinanceParams] = None, **kwargs) -> PtResult:
    """Price-taker schedule for a pinned design"""
    return optimize(prices, wind, finance=finance, fixed_design=design, **kwargs)


def bound_report(pt_revenue: float, realized: float, tolerance: float = 1e-6) -> UpperBoundReport:
    """PT revenue must not fall below the realized revenue, up to a relative tolerance"""
    gap = pt_revenue - realized
    holds = gap >= -tolerance * max(1.0, abs(realized))
    if not holds:
        logger.warning(f"Price-taker bound violated: PT {pt_revenue:,.2f} $ < realized {realized:,.2f} $")
    return UpperBoundReport(pt_revenue=pt_revenue, realized_revenue=realized, gap=gap, holds=holds)


def pt_upper_bound_check(prices: PriceSeries, wind: WindAsset, fixed_design: BatteryDesign,
                         realized_ops: Union[Schedule, Sequence[HourlyOperation]],
                         initial_state: Optional[IesState] = None,
                         finance: Optional[FinanceParams] = None, dt: float = DEFAULT_TIMESTEP_HR,
                         start_hour: int = 0, tolerance: float = 1e-6,
                         settings: Optional[SolverSettings] = None) -> UpperBoundReport:
    """Perfect-foresight revenue against a realized trace priced at the same series"""
    finance = finance or FinanceParams()
    if initial_state is None:
        initial_state = realized_ops.initial_state if isinstance(realized_ops, Schedule) else IesState()
    realized = revenue(prices, realized_ops, finance.incentive, dt)
    best = optimize(prices, wind, finance=finance, fixed_design=fixed_design, initial_state=initial_state,
                    periodic=False, dt=dt, start_hour=start_hour, settings=settings)
    return bound_report(best.revenue, realized, tolerance)
