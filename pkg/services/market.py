"""
Miniature production cost model for iesbench
DC network case, day-ahead unit commitment, real-time dispatch with LMPs and the rolling IES loop
"""

import time
from dataclasses import dataclass, field, replace
from itertools import groupby
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from constants import (
    BALANCE_TOLERANCE_MW,
    DEFAULT_BASE_MVA,
    DEFAULT_BIDDING_WINDOW_HR,
    DEFAULT_FALLBACK_PRICE,
    DEFAULT_MIP_GAP,
    DEFAULT_RENEWABLE_OFFER_PRICE,
    DEFAULT_SCENARIO_COUNT,
    DEFAULT_SHED_PENALTY,
    DEFAULT_TERMINAL_SOC_VALUE,
    DEFAULT_TIMESTEP_HR,
    DEFAULT_UC_LOOKAHEAD_HR,
    HOURS_PER_DAY,
    POWER_TOLERANCE_MW,
    SIMULATION_MODES,
    TIME_VARIANT_MODES,
    WIND_ONLY_MODES,
)
from core import BatteryDesign, IesState, Schedule, WindAsset, feasible_envelope, soc_step
from exceptions import (
    SeriesLengthException,
    SimulationAbortedException,
    SolverFailureException,
    ValidationException,
)
from services.bidder import Backcaster, BidCurve, solve_bidding, to_bid_curve, track_dispatch
from services.optimizer import OPTIMAL, LinearModel, Solution, SolverSettings, fixed_integer_duals, solve_milp
from utils.logger import get_logger
from utils.validators import validate_case

logger = get_logger(__name__)

FLOW_TOLERANCE_MW = 1e-6


@dataclass(frozen=True)
class Bus:
    name: str
    load_share: float = 0.0


@dataclass(frozen=True)
class Line:
    name: str
    from_bus: str
    to_bus: str
    susceptance_pu: float
    limit_mw: float


@dataclass(frozen=True)
class ThermalUnit:
    """Thermal generator with convex piecewise-linear energy cost

    segments are (size MW, marginal cost $/MWh) blocks summing to pmax;
    initial_status_hr is positive when on for that many hours, negative when off.
    """
    name: str
    bus: str
    pmin_mw: float
    pmax_mw: float
    ramp_mw_per_hr: float
    min_up_hr: int
    min_down_hr: int
    segments: Tuple[Tuple[float, float], ...]
    startup_cost: float = 0.0
    no_load_cost: float = 0.0
    initial_status_hr: int = -HOURS_PER_DAY
    initial_power_mw: float = 0.0

    @property
    def startup_limit(self) -> float:
        return max(self.pmin_mw, self.ramp_mw_per_hr)

    @property
    def shutdown_limit(self) -> float:
        return max(self.pmin_mw, self.ramp_mw_per_hr)

    @property
    def initially_on(self) -> bool:
        return self.initial_status_hr > 0

    @property
    def segment_sizes(self) -> np.ndarray:
        return np.array([size for size, _ in self.segments], dtype=float)

    @property
    def segment_costs(self) -> np.ndarray:
        return np.array([cost for _, cost in self.segments], dtype=float)

    def marginal_cost_at(self, power: float) -> float:
        edges = np.cumsum(self.segment_sizes)
        k = int(np.searchsorted(edges, power - POWER_TOLERANCE_MW))
        return float(self.segment_costs[min(k, len(self.segments) - 1)])


@dataclass(frozen=True, eq=False)
class RenewableUnit:
    """Non-IES renewable offered at zero cost; curtailment is free"""
    name: str
    bus: str
    kind: str
    max_power_mw: float
    capacity_factors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "capacity_factors", np.asarray(self.capacity_factors, dtype=float).reshape(-1))

    def available(self, hour: int) -> float:
        return float(self.capacity_factors[hour] * self.max_power_mw)


@dataclass(frozen=True)
class IesSite:
    bus: str
    wind: WindAsset


@dataclass(eq=False)
class NetworkCase:
    """Buses, lines, fleet and hourly series of a desk-scale market"""
    name: str
    buses: List[Bus]
    lines: List[Line]
    thermal_units: List[ThermalUnit]
    renewables: List[RenewableUnit]
    ies: IesSite
    load_mw: np.ndarray
    reference_bus: str
    historical_lmp: Optional[np.ndarray] = None
    base_mva: float = DEFAULT_BASE_MVA
    shed_penalty: float = DEFAULT_SHED_PENALTY

    def __post_init__(self):
        self.load_mw = np.asarray(self.load_mw, dtype=float).reshape(-1)
        if self.historical_lmp is not None:
            self.historical_lmp = np.asarray(self.historical_lmp, dtype=float).reshape(-1)

    @property
    def horizon(self) -> int:
        return int(self.load_mw.size)

    @property
    def bus_names(self) -> Tuple[str, ...]:
        return tuple(bus.name for bus in self.buses)

    @property
    def bus_index(self) -> Dict[str, int]:
        return {bus.name: b for b, bus in enumerate(self.buses)}

    @property
    def load_shares(self) -> np.ndarray:
        return np.array([bus.load_share for bus in self.buses], dtype=float)

    def bus_load(self, hour: int) -> np.ndarray:
        return self.load_mw[hour] * self.load_shares

    def with_ies_wind(self, wind: WindAsset) -> "NetworkCase":
        return replace(self, ies=IesSite(self.ies.bus, wind))

    def validate(self) -> Dict[str, Any]:
        return validate_case(self)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "buses": len(self.buses),
            "lines": len(self.lines),
            "thermal_units": len(self.thermal_units),
            "renewables": len(self.renewables),
            "ies_bus": self.ies.bus,
            "reference_bus": self.reference_bus,
            "horizon": self.horizon,
            "base_mva": self.base_mva,
            "shed_penalty": self.shed_penalty,
        }


@dataclass(frozen=True)
class UnitInitial:
    status_hr: int
    power_mw: float


@dataclass(eq=False)
class Commitment:
    """Day-ahead on/off schedule; arrays are [unit, hour] from start_hour"""
    unit_names: Tuple[str, ...]
    start_hour: int
    status: np.ndarray
    startup: np.ndarray
    shutdown: np.ndarray
    dispatch: np.ndarray
    initial: Tuple[UnitInitial, ...]
    cost: float
    mip_gap: float = 0.0
    solve_status: str = OPTIMAL

    @property
    def hours(self) -> int:
        return int(self.status.shape[1])

    def status_at(self, unit: int, hour: int) -> int:
        offset = hour - self.start_hour
        if not 0 <= offset < self.hours:
            raise ValidationException(f"hour {hour} outside commitment [{self.start_hour}, "
                                      f"{self.start_hour + self.hours})", field="hour")
        return int(self.status[unit, offset])

    def carryover(self, length: int = HOURS_PER_DAY) -> List[UnitInitial]:
        """Initial conditions for the next day after the first `length` hours"""
        length = min(length, self.hours)
        result = []
        for g, init in enumerate(self.initial):
            block = self.status[g, :length]
            last = int(block[-1])
            changes = np.nonzero(block != last)[0]
            run = length - 1 - int(changes[-1]) if changes.size else length
            if not changes.size and (init.status_hr > 0) == bool(last):
                run += abs(init.status_hr)
            power = float(self.dispatch[g, length - 1]) if last else 0.0
            result.append(UnitInitial(run if last else -run, power))
        return result

    def check(self, units: Sequence[ThermalUnit]) -> List[str]:
        """Logic and min up/down violations, as readable strings"""
        issues = []
        for g, unit in enumerate(units):
            u = self.status[g]
            prev = np.concatenate([[1 if self.initial[g].status_hr > 0 else 0], u[:-1]])
            if np.any(np.abs((u - prev) - (self.startup[g] - self.shutdown[g])) > 1e-6):
                issues.append(f"{unit.name}: startup/shutdown indicators disagree with status")
            init_hr = self.initial[g].status_hr
            history = [1 if init_hr > 0 else 0] * abs(init_hr) + [int(s) for s in u]
            runs = [(value, len(list(group))) for value, group in groupby(history)]
            position = -abs(init_hr)
            # the last run may continue past the horizon
            for value, length in runs[:-1]:
                required = unit.min_up_hr if value else unit.min_down_hr
                if length < required:
                    state = "up" if value else "down"
                    issues.append(f"{unit.name}: min {state} time broken by the run starting at hour {position}")
                position += length
        return issues


@dataclass(frozen=True, eq=False)
class IesOffer:
    """Expected IES offer visible to the day-ahead problem"""
    power: np.ndarray
    price: np.ndarray

    def __post_init__(self):
        power = np.asarray(self.power, dtype=float).reshape(-1)
        price = np.broadcast_to(np.asarray(self.price, dtype=float), power.shape).copy()
        object.__setattr__(self, "power", power)
        object.__setattr__(self, "price", price)
        if np.any(power < 0):
            raise ValidationException("offered power cannot be negative", field="power")


@dataclass(eq=False)
class MarketOutcome:
    hour: int
    buses: Tuple[str, ...]
    lmp: np.ndarray
    unit_dispatch: np.ndarray
    renewable_dispatch: np.ndarray
    ies_cleared: float
    flows: np.ndarray
    shed: np.ndarray
    spill: np.ndarray
    cost: float
    congested_lines: Tuple[str, ...] = ()

    @property
    def is_congested(self) -> bool:
        return bool(self.congested_lines)

    def lmp_at(self, bus: str) -> float:
        return float(self.lmp[self.buses.index(bus)])

    def balance_residual(self, case: NetworkCase) -> float:
        """Largest nodal power mismatch in MW"""
        index = case.bus_index
        net = -case.bus_load(self.hour) + self.shed - self.spill
        for g, unit in enumerate(case.thermal_units):
            net[index[unit.bus]] += self.unit_dispatch[g]
        for k, unit in enumerate(case.renewables):
            net[index[unit.bus]] += self.renewable_dispatch[k]
        net[index[case.ies.bus]] += self.ies_cleared
        for l, line in enumerate(case.lines):
            net[index[line.from_bus]] -= self.flows[l]
            net[index[line.to_bus]] += self.flows[l]
        return float(np.abs(net).max()) if net.size else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "hour": self.hour,
            "lmp": dict(zip(self.buses, self.lmp.tolist())),
            "ies_cleared_mw": self.ies_cleared,
            "shed_mw": float(self.shed.sum()),
            "spill_mw": float(self.spill.sum()),
            "cost_usd": self.cost,
            "congested_lines": list(self.congested_lines),
        }


@dataclass
class SimulationSettings:
    dt: float = DEFAULT_TIMESTEP_HR
    uc_lookahead_hr: int = DEFAULT_UC_LOOKAHEAD_HR
    mip_gap: float = DEFAULT_MIP_GAP
    ies_visible_in_da: bool = True
    da_offer_price: float = DEFAULT_RENEWABLE_OFFER_PRICE
    bidding_window_hr: int = DEFAULT_BIDDING_WINDOW_HR
    scenario_count: int = DEFAULT_SCENARIO_COUNT
    terminal_soc_value: float = DEFAULT_TERMINAL_SOC_VALUE
    fallback_price: float = DEFAULT_FALLBACK_PRICE
    start_hour: int = 0
    solver: SolverSettings = field(default_factory=SolverSettings)


@dataclass(eq=False)
class HourRecord:
    hour: int
    lmp: Tuple[float, ...]
    ies_lmp: float
    load_mw: float
    ies_bus_load_mw: float
    wind_available_mw: float
    offered_mw: float
    cleared_mw: float
    shortfall_mw: float
    charge: float
    discharge: float
    direct_sale: float
    soc: float
    throughput: float
    settlement_usd: float
    shed_mw: float
    spill_mw: float
    congested: bool


LOG_COLUMNS = [
    "hour", "ies_lmp", "load_mw", "ies_bus_load_mw", "wind_available_mw", "offered_mw", "cleared_mw",
    "shortfall_mw", "wind_used", "charge", "discharge", "direct_sale", "total_sale", "soc", "throughput",
    "settlement_usd", "shed_mw", "spill_mw", "congested",
]


@dataclass(eq=False)
class MarketLog:
    """Per-hour market outcomes and realized IES operation of one simulation"""
    mode: str
    case_name: str
    ies_bus: str
    buses: Tuple[str, ...]
    design: BatteryDesign
    initial_state: IesState = field(default_factory=IesState)
    start_hour: int = 0
    dt: float = DEFAULT_TIMESTEP_HR
    records: List[HourRecord] = field(default_factory=list)
    bids: List[BidCurve] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: HourRecord, bid: Optional[BidCurve] = None):
        self.records.append(record)
        if bid is not None:
            self.bids.append(bid)

    def _column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def hours(self) -> np.ndarray:
        return np.array([r.hour for r in self.records], dtype=int)

    @property
    def ies_lmp(self) -> np.ndarray:
        return self._column("ies_lmp")

    @property
    def cleared(self) -> np.ndarray:
        return self._column("cleared_mw")

    @property
    def available(self) -> np.ndarray:
        return self._column("wind_available_mw")

    @property
    def ies_bus_load(self) -> np.ndarray:
        return self._column("ies_bus_load_mw")

    @property
    def settlements(self) -> np.ndarray:
        return self._column("settlement_usd")

    @property
    def revenue(self) -> float:
        return float(self.settlements.sum())

    @property
    def final_state(self) -> IesState:
        if not self.records:
            return self.initial_state
        return IesState(max(0.0, self.records[-1].soc), self.records[-1].throughput)

    def lmp_matrix(self) -> np.ndarray:
        return np.array([r.lmp for r in self.records], dtype=float).reshape(len(self), len(self.buses))

    def schedule(self) -> Schedule:
        return Schedule(
            charge=self._column("charge"),
            discharge=self._column("discharge"),
            direct_sale=self._column("direct_sale"),
            soc=self._column("soc"),
            throughput=self._column("throughput"),
            initial_state=self.initial_state,
        )

    def settlement_residual(self) -> float:
        """Largest gap between stored settlements and LMP * cleared power * dt"""
        if not self.records:
            return 0.0
        return float(np.abs(self.settlements - self.ies_lmp * self.cleared * self.dt).max())

    def metadata(self) -> Dict[str, Any]:
        return {
            "mode": self.mode,
            "case_name": self.case_name,
            "ies_bus": self.ies_bus,
            "buses": list(self.buses),
            "design": self.design.to_dict(),
            "initial_state": self.initial_state.to_dict(),
            "start_hour": self.start_hour,
            "dt": self.dt,
            "hours": len(self),
        }

    def to_frame(self) -> pd.DataFrame:
        schedule = self.schedule()
        frame = pd.DataFrame({
            "hour": self.hours,
            "ies_lmp": self.ies_lmp,
            "load_mw": self._column("load_mw"),
            "ies_bus_load_mw": self.ies_bus_load,
            "wind_available_mw": self.available,
            "offered_mw": self._column("offered_mw"),
            "cleared_mw": self.cleared,
            "shortfall_mw": self._column("shortfall_mw"),
            "wind_used": schedule.wind_used,
            "charge": schedule.charge,
            "discharge": schedule.discharge,
            "direct_sale": schedule.direct_sale,
            "total_sale": schedule.total_sale,
            "soc": schedule.soc,
            "throughput": schedule.throughput,
            "settlement_usd": self.settlements,
            "shed_mw": self._column("shed_mw"),
            "spill_mw": self._column("spill_mw"),
            "congested": np.array([r.congested for r in self.records], dtype=bool),
        }, columns=LOG_COLUMNS)
        lmps = self.lmp_matrix()
        for b, bus in enumerate(self.buses):
            frame[f"lmp_{bus}"] = lmps[:, b]
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, metadata: Dict[str, Any]) -> "MarketLog":
        buses = tuple(metadata["buses"])
        log = cls(
            mode=metadata["mode"],
            case_name=metadata["case_name"],
            ies_bus=metadata["ies_bus"],
            buses=buses,
            design=BatteryDesign.from_dict(metadata["design"]),
            initial_state=IesState(**metadata["initial_state"]),
            start_hour=int(metadata.get("start_hour", 0)),
            dt=float(metadata.get("dt", DEFAULT_TIMESTEP_HR)),
        )
        lmp_columns = [f"lmp_{bus}" for bus in buses]
        for row in frame.itertuples(index=False):
            values = row._asdict()
            log.append(HourRecord(
                hour=int(values["hour"]),
                lmp=tuple(float(values[c]) for c in lmp_columns),
                ies_lmp=float(values["ies_lmp"]),
                load_mw=float(values["load_mw"]),
                ies_bus_load_mw=float(values["ies_bus_load_mw"]),
                wind_available_mw=float(values["wind_available_mw"]),
                offered_mw=float(values["offered_mw"]),
                cleared_mw=float(values["cleared_mw"]),
                shortfall_mw=float(values["shortfall_mw"]),
                charge=float(values["charge"]),
                discharge=float(values["discharge"]),
                direct_sale=float(values["direct_sale"]),
                soc=float(values["soc"]),
                throughput=float(values["throughput"]),
                settlement_usd=float(values["settlement_usd"]),
                shed_mw=float(values["shed_mw"]),
                spill_mw=float(values["spill_mw"]),
                congested=bool(values["congested"]),
            ))
        return log


# Model assembly


@dataclass
class _NetworkHandles:
    balance_rows: np.ndarray
    flows: np.ndarray
    shed: np.ndarray
    spill: np.ndarray


def _add_unit_hour(model: LinearModel, unit: ThermalUnit, u: int, tag: str, dt: float) -> int:
    """Segment variables, p = sum(q) and pmin*u <= p <= pmax*u; returns the p column"""
    q = model.add_vars(f"q_{unit.name}{tag}", len(unit.segments), ub=unit.segment_sizes,
                       obj=unit.segment_costs * dt)
    p = model.add_var(f"p_{unit.name}{tag}", ub=unit.pmax_mw)
    model.add_constraint([(p, 1.0)] + [(int(j), -1.0) for j in q], "=", 0.0, name=f"segments_{unit.name}{tag}")
    model.add_constraint({p: 1.0, u: -unit.pmin_mw}, ">=", 0.0, name=f"pmin_{unit.name}{tag}")
    model.add_constraint({p: 1.0, u: -unit.pmax_mw}, "<=", 0.0, name=f"pmax_{unit.name}{tag}")
    return p


def _add_network_hour(model: LinearModel, case: NetworkCase, hour: int, tag: str,
                      injections: Dict[int, List[Tuple[int, float]]], dt: float) -> _NetworkHandles:
    """DC flow, shed/spill slacks and one balance row per bus for one hour"""
    loads = case.bus_load(hour)
    index = case.bus_index
    B = len(case.buses)
    ref = index[case.reference_bus]
    theta_lb = np.full(B, -np.inf)
    theta_ub = np.full(B, np.inf)
    theta_lb[ref] = theta_ub[ref] = 0.0
    theta = model.add_vars(f"theta{tag}", B, lb=theta_lb, ub=theta_ub)
    limits = np.array([line.limit_mw for line in case.lines], dtype=float)
    flows = model.add_vars(f"flow{tag}", len(case.lines), lb=-limits, ub=limits)
    for l, line in enumerate(case.lines):
        b = case.base_mva * line.susceptance_pu
        model.add_constraint(
            {int(flows[l]): 1.0, int(theta[index[line.from_bus]]): -b, int(theta[index[line.to_bus]]): b},
            "=", 0.0, name=f"dc_flow_{line.name}{tag}",
        )
    shed = model.add_vars(f"shed{tag}", B, ub=np.maximum(loads, 0.0), obj=case.shed_penalty * dt)
    spill = model.add_vars(f"spill{tag}", B, obj=case.shed_penalty * dt)

    rows = []
    for b, bus in enumerate(case.buses):
        coeffs = list(injections.get(b, [])) + [(int(shed[b]), 1.0), (int(spill[b]), -1.0)]
        for l, line in enumerate(case.lines):
            if line.from_bus == bus.name:
                coeffs.append((int(flows[l]), -1.0))
            elif line.to_bus == bus.name:
                coeffs.append((int(flows[l]), 1.0))
        rows.append(model.add_constraint(coeffs, "=", float(loads[b]), name=f"balance_{bus.name}{tag}"))
    return _NetworkHandles(np.array(rows, dtype=int), flows, shed, spill)


def _add_renewables(model: LinearModel, case: NetworkCase, hour: int, tag: str,
                    injections: Dict[int, List[Tuple[int, float]]]) -> np.ndarray:
    index = case.bus_index
    columns = []
    for unit in case.renewables:
        j = model.add_var(f"r_{unit.name}{tag}", ub=unit.available(hour))
        injections.setdefault(index[unit.bus], []).append((j, 1.0))
        columns.append(j)
    return np.array(columns, dtype=int)


def _uc_model(case: NetworkCase, start: int, hours: int, offer: Optional[IesOffer],
              initial: Sequence[UnitInitial], dt: float) -> Tuple[LinearModel, Dict[str, np.ndarray]]:
    model = LinearModel(f"uc_day{start // HOURS_PER_DAY}", sense="min")
    index = case.bus_index
    G = len(case.thermal_units)
    u = np.zeros((G, hours), dtype=int)
    v = np.zeros((G, hours), dtype=int)
    w = np.zeros((G, hours), dtype=int)
    p = np.zeros((G, hours), dtype=int)
    injections_by_hour: List[Dict[int, List[Tuple[int, float]]]] = [dict() for _ in range(hours)]

    for g, unit in enumerate(case.thermal_units):
        u[g] = model.add_vars(f"u_{unit.name}", hours, ub=1.0, integer=True, obj=unit.no_load_cost * dt)
        v[g] = model.add_vars(f"v_{unit.name}", hours, ub=1.0, obj=unit.startup_cost)
        w[g] = model.add_vars(f"w_{unit.name}", hours, ub=1.0)
        for t in range(hours):
            p[g, t] = _add_unit_hour(model, unit, int(u[g, t]), f"[{t}]", dt)
            injections_by_hour[t].setdefault(index[unit.bus], []).append((int(p[g, t]), 1.0))

        init = initial[g]
        on0 = 1.0 if init.status_hr > 0 else 0.0
        model.add_constraint({u[g, 0]: 1.0, v[g, 0]: -1.0, w[g, 0]: 1.0}, "=", on0, name=f"logic_{unit.name}[0]")
        if hours > 1:
            model.add_constraints(np.column_stack([u[g, 1:], u[g, :-1], v[g, 1:], w[g, 1:]]),
                                  [1.0, -1.0, -1.0, 1.0], "=", 0.0, prefix=f"logic_{unit.name}_next")

        for t in range(hours):
            if unit.min_up_hr > 1:
                window = range(max(0, t - unit.min_up_hr + 1), t + 1)
                model.add_constraint([(int(v[g, k]), 1.0) for k in window] + [(int(u[g, t]), -1.0)],
                                     "<=", 0.0, name=f"min_up_{unit.name}[{t}]")
            if unit.min_down_hr > 1:
                window = range(max(0, t - unit.min_down_hr + 1), t + 1)
                model.add_constraint([(int(w[g, k]), 1.0) for k in window] + [(int(u[g, t]), 1.0)],
                                     "<=", 1.0, name=f"min_down_{unit.name}[{t}]")

        if init.status_hr > 0:
            for t in range(min(hours, max(0, unit.min_up_hr - init.status_hr))):
                model.variables[int(u[g, t])].lb = 1.0
        else:
            for t in range(min(hours, max(0, unit.min_down_hr + init.status_hr))):
                model.variables[int(u[g, t])].ub = 0.0

        R, SU, SD = unit.ramp_mw_per_hr, unit.startup_limit, unit.shutdown_limit
        model.add_constraint({p[g, 0]: 1.0, v[g, 0]: -SU}, "<=", init.power_mw + R * on0,
                             name=f"ramp_up_{unit.name}[0]")
        model.add_constraint({p[g, 0]: -1.0, u[g, 0]: -R, w[g, 0]: -SD}, "<=", -init.power_mw,
                             name=f"ramp_down_{unit.name}[0]")
        if hours > 1:
            model.add_constraints(np.column_stack([p[g, 1:], p[g, :-1], u[g, :-1], v[g, 1:]]),
                                  [1.0, -1.0, -R, -SU], "<=", 0.0, prefix=f"ramp_up_{unit.name}_next")
            model.add_constraints(np.column_stack([p[g, :-1], p[g, 1:], u[g, 1:], w[g, 1:]]),
                                  [1.0, -1.0, -R, -SD], "<=", 0.0, prefix=f"ramp_down_{unit.name}_next")

    ies_bus = index[case.ies.bus]
    for t in range(hours):
        hour = start + t
        _add_renewables(model, case, hour, f"[{t}]", injections_by_hour[t])
        if offer is not None:
            y = model.add_var(f"ies[{t}]", ub=offer.power[t], obj=offer.price[t] * dt)
            injections_by_hour[t].setdefault(ies_bus, []).append((y, 1.0))
        _add_network_hour(model, case, hour, f"[{t}]", injections_by_hour[t], dt)

    return model, {"u": u, "v": v, "w": w, "p": p}


def default_initial(case: NetworkCase) -> List[UnitInitial]:
    return [UnitInitial(unit.initial_status_hr, unit.initial_power_mw) for unit in case.thermal_units]


def day_ahead_uc(case: NetworkCase, day: int, ies_offer: Optional[IesOffer] = None,
                 initial: Optional[Sequence[UnitInitial]] = None,
                 settings: Optional[SimulationSettings] = None) -> Commitment:
    """Cost-minimizing commitment for one day plus lookahead; shedding keeps it feasible"""
    settings = settings or SimulationSettings()
    start = day * HOURS_PER_DAY
    if not 0 <= start < case.horizon:
        raise ValidationException(f"day {day} is outside the case horizon of {case.horizon} hours", field="day")
    hours = min(HOURS_PER_DAY + settings.uc_lookahead_hr, case.horizon - start)
    initial = list(initial) if initial is not None else default_initial(case)
    if ies_offer is not None and ies_offer.power.size < hours:
        raise SeriesLengthException(f"IES offer covers {ies_offer.power.size} of {hours} UC hours",
                                    expected=hours, actual=ies_offer.power.size)

    began = time.perf_counter()
    model, handles = _uc_model(case, start, hours, ies_offer, initial, settings.dt)
    solution = solve_milp(model, settings.mip_gap, settings.solver)
    if not solution.has_incumbent:
        raise SolverFailureException(f"unit commitment for day {day} is {solution.status}", status=solution.status)

    x = solution.x
    status = np.round(x[handles["u"]]).astype(int)
    logger.log_performance("market.day_ahead_uc", time.perf_counter() - began, status=solution.status,
                           nodes=solution.nodes, objective=solution.objective)
    return Commitment(
        unit_names=tuple(unit.name for unit in case.thermal_units),
        start_hour=start,
        status=status,
        startup=x[handles["v"]],
        shutdown=x[handles["w"]],
        dispatch=x[handles["p"]],
        initial=tuple(initial),
        cost=solution.objective,
        mip_gap=solution.mip_gap,
        solve_status=solution.status,
    )


def real_time_dispatch(case: NetworkCase, hour: int, commitment: Commitment, ies_bid: Optional[BidCurve] = None,
                       settings: Optional[SimulationSettings] = None) -> MarketOutcome:
    """Single-hour dispatch at fixed commitment; LMPs are the bus balance duals"""
    settings = settings or SimulationSettings()
    dt = settings.dt
    index = case.bus_index
    model = LinearModel(f"rt_h{hour}", sense="min")
    injections: Dict[int, List[Tuple[int, float]]] = {}

    G = len(case.thermal_units)
    u = model.add_vars("u", G, ub=1.0, integer=True, obj=[unit.no_load_cost * dt for unit in case.thermal_units])
    p = np.zeros(G, dtype=int)
    for g, unit in enumerate(case.thermal_units):
        p[g] = _add_unit_hour(model, unit, int(u[g]), "", dt)
        injections.setdefault(index[unit.bus], []).append((int(p[g]), 1.0))
    renewables = _add_renewables(model, case, hour, "", injections)

    ies = np.zeros(0, dtype=int)
    if ies_bid is not None:
        segments = ies_bid.segments()
        if segments:
            prices, sizes = zip(*segments)
            ies = model.add_vars("ies", len(segments), ub=sizes, obj=np.array(prices) * dt)
            injections.setdefault(index[case.ies.bus], []).extend((int(j), 1.0) for j in ies)
    network = _add_network_hour(model, case, hour, "", injections, dt)

    incumbent_x = np.zeros(model.num_vars)
    incumbent_x[u] = [commitment.status_at(g, hour) for g in range(G)]
    solution = fixed_integer_duals(model, Solution(status=OPTIMAL, x=incumbent_x), settings.solver)
    if not solution.is_optimal:
        raise SolverFailureException(f"real-time dispatch at hour {hour} is {solution.status}",
                                     status=solution.status)

    x = solution.x
    flows = x[network.flows]
    congested = tuple(line.name for l, line in enumerate(case.lines)
                      if abs(flows[l]) >= line.limit_mw - FLOW_TOLERANCE_MW)
    outcome = MarketOutcome(
        hour=hour,
        buses=case.bus_names,
        lmp=solution.duals[network.balance_rows] / dt,
        unit_dispatch=x[p],
        renewable_dispatch=x[renewables] if renewables.size else np.zeros(0),
        ies_cleared=float(x[ies].sum()) if ies.size else 0.0,
        flows=flows,
        shed=x[network.shed],
        spill=x[network.spill],
        cost=solution.objective,
        congested_lines=congested,
    )
    residual = outcome.balance_residual(case)
    if residual > BALANCE_TOLERANCE_MW:
        logger.warning(f"Hour {hour} clears with a nodal mismatch of {residual:.3g} MW", hour=hour)
    return outcome


def _check_run(case: NetworkCase, wind: WindAsset, design: BatteryDesign, mode: str,
               start: int, span: int):
    if mode not in SIMULATION_MODES:
        raise ValidationException(f"unknown mode '{mode}', expected one of {SIMULATION_MODES}", field="mode")
    if mode in WIND_ONLY_MODES and not design.is_empty:
        raise ValidationException(f"mode {mode} requires a zero battery", field="design")
    if start % HOURS_PER_DAY:
        raise ValidationException("simulation must start at the beginning of a day", field="start_hour")
    if span < 0:
        raise ValidationException("span cannot be negative", field="span")
    if start + span > case.horizon:
        raise SeriesLengthException(f"span [{start}, {start + span}) exceeds case horizon {case.horizon}",
                                    expected=start + span, actual=case.horizon)
    if start + span > wind.horizon:
        raise SeriesLengthException(f"span [{start}, {start + span}) exceeds wind series of {wind.horizon} hours",
                                    expected=start + span, actual=wind.horizon)


def run_simulation(case: NetworkCase, wind: Optional[WindAsset] = None, design: Optional[BatteryDesign] = None,
                   mode: str = "TI_zero_cost", span: Optional[int] = None,
                   settings: Optional[SimulationSettings] = None,
                   initial_state: Optional[IesState] = None) -> MarketLog:
    """Rolling day-ahead commitment and hourly real-time clearing with the IES in the loop"""
    settings = settings or SimulationSettings()
    wind = wind or case.ies.wind
    design = design or BatteryDesign.none()
    state = initial_state or IesState()
    start = settings.start_hour
    span = case.horizon - start if span is None else span
    _check_run(case, wind, design, mode, start, span)

    dt = settings.dt
    log = MarketLog(mode=mode, case_name=case.name, ies_bus=case.ies.bus, buses=case.bus_names,
                    design=design, initial_state=state, start_hour=start, dt=dt)
    if span == 0:
        return log

    label = design.label(wind)
    logger.info(f"Simulating {mode} for {span} h from hour {start}, design {label}", mode=mode, design=label)
    began = time.perf_counter()
    backcaster = Backcaster(case.historical_lmp, settings.scenario_count, settings.bidding_window_hr,
                            settings.fallback_price)
    ies_bus = case.bus_index[case.ies.bus]
    initial = default_initial(case)
    commitment: Optional[Commitment] = None

    for hour in range(start, start + span):
        try:
            if hour % HOURS_PER_DAY == 0 or commitment is None:
                day = hour // HOURS_PER_DAY
                offer = None
                if settings.ies_visible_in_da:
                    horizon = min(HOURS_PER_DAY + settings.uc_lookahead_hr, case.horizon - hour)
                    forecast = wind.available_series(hour, min(horizon, wind.horizon - hour))
                    forecast = np.pad(forecast, (0, horizon - forecast.size))
                    offer = IesOffer(power=forecast, price=np.full(horizon, settings.da_offer_price))
                commitment = day_ahead_uc(case, day, offer, initial, settings)
                initial = commitment.carryover(HOURS_PER_DAY)
                logger.debug(f"Day {day} committed at cost {commitment.cost:,.0f} $", hour=hour, mode=mode)

            capacity_factor = float(wind.capacity_factors[hour])
            envelope = feasible_envelope(state, capacity_factor, wind, design, dt)
            if mode in TIME_VARIANT_MODES:
                scenarios = backcaster.scenarios(hour)
                plan = solve_bidding(state, wind.window(hour, settings.bidding_window_hr), scenarios, design,
                                     wind, dt, settings.terminal_soc_value, settings.solver, hour=hour)
                bid = to_bid_curve(plan, scenarios, 0, hour=hour).capped(envelope.p_max)
            else:
                bid = BidCurve.zero_cost(hour, envelope.p_max)

            outcome = real_time_dispatch(case, hour, commitment, bid, settings)
            tracked = track_dispatch(state, outcome.ies_cleared, capacity_factor, design, wind, dt)
            state = soc_step(state, tracked.operation, design, dt, hour=hour)
            ies_lmp = float(outcome.lmp[ies_bus])
            op = tracked.operation

            log.append(HourRecord(
                hour=hour,
                lmp=tuple(float(v) for v in outcome.lmp),
                ies_lmp=ies_lmp,
                load_mw=float(case.load_mw[hour]),
                ies_bus_load_mw=float(case.bus_load(hour)[ies_bus]),
                wind_available_mw=envelope.available_wind,
                offered_mw=bid.max_power,
                cleared_mw=outcome.ies_cleared,
                shortfall_mw=tracked.shortfall,
                charge=op.charge,
                discharge=op.discharge,
                direct_sale=op.direct_sale,
                soc=state.soc,
                throughput=state.throughput,
                settlement_usd=ies_lmp * outcome.ies_cleared * dt,
                shed_mw=float(outcome.shed.sum()),
                spill_mw=float(outcome.spill.sum()),
                congested=outcome.is_congested,
            ), bid=bid)
            backcaster.record(hour, ies_lmp)
        except Exception as exc:
            logger.error(f"Simulation aborted at hour {hour}: {exc}", hour=hour, mode=mode)
            raise SimulationAbortedException(f"simulation aborted at hour {hour}: {exc}", hour=hour,
                                             partial_log=log, cause=exc) from exc

        if (hour + 1) % HOURS_PER_DAY == 0:
            logger.info(f"Day {hour // HOURS_PER_DAY} done: revenue so far {log.revenue:,.0f} $",
                        hour=hour, mode=mode)

    logger.log_performance("market.run_simulation", time.perf_counter() - began, mode=mode, design=label)
    return log
