"""
Wind-battery device model for iesbench
Feasibility, state-of-charge dynamics, degradation and cost accounting
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from constants import (
    DEFAULT_BATTERY_CAPEX_RATE,
    DEFAULT_BATTERY_OM_RATE,
    DEFAULT_CHARGE_EFFICIENCY,
    DEFAULT_DEGRADATION_COEFF,
    DEFAULT_DISCHARGE_EFFICIENCY,
    DEFAULT_INITIAL_SOC_MWH,
    DEFAULT_INITIAL_THROUGHPUT_MWH,
    DEFAULT_TIMESTEP_HR,
    DEFAULT_WIND_OM_RATE,
    KUSD,
    POWER_TOLERANCE_MW,
    SIMULTANEOUS_FLOW_THRESHOLD_MW,
    SOC_TOLERANCE_MWH,
    USD_PER_KUSD_PER_KW_MW,
)
from exceptions import InfeasibleTransitionException, SeriesLengthException, ValidationException
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class WindAsset:
    """Wind farm rating, hourly capacity factors and O&M rate (k$/MW-yr)"""
    max_power_mw: float
    capacity_factors: np.ndarray
    om_cost_rate: float = DEFAULT_WIND_OM_RATE

    def __post_init__(self):
        factors = np.asarray(self.capacity_factors, dtype=float).reshape(-1)
        object.__setattr__(self, "capacity_factors", factors)

        if not np.isfinite(self.max_power_mw) or self.max_power_mw <= 0:
            raise ValidationException("wind max power must be positive", field="max_power_mw")
        if not np.all(np.isfinite(factors)):
            raise ValidationException("capacity factors must be finite", field="capacity_factors")
        if factors.size and (factors.min() < 0.0 or factors.max() > 1.0):
            raise ValidationException("capacity factors must lie in [0, 1]", field="capacity_factors")
        if self.om_cost_rate < 0:
            raise ValidationException("wind O&M rate cannot be negative", field="om_cost_rate")

    @property
    def horizon(self) -> int:
        return int(self.capacity_factors.size)

    def available(self, hour: int) -> float:
        """Available wind power f_t * P_w at one hour"""
        return float(self.capacity_factors[hour] * self.max_power_mw)

    def available_series(self, start: int = 0, length: Optional[int] = None) -> np.ndarray:
        stop = self.horizon if length is None else start + length
        if stop > self.horizon or start < 0:
            raise SeriesLengthException(
                f"wind series covers {self.horizon} hours, requested [{start}, {stop})",
                expected=stop, actual=self.horizon,
            )
        return self.capacity_factors[start:stop] * self.max_power_mw

    def window(self, start: int, length: int) -> np.ndarray:
        """Capacity factors for a window, truncated at the end of the series"""
        return self.capacity_factors[start:min(start + length, self.horizon)]

    def slice(self, start: int, length: int) -> "WindAsset":
        self.available_series(start, length)
        return WindAsset(self.max_power_mw, self.capacity_factors[start:start + length], self.om_cost_rate)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "max_power_mw": self.max_power_mw,
            "om_cost_rate": self.om_cost_rate,
            "horizon": self.horizon,
            "mean_capacity_factor": float(self.capacity_factors.mean()) if self.horizon else 0.0,
        }


@dataclass(frozen=True)
class BatteryDesign:
    """Battery sizing, efficiencies and cost rates; max SoC is duration times power"""
    max_power_mw: float
    duration_hr: float
    charge_eff: float = DEFAULT_CHARGE_EFFICIENCY
    discharge_eff: float = DEFAULT_DISCHARGE_EFFICIENCY
    degradation_coeff: float = DEFAULT_DEGRADATION_COEFF
    om_cost_rate: float = DEFAULT_BATTERY_OM_RATE
    capex_rate: float = DEFAULT_BATTERY_CAPEX_RATE

    def __post_init__(self):
        if not np.isfinite(self.max_power_mw) or self.max_power_mw < 0:
            raise ValidationException("battery power cannot be negative", field="max_power_mw")
        if not np.isfinite(self.duration_hr) or self.duration_hr < 0:
            raise ValidationException("battery duration cannot be negative", field="duration_hr")
        for name in ("charge_eff", "discharge_eff"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValidationException(f"{name} must lie in (0, 1]", field=name)
        if self.degradation_coeff < 0:
            raise ValidationException("degradation coefficient cannot be negative", field="degradation_coeff")
        if self.om_cost_rate < 0 or self.capex_rate < 0:
            raise ValidationException("battery cost rates cannot be negative", field="om_cost_rate")

    @property
    def max_soc(self) -> float:
        return self.duration_hr * self.max_power_mw

    @property
    def is_empty(self) -> bool:
        return self.max_power_mw == 0.0 or self.duration_hr == 0.0

    @property
    def round_trip_efficiency(self) -> float:
        return self.charge_eff * self.discharge_eff

    def power_ratio(self, wind: WindAsset) -> float:
        return self.max_power_mw / wind.max_power_mw

    def label(self, wind: WindAsset) -> str:
        return f"r{self.power_ratio(wind):.2f}_h{self.duration_hr:g}"

    @classmethod
    def from_ratio(cls, wind: WindAsset, power_ratio: float, duration_hr: float, **kwargs) -> "BatteryDesign":
        """Size the battery as a fraction of the wind farm rating"""
        if power_ratio < 0:
            raise ValidationException("power ratio cannot be negative", field="power_ratio")
        return cls(max_power_mw=power_ratio * wind.max_power_mw, duration_hr=duration_hr, **kwargs)

    @classmethod
    def none(cls, **kwargs) -> "BatteryDesign":
        return cls(max_power_mw=0.0, duration_hr=0.0, **kwargs)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "max_power_mw": self.max_power_mw,
            "duration_hr": self.duration_hr,
            "max_soc_mwh": self.max_soc,
            "charge_eff": self.charge_eff,
            "discharge_eff": self.discharge_eff,
            "degradation_coeff": self.degradation_coeff,
            "om_cost_rate": self.om_cost_rate,
            "capex_rate": self.capex_rate,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BatteryDesign":
        fields = {k: v for k, v in data.items() if k != "max_soc_mwh"}
        return cls(**fields)


@dataclass(frozen=True)
class IesState:
    """Battery state: stored energy and cumulative throughput (MWh)"""
    soc: float = DEFAULT_INITIAL_SOC_MWH
    throughput: float = DEFAULT_INITIAL_THROUGHPUT_MWH

    def __post_init__(self):
        if not np.isfinite(self.soc) or self.soc < -SOC_TOLERANCE_MWH:
            raise ValidationException(f"state of charge {self.soc} is negative", field="soc")
        if not np.isfinite(self.throughput) or self.throughput < -SOC_TOLERANCE_MWH:
            raise ValidationException(f"throughput {self.throughput} is negative", field="throughput")

    def to_dict(self) -> Dict[str, float]:
        return {"soc": self.soc, "throughput": self.throughput}


@dataclass(frozen=True)
class HourlyOperation:
    """The five IES power flows of one hour (MW)"""
    wind_used: float
    charge: float
    discharge: float
    direct_sale: float
    total_sale: float

    def __post_init__(self):
        for name in ("wind_used", "charge", "discharge", "direct_sale", "total_sale"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < -POWER_TOLERANCE_MW:
                raise ValidationException(f"{name} = {value} must be non-negative", field=name)
        if abs(self.wind_used - self.charge - self.direct_sale) > POWER_TOLERANCE_MW:
            raise ValidationException("wind used must equal charge plus direct sale", field="wind_used")
        if abs(self.total_sale - self.discharge - self.direct_sale) > POWER_TOLERANCE_MW:
            raise ValidationException("total sale must equal discharge plus direct sale", field="total_sale")

    @classmethod
    def from_flows(cls, charge: float, discharge: float, direct_sale: float) -> "HourlyOperation":
        """Build an operation from its three independent flows, dropping solver noise below zero"""
        charge, discharge, direct_sale = (
            max(0.0, float(v)) if v > -POWER_TOLERANCE_MW else float(v)
            for v in (charge, discharge, direct_sale)
        )
        return cls(
            wind_used=charge + direct_sale,
            charge=charge,
            discharge=discharge,
            direct_sale=direct_sale,
            total_sale=discharge + direct_sale,
        )

    @classmethod
    def idle(cls) -> "HourlyOperation":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)

    @property
    def is_simultaneous(self) -> bool:
        return min(self.charge, self.discharge) > SIMULTANEOUS_FLOW_THRESHOLD_MW

    def scaled(self, alpha: float) -> "HourlyOperation":
        return HourlyOperation.from_flows(alpha * self.charge, alpha * self.discharge, alpha * self.direct_sale)

    def to_dict(self) -> Dict[str, float]:
        return {
            "wind_used": self.wind_used,
            "charge": self.charge,
            "discharge": self.discharge,
            "direct_sale": self.direct_sale,
            "total_sale": self.total_sale,
        }


def degraded_capacity(design: BatteryDesign, throughput: float) -> float:
    """Usable capacity S_max - delta * E; negative values are left for the caller to reject"""
    return design.max_soc - design.degradation_coeff * throughput


def soc_step(state: IesState, op: HourlyOperation, design: BatteryDesign,
             dt: float = DEFAULT_TIMESTEP_HR, hour: Optional[int] = None) -> IesState:
    """Advance the battery by one step; raises instead of clamping an infeasible result"""
    if op.charge > design.max_power_mw + POWER_TOLERANCE_MW:
        raise InfeasibleTransitionException(
            f"charge {op.charge:.6f} MW exceeds rating {design.max_power_mw:.6f} MW",
            constraint="charge power limit", hour=hour, residual=op.charge - design.max_power_mw,
        )
    if op.discharge > design.max_power_mw + POWER_TOLERANCE_MW:
        raise InfeasibleTransitionException(
            f"discharge {op.discharge:.6f} MW exceeds rating {design.max_power_mw:.6f} MW",
            constraint="discharge power limit", hour=hour, residual=op.discharge - design.max_power_mw,
        )

    new_soc = state.soc + (design.charge_eff * op.charge - op.discharge / design.discharge_eff) * dt
    new_throughput = state.throughput + 0.5 * (op.charge + op.discharge) * dt

    if new_soc < -SOC_TOLERANCE_MWH:
        raise InfeasibleTransitionException(
            f"state of charge would drop to {new_soc:.6f} MWh",
            constraint="soc lower bound", hour=hour, residual=-new_soc,
        )
    capacity = degraded_capacity(design, new_throughput)
    if new_soc > capacity + SOC_TOLERANCE_MWH:
        raise InfeasibleTransitionException(
            f"state of charge {new_soc:.6f} MWh exceeds degraded capacity {capacity:.6f} MWh",
            constraint="soc upper bound", hour=hour, residual=new_soc - capacity,
        )

    return IesState(soc=new_soc, throughput=new_throughput)


def om_cost(wind: WindAsset, design: BatteryDesign) -> float:
    """Annual O&M in $/yr"""
    return KUSD * (wind.om_cost_rate * wind.max_power_mw + design.om_cost_rate * design.max_soc)


def capex(design: BatteryDesign) -> float:
    """Battery capital cost in $"""
    return USD_PER_KUSD_PER_KW_MW * design.capex_rate * design.max_power_mw


@dataclass(frozen=True)
class OperatingEnvelope:
    """Bounds on one hour's operation from a given state"""
    state: IesState
    design: BatteryDesign
    available_wind: float
    max_charge: float
    max_discharge: float
    dt: float = DEFAULT_TIMESTEP_HR

    @property
    def p_max(self) -> float:
        """Maximum deliverable power: all wind plus the largest feasible discharge"""
        return self.available_wind + self.max_discharge

    def contains(self, op: HourlyOperation) -> bool:
        if op.wind_used > self.available_wind + POWER_TOLERANCE_MW:
            return False
        try:
            soc_step(self.state, op, self.design, self.dt)
        except InfeasibleTransitionException:
            return False
        return True

    def vertices(self) -> List[HourlyOperation]:
        """Corners of the box of (charge, discharge, direct sale) that the envelope admits"""
        corners = []
        for discharge in sorted({0.0, self.max_discharge}):
            for charge in sorted({0.0, self.max_charge}):
                for direct_sale in sorted({0.0, max(0.0, self.available_wind - charge)}):
                    corners.append(HourlyOperation.from_flows(charge, discharge, direct_sale))
        return corners

    def to_dict(self) -> Dict[str, float]:
        return {
            "available_wind": self.available_wind,
            "max_charge": self.max_charge,
            "max_discharge": self.max_discharge,
            "p_max": self.p_max,
        }


def feasible_envelope(state: IesState, capacity_factor: float, wind: WindAsset,
                      design: BatteryDesign, dt: float = DEFAULT_TIMESTEP_HR) -> OperatingEnvelope:
    """Operation bounds such that any operation inside yields a feasible soc_step"""
    available = capacity_factor * wind.max_power_mw
    headroom = degraded_capacity(design, state.throughput) - state.soc
    charge_room = headroom / ((design.charge_eff + 0.5 * design.degradation_coeff) * dt)
    max_charge = max(0.0, min(design.max_power_mw, available, charge_room))
    max_discharge = max(0.0, min(design.max_power_mw, state.soc * design.discharge_eff / dt))
    return OperatingEnvelope(
        state=state,
        design=design,
        available_wind=available,
        max_charge=max_charge,
        max_discharge=max_discharge,
        dt=dt,
    )


@dataclass(frozen=True)
class Violation:
    constraint: str
    hour: int
    residual: float

    def to_dict(self) -> Dict[str, Any]:
        return {"constraint": self.constraint, "hour": self.hour, "residual": self.residual}


@dataclass
class TrajectoryReport:
    """Outcome of replaying a schedule through the battery dynamics"""
    valid: bool
    violations: List[Violation]
    final_state: IesState
    simultaneous_hours: List[int]
    hours_checked: int

    @property
    def first_violation(self) -> Optional[Violation]:
        return self.violations[0] if self.violations else None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "valid": self.valid,
            "violations": [v.to_dict() for v in self.violations],
            "final_state": self.final_state.to_dict(),
            "simultaneous_hours": self.simultaneous_hours,
            "hours_checked": self.hours_checked,
        }


def validate_trajectory(ops: Sequence[HourlyOperation], initial: IesState, design: BatteryDesign,
                        wind: WindAsset, periodic: bool = False, dt: float = DEFAULT_TIMESTEP_HR,
                        start_hour: int = 0) -> TrajectoryReport:
    """Replay soc_step over a schedule, stopping at the first violated constraint"""
    if start_hour + len(ops) > wind.horizon:
        raise SeriesLengthException(
            f"schedule of {len(ops)} hours from hour {start_hour} exceeds wind series of {wind.horizon}",
            expected=start_hour + len(ops), actual=wind.horizon,
        )

    violations: List[Violation] = []
    simultaneous: List[int] = []
    state = initial
    checked = 0

    for offset, op in enumerate(ops):
        hour = start_hour + offset
        available = wind.available(hour)
        if op.wind_used > available + POWER_TOLERANCE_MW:
            violations.append(Violation("wind availability", offset, op.wind_used - available))
            break
        if op.is_simultaneous:
            simultaneous.append(offset)
        try:
            state = soc_step(state, op, design, dt, hour=offset)
        except InfeasibleTransitionException as e:
            violations.append(Violation(e.constraint, offset, e.residual))
            break
        checked += 1

    if periodic and not violations:
        gap = abs(state.soc - initial.soc)
        if gap > SOC_TOLERANCE_MWH:
            violations.append(Violation("periodic soc", len(ops), gap))

    if violations:
        first = violations[0]
        logger.warning(
            f"Trajectory invalid: {first.constraint} at hour {first.hour} (residual {first.residual:.3g})",
            hour=first.hour,
        )
    if simultaneous:
        logger.debug(f"Simultaneous charge and discharge in {len(simultaneous)} hours")

    return TrajectoryReport(
        valid=not violations,
        violations=violations,
        final_state=state,
        simultaneous_hours=simultaneous,
        hours_checked=checked,
    )


@dataclass(eq=False)
class Schedule:
    """Column-oriented hourly operation sequence with its SoC and throughput trace"""
    charge: np.ndarray
    discharge: np.ndarray
    direct_sale: np.ndarray
    soc: np.ndarray
    throughput: np.ndarray
    initial_state: IesState = field(default_factory=IesState)

    def __post_init__(self):
        for name in ("charge", "discharge", "direct_sale", "soc", "throughput"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        lengths = {len(self.charge), len(self.discharge), len(self.direct_sale), len(self.soc), len(self.throughput)}
        if len(lengths) != 1:
            raise SeriesLengthException("schedule columns have different lengths",
                                        expected=len(self.charge), actual=max(lengths))

    def __len__(self) -> int:
        return len(self.charge)

    def __getitem__(self, hour: int) -> HourlyOperation:
        return HourlyOperation.from_flows(self.charge[hour], self.discharge[hour], self.direct_sale[hour])

    def __iter__(self):
        return (self[t] for t in range(len(self)))

    @property
    def wind_used(self) -> np.ndarray:
        return self.charge + self.direct_sale

    @property
    def total_sale(self) -> np.ndarray:
        return self.discharge + self.direct_sale

    @property
    def final_state(self) -> IesState:
        if not len(self):
            return self.initial_state
        return IesState(soc=max(0.0, float(self.soc[-1])), throughput=float(self.throughput[-1]))

    def operations(self) -> List[HourlyOperation]:
        return list(self)

    @classmethod
    def empty(cls, initial: Optional[IesState] = None) -> "Schedule":
        zeros = np.zeros(0)
        return cls(zeros, zeros, zeros, zeros, zeros, initial or IesState())

    @classmethod
    def from_operations(cls, ops: Iterable[HourlyOperation], initial: IesState, design: BatteryDesign,
                        dt: float = DEFAULT_TIMESTEP_HR) -> "Schedule":
        """Replay operations through soc_step to fill the state trace"""
        ops = list(ops)
        soc, throughput = [], []
        state = initial
        for hour, op in enumerate(ops):
            state = soc_step(state, op, design, dt, hour=hour)
            soc.append(state.soc)
            throughput.append(state.throughput)
        return cls(
            charge=np.array([op.charge for op in ops]),
            discharge=np.array([op.discharge for op in ops]),
            direct_sale=np.array([op.direct_sale for op in ops]),
            soc=np.array(soc),
            throughput=np.array(throughput),
            initial_state=initial,
        )

    def to_frame(self, start_hour: int = 0) -> pd.DataFrame:
        return pd.DataFrame({
            "hour": np.arange(start_hour, start_hour + len(self), dtype=int),
            "wind_used": self.wind_used,
            "charge": self.charge,
            "discharge": self.discharge,
            "direct_sale": self.direct_sale,
            "total_sale": self.total_sale,
            "soc": self.soc,
            "throughput": self.throughput,
        })

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, initial: Optional[IesState] = None) -> "Schedule":
        return cls(
            charge=frame["charge"].to_numpy(float),
            discharge=frame["discharge"].to_numpy(float),
            direct_sale=frame["direct_sale"].to_numpy(float),
            soc=frame["soc"].to_numpy(float),
            throughput=frame["throughput"].to_numpy(float),
            initial_state=initial or IesState(),
        )


@dataclass(frozen=True)
class EnergyLedger:
    """Where the available wind energy went over a span (MWh)"""
    available: float
    sold: float
    curtailed: float
    charge_losses: float
    discharge_losses: float
    delta_soc: float

    @property
    def losses(self) -> float:
        return self.charge_losses + self.discharge_losses

    @property
    def residual(self) -> float:
        """available - (sold + curtailed + losses + delta SoC); zero when energy is conserved"""
        return self.available - (self.sold + self.curtailed + self.losses + self.delta_soc)

    @property
    def relative_residual(self) -> float:
        return abs(self.residual) / max(1.0, abs(self.available))

    def to_dict(self) -> Dict[str, float]:
        return {
            "available": self.available,
            "sold": self.sold,
            "curtailed": self.curtailed,
            "charge_losses": self.charge_losses,
            "discharge_losses": self.discharge_losses,
            "delta_soc": self.delta_soc,
            "residual": self.residual,
        }


def energy_ledger(schedule: Schedule, available: np.ndarray, design: BatteryDesign,
                  dt: float = DEFAULT_TIMESTEP_HR) -> EnergyLedger:
    """Split available wind energy into sold, curtailed, lost and stored parts"""
    available = np.asarray(available, dtype=float)
    if len(available) != len(schedule):
        raise SeriesLengthException("available wind and schedule lengths differ",
                                    expected=len(schedule), actual=len(available))
    final_soc = float(schedule.soc[-1]) if len(schedule) else schedule.initial_state.soc
    return EnergyLedger(
        available=float(available.sum() * dt),
        sold=float(schedule.total_sale.sum() * dt),
        curtailed=float((available - schedule.wind_used).sum() * dt),
        charge_losses=float(((1.0 - design.charge_eff) * schedule.charge).sum() * dt),
        discharge_losses=float((schedule.discharge * (1.0 - design.discharge_eff) / design.discharge_eff).sum() * dt),
        delta_soc=final_soc - schedule.initial_state.soc,
    )
