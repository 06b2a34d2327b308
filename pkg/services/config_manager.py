"""
Run configuration for iesbench
Typed, unit-suffixed JSON configuration with environment overrides and a stable hash
"""

import hashlib
import json
import os
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

import config as env
from constants import (
    BUNDLED_CASE_DIR,
    DEFAULT_BATTERY_CAPEX_RATE,
    DEFAULT_BATTERY_OM_RATE,
    DEFAULT_BIDDING_WINDOW_HR,
    DEFAULT_CHARGE_EFFICIENCY,
    DEFAULT_DEGRADATION_COEFF,
    DEFAULT_DISCHARGE_EFFICIENCY,
    DEFAULT_DISCOUNT_RATE,
    DEFAULT_FALLBACK_PRICE,
    DEFAULT_INITIAL_SOC_MWH,
    DEFAULT_INITIAL_THROUGHPUT_MWH,
    DEFAULT_LIFETIME_YEARS,
    DEFAULT_MIP_GAP,
    DEFAULT_RENEWABLE_INCENTIVE,
    DEFAULT_RENEWABLE_OFFER_PRICE,
    DEFAULT_SCENARIO_COUNT,
    DEFAULT_SOLVER_BACKEND,
    DEFAULT_TERMINAL_SOC_VALUE,
    DEFAULT_TIMESTEP_HR,
    DEFAULT_UC_LOOKAHEAD_HR,
    DEFAULT_WIND_OM_RATE,
    DENSE_SIMPLEX_MAX_CELLS,
    DESK_CASE_SEED,
    HIGH_LMP_THRESHOLD,
    LMP_HISTOGRAM_EDGES,
    MILP_BACKENDS,
    PT_PRICE_SOURCES,
    SIMULATION_MODES,
    SOLVER_BACKENDS,
    SWEEP_DURATIONS_HR,
    SWEEP_MODES,
    SWEEP_POWER_RATIOS,
)
from core import BatteryDesign, IesState, WindAsset
from exceptions import ConfigurationException
from services.market import SimulationSettings
from services.optimizer import SolverSettings
from services.price_taker import BatteryBounds, FinanceParams
from utils.logger import get_logger

logger = get_logger(__name__)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class FinanceConfig(_Section):
    discount_rate: float = Field(default=DEFAULT_DISCOUNT_RATE, gt=0, description="Annual discount rate.")
    lifetime_years: int = Field(default=DEFAULT_LIFETIME_YEARS, ge=1, description="Project lifetime in years.")
    incentive_usd_per_mwh: float = Field(default=DEFAULT_RENEWABLE_INCENTIVE, ge=0,
                                         description="Renewable incentive paid per MWh sold.")

    def to_params(self) -> FinanceParams:
        return FinanceParams(self.discount_rate, self.lifetime_years, self.incentive_usd_per_mwh)


class WindConfig(_Section):
    max_power_mw: Optional[float] = Field(default=None, gt=0,
                                          description="Wind farm rating in MW; the case value when unset.")
    om_cost_rate_kusd_per_mw_yr: float = Field(default=DEFAULT_WIND_OM_RATE, ge=0)

    def to_asset(self, case_wind: WindAsset) -> WindAsset:
        rating = case_wind.max_power_mw if self.max_power_mw is None else self.max_power_mw
        return WindAsset(rating, case_wind.capacity_factors, self.om_cost_rate_kusd_per_mw_yr)


class BatteryConfig(_Section):
    """Fixed design by power_mw or power_ratio; with neither set pt-optimize sizes the battery"""
    power_mw: Optional[float] = Field(default=None, ge=0)
    power_ratio: Optional[float] = Field(default=None, ge=0, description="Battery power over wind rating.")
    duration_hr: float = Field(default=4.0, ge=0)
    charge_efficiency: float = Field(default=DEFAULT_CHARGE_EFFICIENCY, gt=0, le=1)
    discharge_efficiency: float = Field(default=DEFAULT_DISCHARGE_EFFICIENCY, gt=0, le=1)
    degradation_coeff: float = Field(default=DEFAULT_DEGRADATION_COEFF, ge=0)
    om_cost_rate_kusd_per_mwh_yr: float = Field(default=DEFAULT_BATTERY_OM_RATE, ge=0)
    capex_rate_kusd_per_kw: float = Field(default=DEFAULT_BATTERY_CAPEX_RATE, ge=0)
    initial_soc_mwh: float = Field(default=DEFAULT_INITIAL_SOC_MWH, ge=0)
    initial_throughput_mwh: float = Field(default=DEFAULT_INITIAL_THROUGHPUT_MWH, ge=0)
    max_power_ratio: float = Field(default=1.0, ge=0, description="Upper bound on power ratio when sizing.")
    min_duration_hr: float = Field(default=0.0, ge=0)
    max_duration_hr: float = Field(default=10.0, ge=0)

    @model_validator(mode="after")
    def _one_sizing_rule(self) -> "BatteryConfig":
        if self.power_mw is not None and self.power_ratio is not None:
            raise ValueError("set at most one of power_mw and power_ratio")
        if self.min_duration_hr > self.max_duration_hr:
            raise ValueError(f"min_duration_hr ({self.min_duration_hr}) must be <= max_duration_hr")
        return self

    @property
    def is_fixed(self) -> bool:
        return self.power_mw is not None or self.power_ratio is not None

    def _rates(self) -> Dict[str, float]:
        return {
            "charge_eff": self.charge_efficiency,
            "discharge_eff": self.discharge_efficiency,
            "degradation_coeff": self.degradation_coeff,
            "om_cost_rate": self.om_cost_rate_kusd_per_mwh_yr,
            "capex_rate": self.capex_rate_kusd_per_kw,
        }

    def to_design(self, wind: WindAsset) -> BatteryDesign:
        if self.power_ratio is not None:
            return BatteryDesign.from_ratio(wind, self.power_ratio, self.duration_hr, **self._rates())
        return BatteryDesign(self.power_mw or 0.0, self.duration_hr, **self._rates())

    def template(self) -> BatteryDesign:
        """Rates only; sweeps and the sizing optimizer fill in power and duration"""
        return BatteryDesign.none(**self._rates())

    def to_bounds(self, wind: WindAsset) -> BatteryBounds:
        return BatteryBounds(self.max_power_ratio * wind.max_power_mw, self.min_duration_hr, self.max_duration_hr)

    def to_state(self) -> IesState:
        return IesState(self.initial_soc_mwh, self.initial_throughput_mwh)


class GridConfig(_Section):
    power_ratios: List[float] = Field(default_factory=lambda: list(SWEEP_POWER_RATIOS), min_length=1)
    durations_hr: List[float] = Field(default_factory=lambda: list(SWEEP_DURATIONS_HR), min_length=1)
    modes: List[str] = Field(default_factory=lambda: list(SWEEP_MODES), min_length=1)
    pt_price_source: str = "reference"
    jobs: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _known_choices(self) -> "GridConfig":
        unknown = [m for m in self.modes if m not in SWEEP_MODES]
        if unknown:
            raise ValueError(f"unknown sweep modes {unknown}; choose from {SWEEP_MODES}")
        if self.pt_price_source not in PT_PRICE_SOURCES:
            raise ValueError(f"pt_price_source must be one of {PT_PRICE_SOURCES}")
        if min(self.power_ratios) <= 0 or min(self.durations_hr) <= 0:
            raise ValueError("grid ratios and durations must be positive")
        return self


class SolverConfig(_Section):
    backend: str = DEFAULT_SOLVER_BACKEND
    milp_backend: str = "branch_and_bound"
    mip_gap: float = Field(default=DEFAULT_MIP_GAP, ge=0, lt=1)
    time_limit_s: float = Field(default=600.0, gt=0)
    dense_max_cells: int = Field(default=DENSE_SIMPLEX_MAX_CELLS, ge=1)
    dump_lp_dir: Optional[str] = None

    @model_validator(mode="after")
    def _known_backends(self) -> "SolverConfig":
        if self.backend not in SOLVER_BACKENDS:
            raise ValueError(f"backend must be one of {SOLVER_BACKENDS}")
        if self.milp_backend not in MILP_BACKENDS:
            raise ValueError(f"milp_backend must be one of {MILP_BACKENDS}")
        return self

    def to_settings(self) -> SolverSettings:
        return SolverSettings(
            backend=self.backend,
            milp_backend=self.milp_backend,
            mip_gap=self.mip_gap,
            time_limit_s=self.time_limit_s,
            dense_max_cells=self.dense_max_cells,
            dump_lp_dir=self.dump_lp_dir or env.dump_lp_dir(),
        )


class MarketConfig(_Section):
    case_dir: str = BUNDLED_CASE_DIR
    mode: str = "TV_bidding"
    span_hr: Optional[int] = Field(default=None, ge=0)
    start_hour: int = Field(default=0, ge=0)
    timestep_hr: float = Field(default=DEFAULT_TIMESTEP_HR, gt=0)
    uc_lookahead_hr: int = Field(default=DEFAULT_UC_LOOKAHEAD_HR, ge=0)
    ies_visible_in_da: bool = True
    da_offer_price_usd_per_mwh: float = DEFAULT_RENEWABLE_OFFER_PRICE
    seed: int = DESK_CASE_SEED

    @model_validator(mode="after")
    def _known_mode(self) -> "MarketConfig":
        if self.mode not in SIMULATION_MODES:
            raise ValueError(f"mode must be one of {SIMULATION_MODES}")
        return self


class BiddingConfig(_Section):
    window_hr: int = Field(default=DEFAULT_BIDDING_WINDOW_HR, ge=1, le=24)
    scenario_count: int = Field(default=DEFAULT_SCENARIO_COUNT, ge=1)
    terminal_soc_value_usd_per_mwh: float = Field(default=DEFAULT_TERMINAL_SOC_VALUE, ge=0)
    fallback_price_usd_per_mwh: float = DEFAULT_FALLBACK_PRICE


class ReportConfig(_Section):
    histogram_edges_usd_per_mwh: List[float] = Field(default_factory=lambda: list(LMP_HISTOGRAM_EDGES), min_length=1)
    high_lmp_threshold_usd_per_mwh: float = HIGH_LMP_THRESHOLD
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _increasing_edges(self) -> "ReportConfig":
        edges = self.histogram_edges_usd_per_mwh
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("histogram edges must be strictly increasing")
        return self


class RunConfig(_Section):
    finance: FinanceConfig = Field(default_factory=FinanceConfig)
    wind: WindConfig = Field(default_factory=WindConfig)
    battery: BatteryConfig = Field(default_factory=BatteryConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    market: MarketConfig = Field(default_factory=MarketConfig)
    bidding: BiddingConfig = Field(default_factory=BiddingConfig)
    report: ReportConfig = Field(default_factory=ReportConfig)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form"""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def simulation_settings(self) -> SimulationSettings:
        return SimulationSettings(
            dt=self.market.timestep_hr,
            uc_lookahead_hr=self.market.uc_lookahead_hr,
            mip_gap=self.solver.mip_gap,
            ies_visible_in_da=self.market.ies_visible_in_da,
            da_offer_price=self.market.da_offer_price_usd_per_mwh,
            bidding_window_hr=self.bidding.window_hr,
            scenario_count=self.bidding.scenario_count,
            terminal_soc_value=self.bidding.terminal_soc_value_usd_per_mwh,
            fallback_price=self.bidding.fallback_price_usd_per_mwh,
            start_hour=self.market.start_hour,
            solver=self.solver.to_settings(),
        )

    @property
    def output_dir(self) -> str:
        return self.report.output_dir or env.output_dir()


def _set_path(data: Dict[str, Any], dotted: str, value: Any):
    node = data
    *parents, leaf = dotted.split(".")
    for key in parents:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigurationException(f"cannot override '{dotted}': '{key}' is not a section", config_key=dotted)
    node[leaf] = value


def _error_path(error: Dict[str, Any]) -> str:
    return ".".join(str(part) for part in error["loc"])


class ConfigManager:
    """Loads a RunConfig from JSON, CLI overrides and the environment"""

    def __init__(self, config_file: Optional[str] = None):
        self.config_file = config_file
        self.config: Optional[RunConfig] = None

    def _read_file(self) -> Dict[str, Any]:
        if not self.config_file:
            return {}
        if not os.path.exists(self.config_file):
            raise ConfigurationException(f"config file {self.config_file} not found", config_key="config")
        with open(self.config_file, "r", encoding="utf-8") as f:
            text = f.read()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigurationException(
                f"{self.config_file}:{e.lineno}:{e.colno}: invalid JSON ({e.msg})", config_key="config"
            )
        if not isinstance(data, dict):
            raise ConfigurationException(f"{self.config_file}: top level must be an object", config_key="config")
        logger.info(f"Loaded configuration from {self.config_file}")
        return data

    def _environment_overrides(self) -> Dict[str, Any]:
        """Output directory and job count from the environment; explicit overrides still win"""
        overrides: Dict[str, Any] = {}
        if os.getenv("IES_OUTPUT_DIR"):
            overrides["report.output_dir"] = env.output_dir()
        if os.getenv("IES_JOBS"):
            overrides["grid.jobs"] = env.jobs()
        return overrides

    def load_config(self, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
        data = self._read_file()
        merged = {**self._environment_overrides(), **(overrides or {})}
        for dotted, value in merged.items():
            if value is not None:
                _set_path(data, dotted, value)
        try:
            self.config = RunConfig.model_validate(data)
        except ValidationError as e:
            first = e.errors()[0]
            path = _error_path(first)
            raise ConfigurationException(f"{path}: {first['msg']}", config_key=path)
        logger.debug(f"Configuration hash {self.config.config_hash()}")
        return self.config

    def get_config(self) -> RunConfig:
        if self.config is None:
            self.load_config()
        return self.config

    def save_config_template(self, file_path: str = "config.json.example"):
        with open(file_path, "w", encoding="utf-8") as f:
            json.dump(RunConfig().model_dump(mode="json"), f, indent=2)
        logger.info(f"Configuration template saved to {file_path}")


def load_config(config_file: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    return ConfigManager(config_file).load_config(overrides)
