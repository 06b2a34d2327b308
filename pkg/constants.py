"""
Constants and default values for iesbench
Centralized location for nomenclature defaults, tolerances and file layout
"""

from typing import Dict, List, Tuple

# Wind farm defaults
DEFAULT_WIND_MAX_POWER_MW = 847.0
DEFAULT_WIND_OM_RATE = 42.0  # k$/MW-yr

# Battery defaults
DEFAULT_CHARGE_EFFICIENCY = 0.95
DEFAULT_DISCHARGE_EFFICIENCY = 0.95
DEFAULT_DEGRADATION_COEFF = 1e-4
DEFAULT_INITIAL_SOC_MWH = 0.0
DEFAULT_INITIAL_THROUGHPUT_MWH = 0.0
DEFAULT_BATTERY_OM_RATE = 19.0  # k$/MWh-yr, low end of [19, 70]
DEFAULT_BATTERY_CAPEX_RATE = 0.8  # k$/kW, low end of [0.8, 3.1]

# Finance defaults
DEFAULT_DISCOUNT_RATE = 0.05
DEFAULT_LIFETIME_YEARS = 30
DEFAULT_RENEWABLE_INCENTIVE = 1e-3  # $/MWh

# Time
DEFAULT_TIMESTEP_HR = 1.0
HOURS_PER_DAY = 24
HOURS_PER_YEAR = 8784  # leap year 2020
MIN_ANNUAL_HOURS = 8760

# Unit conversions
KUSD = 1_000.0
USD_PER_KUSD_PER_KW_MW = 1_000_000.0  # k$/kW -> $/MW
MWH_PER_GWH = 1_000.0
USD_PER_MUSD = 1_000_000.0

# Numerical tolerances
SOC_TOLERANCE_MWH = 1e-6
POWER_TOLERANCE_MW = 1e-6
SIMULTANEOUS_FLOW_THRESHOLD_MW = 1e-6
BALANCE_TOLERANCE_MW = 1e-5
PRIMAL_FEASIBILITY_TOLERANCE = 1e-7
INTEGRALITY_TOLERANCE = 1e-6
CONSERVATION_RELATIVE_TOLERANCE = 1e-6

# Solver settings
DEFAULT_MIP_GAP = 0.01
DEFAULT_SOLVER_BACKEND = "auto"
SOLVER_BACKENDS = ["auto", "simplex", "highs"]
MILP_BACKENDS = ["branch_and_bound", "highs"]
DENSE_SIMPLEX_MAX_CELLS = 250_000
SIMPLEX_SETTINGS = {
    "max_iterations": 50_000,
    "refactor_every": 50,
    "max_refactor_attempts": 3,
    "pivot_tolerance": 1e-9,
    "optimality_tolerance": 1e-9,
    "feasibility_tolerance": PRIMAL_FEASIBILITY_TOLERANCE,
    "degenerate_pivots_before_bland": 50,
}
BRANCH_AND_BOUND_SETTINGS = {
    "max_nodes": 20_000,
    "time_limit_s": 600.0,
}

# Market defaults
DEFAULT_SHED_PENALTY = 10_000.0  # $/MWh, also the price cap
DEFAULT_UC_LOOKAHEAD_HR = 12
DEFAULT_BASE_MVA = 100.0
DEFAULT_RENEWABLE_OFFER_PRICE = 0.0
SIMULATION_MODES = ["TI_zero_cost", "TV_bidding", "wind_only_TI", "wind_only_TV"]
WIND_ONLY_MODES = ["wind_only_TI", "wind_only_TV"]
TIME_VARIANT_MODES = ["TV_bidding", "wind_only_TV"]

# Bidding defaults
DEFAULT_BIDDING_WINDOW_HR = 4
DEFAULT_SCENARIO_COUNT = 10
DEFAULT_TERMINAL_SOC_VALUE = 0.0  # $/MWh
DEFAULT_FALLBACK_PRICE = 20.0  # $/MWh

# Reporting
HIGH_LMP_THRESHOLD = 100.0  # $/MWh
LMP_HISTOGRAM_EDGES: List[float] = [0.0, 5.0, 15.0, 25.0, 100.0]
SWEEP_MODES = ["pt", "mo"]
PT_PRICE_SOURCES = ["reference", "realized"]

# Design sweep grid
SWEEP_POWER_RATIOS: Tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
SWEEP_DURATIONS_HR: Tuple[float, ...] = (2.0, 4.0, 6.0, 8.0, 10.0)

# Benchmark designs (power ratio, duration)
BENCHMARK_DESIGNS: Dict[str, Tuple[float, float]] = {
    "small": (0.1, 2.0),
    "large": (1.0, 10.0),
}

# Bundled case
BUNDLED_CASE_DIR = "data/cases/desk5bus"
DESK_CASE_SEED = 2020

# Case file layout
CASE_MANIFEST_FILE = "manifest.json"
CASE_TABLES = {
    "buses": "buses.csv",
    "lines": "lines.csv",
    "generators": "generators.csv",
    "timeseries": "timeseries.csv",
}
CASE_REQUIRED_COLUMNS: Dict[str, List[str]] = {
    "buses": ["bus", "load_share"],
    "lines": ["line", "from_bus", "to_bus", "susceptance_pu", "limit_mw"],
    "generators": [
        "unit", "bus", "kind", "pmin_mw", "pmax_mw", "ramp_mw_per_hr",
        "min_up_hr", "min_down_hr", "segment_mw", "segment_cost",
        "startup_cost", "no_load_cost", "initial_status_hr", "initial_power_mw",
    ],
    "timeseries": ["hour"],
}

# Run output layout
RUN_MANIFEST_FILE = "manifest.json"
LOG_HOURLY_FILE = "hourly.csv"
LOG_SUMMARY_FILE = "summary.json"
BID_CURVES_FILE = "bids.csv"
PT_SCHEDULE_FILE = "schedule.csv"
PT_SUMMARY_FILE = "pt_result.json"
TEA_SUMMARY_FILE = "tea_summary.json"
REPORT_FILE = "report.json"
SWEEP_LONG_FILE = "sweep_long.csv"
CSV_FLOAT_FORMAT = "%.17g"

# CLI exit codes
EXIT_OK = 0
EXIT_VALIDATION_FAILURE = 1
EXIT_SOLVER_FAILURE = 2
CLI_COMMANDS = ["validate", "pt-optimize", "simulate", "sweep", "report"]

# Error Codes
ERROR_CODES = {
    "VALIDATION": "E001",
    "INFEASIBLE_TRANSITION": "E002",
    "SERIES_LENGTH": "E003",
    "MODEL_VALIDATION": "E004",
    "SOLVER_NUMERICAL": "E005",
    "SOLVER_FAILURE": "E006",
    "INSUFFICIENT_HISTORY": "E007",
    "BID_MONOTONICITY": "E008",
    "SCHEMA": "E009",
    "CASE_VALIDATION": "E010",
    "CONFIG": "E011",
    "SIMULATION_ABORTED": "E012",
}

# Logging Configuration
LOG_FORMAT = '%(asctime)s - %(name)s - [%(levelname)s] - %(message)s'
LOG_DATE_FORMAT = '%Y-%m-%d %H:%M:%S'
LOG_MAX_BYTES = 10 * 1024 * 1024  # 10MB
LOG_BACKUP_COUNT = 5
LOGS_DIR = "logs"

# Environment Variables
OPTIONAL_ENV_VARS = {
    "IES_OUTPUT_DIR": "runs",
    "IES_JOBS": "1",
    "IES_DUMP_LP_DIR": "",
    "IES_LOG_TO_FILE": "1",
    "LOG_LEVEL": "INFO",
}
