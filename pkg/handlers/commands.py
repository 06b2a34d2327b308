"""
Command handlers for the iesbench CLI
Each handler loads configuration, runs one workflow and writes its outputs and manifest
"""

import asyncio
import json
import os
import sys
import time
from dataclasses import dataclass, field, replace
from datetime import datetime
from functools import wraps
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd

import constants
from constants import (
    EXIT_OK,
    EXIT_SOLVER_FAILURE,
    REPORT_FILE,
    TEA_SUMMARY_FILE,
    WIND_ONLY_MODES,
)
from core import BatteryDesign, WindAsset
from exceptions import (
    CaseValidationException,
    ErrorContext,
    ErrorHandler,
    IesBenchException,
    SimulationAbortedException,
    ValidationException,
)
from services.config_manager import ConfigManager, RunConfig
from services.market import MarketLog, NetworkCase, run_simulation
from services.monitoring import RunMonitor, system_info
from services.persistence import (
    load_case,
    load_log,
    load_prices,
    save_log,
    save_pt_result,
    write_json,
    write_run_manifest,
)
from services.price_taker import PriceSeries, bound_report, evaluate_design, optimize, revenue
from services.tea_report import GridSpec, TeaSummary, compare, run_sweep, summarize, write_sweep_outputs
from utils.logger import get_logger
from utils.validators import CaseValidator, ConfigValidator, validate_case

logger = get_logger(__name__)
error_handler = ErrorHandler(logger)

handler_stats = {
    'total_calls': 0,
    'total_time': 0.0,
    'handler_times': {},
    'error_count': 0
}

SUMMARY_ROWS = [
    ("power_mw", "Battery power (MW)"),
    ("duration_hr", "Duration (h)"),
    ("hours", "Hours"),
    ("available_gwh", "Available wind (GWh)"),
    ("sold_gwh", "Sold (GWh)"),
    ("curtailment_gwh", "Curtailment (GWh)"),
    ("revenue_musd", "Revenue (M$)"),
    ("annual_revenue_musd", "Annual revenue (M$/yr)"),
    ("om_musd_per_yr", "O&M (M$/yr)"),
    ("capex_musd", "CAPEX (M$)"),
    ("npv_musd", "NPV (M$)"),
    ("lmp_bus_time_avg", "Bus LMP, time average ($/MWh)"),
    ("lmp_bus_load_wtd", "Bus LMP, load weighted ($/MWh)"),
    ("lmp_received", "LMP received ($/MWh)"),
]


@dataclass
class CommandResult:
    """What a handler produced; the wrapper turns it into a manifest and an exit code"""
    exit_code: int = EXIT_OK
    run_dir: Optional[str] = None
    config: Optional[RunConfig] = None
    extra: Dict[str, Any] = field(default_factory=dict)


def command_handler(command_name: str):
    """
    Decorator for CLI handlers: error mapping, timing, resource monitoring and the run manifest
    """
    def decorator(func):
        @wraps(func)
        def wrapper(args) -> int:
            start_time = time.time()
            context = ErrorContext(
                command=command_name,
                case_path=getattr(args, "case", None),
                mode=getattr(args, "mode", None),
                timestamp=start_time,
            )
            handler_stats['total_calls'] += 1
            try:
                with RunMonitor(f"cli.{command_name}") as monitor:
                    result = func(args, context)

                execution_time = time.time() - start_time
                handler_stats['total_time'] += execution_time
                handler_stats['handler_times'][command_name] = \
                    handler_stats['handler_times'].get(command_name, 0) + execution_time

                if result.run_dir:
                    extra = {
                        "command": command_name,
                        "exit_code": result.exit_code,
                        "metrics": monitor.metrics.to_dict(),
                        "system": system_info(),
                        **result.extra,
                    }
                    if result.config is not None:
                        extra.setdefault("seed", result.config.market.seed)
                    write_run_manifest(result.run_dir, result.config, extra)
                    print(f"outputs: {result.run_dir}")
                logger.debug(f"Handler {command_name} completed in {execution_time:.3f}s")
                return result.exit_code

            except Exception as e:
                handler_stats['error_count'] += 1
                execution_time = time.time() - start_time
                logger.error(f"Handler {command_name} failed after {execution_time:.3f}s: {str(e)}")

                exit_code = error_handler.handle_exception(e, context)
                message = e.get_user_message() if isinstance(e, IesBenchException) else str(e)
                print(f"error: {message}", file=sys.stderr)
                if isinstance(e, CaseValidationException):
                    for issue in e.issues:
                        print(f"  - {issue}", file=sys.stderr)
                return exit_code

        return wrapper
    return decorator


def config_overrides(args) -> Dict[str, Any]:
    """Map CLI flags onto dotted RunConfig paths; unset flags are skipped"""
    overrides = {
        "market.case_dir": getattr(args, "case", None),
        "market.mode": getattr(args, "mode", None),
        "market.span_hr": getattr(args, "span", None),
        "market.start_hour": getattr(args, "start", None),
        "market.seed": getattr(args, "seed", None),
        "battery.power_mw": getattr(args, "power_mw", None),
        "battery.power_ratio": getattr(args, "power_ratio", None),
        "battery.duration_hr": getattr(args, "duration_hr", None),
        "grid.modes": getattr(args, "modes", None),
        "grid.jobs": getattr(args, "jobs", None),
        "grid.pt_price_source": getattr(args, "price_source", None),
        "report.output_dir": getattr(args, "output", None),
    }
    grid = getattr(args, "grid", None)
    if grid is not None:
        overrides["grid.power_ratios"] = list(grid.power_ratios)
        overrides["grid.durations_hr"] = list(grid.durations_hr)
    return {key: value for key, value in overrides.items() if value is not None}


def load_run_config(args) -> RunConfig:
    return ConfigManager(getattr(args, "config", None)).load_config(config_overrides(args))


def resolve_case_dir(case_dir: str) -> str:
    """Relative case paths fall back to the package root so the bundled case works from any cwd"""
    if os.path.isabs(case_dir) or os.path.exists(case_dir):
        return case_dir
    bundled = os.path.join(os.path.dirname(os.path.abspath(constants.__file__)), case_dir)
    return bundled if os.path.exists(bundled) else case_dir


def prepare_case(config: RunConfig) -> Tuple[NetworkCase, WindAsset]:
    case = load_case(resolve_case_dir(config.market.case_dir), seed=config.market.seed)
    wind = config.wind.to_asset(case.ies.wind)
    case = case.with_ies_wind(wind)
    validate_case(case)
    return case, wind


def run_span(config: RunConfig, case: NetworkCase) -> int:
    if config.market.span_hr is not None:
        return config.market.span_hr
    return case.horizon - config.market.start_hour


def run_directory(config: RunConfig, args, command: str) -> str:
    """--output is used as given; otherwise a timestamped folder under the output root"""
    if getattr(args, "output", None):
        return config.output_dir
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    return os.path.join(config.output_dir, f"{command}-{stamp}")


def price_window(config: RunConfig, case: NetworkCase, span: int, path: Optional[str]) -> PriceSeries:
    start = config.market.start_hour
    if path:
        return load_prices(path, bus=case.ies.bus).window(start, span)
    if case.historical_lmp is None:
        raise ValidationException("case has no historical LMP series; pass --prices", field="prices")
    return PriceSeries(case.historical_lmp, case.ies.bus, "historical").window(start, span)


def summary_table(summaries: List[TeaSummary]) -> str:
    frame = pd.DataFrame(
        {s.label: [getattr(s, key) for key, _ in SUMMARY_ROWS] for s in summaries},
        index=[label for _, label in SUMMARY_ROWS],
    )
    return frame.to_string(float_format=lambda v: f"{v:,.3f}", na_rep="-")


@command_handler("validate")
def handle_validate(args, context: ErrorContext) -> CommandResult:
    """Check configuration, environment and case; nothing is solved"""
    config = load_run_config(args)
    environment = ConfigValidator.validate_environment()
    if not environment["valid"]:
        raise ValidationException("; ".join(environment["invalid_vars"]), field="environment")

    case_dir = resolve_case_dir(config.market.case_dir)
    context.case_path = case_dir
    case = load_case(case_dir, seed=config.market.seed)
    report = CaseValidator.validate_case(case)
    print(json.dumps({"case": case_dir, "config_hash": config.config_hash(), **report}, indent=2))
    if not report["valid"]:
        raise CaseValidationException(f"case '{case.name}' is invalid", issues=report["issues"])
    return CommandResult()


@command_handler("pt-optimize")
def handle_pt_optimize(args, context: ErrorContext) -> CommandResult:
    """Price-taker optimization against an exogenous price series"""
    config = load_run_config(args)
    case, wind = prepare_case(config)
    span = run_span(config, case)
    prices = price_window(config, case, span, getattr(args, "prices", None))
    finance = config.finance.to_params()
    common = {
        "initial_state": config.battery.to_state(),
        "dt": config.market.timestep_hr,
        "start_hour": config.market.start_hour,
        "settings": config.solver.to_settings(),
    }

    if config.battery.is_fixed:
        design = config.battery.to_design(wind)
        context.design = design.label(wind)
        result = evaluate_design(prices, wind, design, finance, **common)
    else:
        result = optimize(prices, wind, bounds=config.battery.to_bounds(wind), finance=finance,
                          design_template=config.battery.template(), **common)
        logger.info(f"Sized battery at {result.design.max_power_mw:.2f} MW x {result.design.duration_hr:.2f} h")

    summary = summarize(result, result.design, wind, finance, config.report.histogram_edges_usd_per_mwh,
                        label="pt", dt=config.market.timestep_hr,
                        high_lmp_threshold=config.report.high_lmp_threshold_usd_per_mwh)
    run_dir = run_directory(config, args, "pt-optimize")
    save_pt_result(result, run_dir, config.market.start_hour)
    write_json(os.path.join(run_dir, TEA_SUMMARY_FILE), summary.to_dict())
    print(summary_table([summary]))
    return CommandResult(run_dir=run_dir, config=config,
                         extra={"case": case.name, "design": result.design.to_dict(), "prices": prices.scenario})


@command_handler("simulate")
def handle_simulate(args, context: ErrorContext) -> CommandResult:
    """Rolling DA/RT market simulation with the IES in the loop"""
    config = load_run_config(args)
    case, wind = prepare_case(config)
    span = run_span(config, case)
    mode = config.market.mode
    design = BatteryDesign.none() if mode in WIND_ONLY_MODES else config.battery.to_design(wind)
    context.mode, context.design = mode, design.label(wind)
    run_dir = run_directory(config, args, "simulate")

    try:
        log = run_simulation(case, wind, design, mode, span, config.simulation_settings(),
                             config.battery.to_state())
    except SimulationAbortedException as e:
        if isinstance(e.partial_log, MarketLog):
            save_log(e.partial_log, run_dir, extra={"aborted_at_hour": e.hour, "error": e.message})
            write_run_manifest(run_dir, config, {"command": "simulate", "aborted_at_hour": e.hour})
            logger.warning(f"Partial log of {len(e.partial_log)} hours saved to {run_dir}")
        raise

    finance = config.finance.to_params()
    summary = summarize(log, design, wind, finance, config.report.histogram_edges_usd_per_mwh,
                        high_lmp_threshold=config.report.high_lmp_threshold_usd_per_mwh)
    save_log(log, run_dir, extra={"tea_summary": summary.to_dict(),
                                  "settlement_residual_usd": log.settlement_residual()})
    print(summary_table([summary]))
    return CommandResult(run_dir=run_dir, config=config,
                         extra={"case": case.name, "mode": mode, "design": design.to_dict(), "hours": len(log)})


@command_handler("sweep")
def handle_sweep(args, context: ErrorContext) -> CommandResult:
    """Design grid in PT and MO modes; any failed cell makes the exit code non-zero"""
    config = load_run_config(args)
    case, wind = prepare_case(config)
    span = run_span(config, case)
    if config.market.mode in WIND_ONLY_MODES:
        raise ValidationException(f"sweep needs a battery mode, not {config.market.mode}", field="mode")

    prices = None
    if getattr(args, "prices", None):
        prices = price_window(config, case, span, args.prices).values
    grid = GridSpec(tuple(config.grid.power_ratios), tuple(config.grid.durations_hr))
    sweep_grid = asyncio.run(run_sweep(
        case, wind, config.grid.modes, grid, config.finance.to_params(), config.simulation_settings(),
        span=span, price_source=config.grid.pt_price_source, prices=prices, jobs=config.grid.jobs,
        template=config.battery.template(), mo_mode=config.market.mode,
    ))

    run_dir = run_directory(config, args, "sweep")
    written = asyncio.run(write_sweep_outputs(sweep_grid, run_dir))
    failures = sweep_grid.failures
    for cell in failures:
        print(f"failed: r={cell.power_ratio:g} h={cell.duration_hr:g} {cell.mode}: {cell.error}", file=sys.stderr)
    print(f"{len(sweep_grid.cells) - len(failures)} of {len(sweep_grid.cells)} cells succeeded")
    return CommandResult(
        exit_code=EXIT_SOLVER_FAILURE if failures else EXIT_OK,
        run_dir=run_dir,
        config=config,
        extra={"case": case.name, "grid_size": grid.size, "files": len(written), "failed_cells": len(failures)},
    )


@command_handler("report")
def handle_report(args, context: ErrorContext) -> CommandResult:
    """Compare a saved market log with the price-taker optimum on its own realized prices"""
    config = load_run_config(args)
    log = load_log(args.log)
    case, wind = prepare_case(config)
    context.mode = log.mode
    finance = config.finance.to_params()
    edges = config.report.histogram_edges_usd_per_mwh
    threshold = config.report.high_lmp_threshold_usd_per_mwh

    prices = PriceSeries(log.ies_lmp, log.ies_bus, "realized")
    result = evaluate_design(prices, wind, log.design, replace(finance, incentive=0.0),
                             initial_state=log.initial_state, periodic=False, dt=log.dt,
                             start_hour=log.start_hour, settings=config.solver.to_settings())
    realized = revenue(prices, log.schedule(), 0.0, log.dt)
    bound = bound_report(result.revenue, realized)

    mo = summarize(log, log.design, wind, finance, edges, high_lmp_threshold=threshold)
    pt = summarize(result, log.design, wind, finance, edges, label="pt", dt=log.dt, high_lmp_threshold=threshold)
    comparison = compare(pt, mo)

    run_dir = args.output or args.log
    write_json(os.path.join(run_dir, REPORT_FILE), {
        "pt": pt.to_dict(),
        "mo": mo.to_dict(),
        "comparison": comparison.to_dict(),
        "upper_bound": bound.to_dict(),
    })
    print(summary_table([pt, mo]))
    if comparison.revenue_overestimate_pct is not None:
        print(f"price-taker revenue overestimate: {comparison.revenue_overestimate_pct:.2f}%")
    if not bound.holds:
        print(f"warning: price-taker revenue is below the realized trace by {-bound.gap:,.6f} $", file=sys.stderr)
    return CommandResult(run_dir=None if run_dir == args.log else run_dir,
                         config=config, extra={"case": case.name, "log": args.log})
