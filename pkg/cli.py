"""
iesbench command-line entry point
Subcommands: validate, pt-optimize, simulate, sweep, report
"""

import argparse
import re
import sys
from typing import List, Optional

from constants import (
    CLI_COMMANDS,
    EXIT_VALIDATION_FAILURE,
    HOURS_PER_DAY,
    PT_PRICE_SOURCES,
    SIMULATION_MODES,
    SWEEP_MODES,
)
from exceptions import ValidationException
from handlers.commands import (
    handle_pt_optimize,
    handle_report,
    handle_simulate,
    handle_sweep,
    handle_validate,
)
from services.tea_report import GridSpec
from utils.logger import get_logger

logger = get_logger(__name__)

_SPAN_PATTERN = re.compile(r"^(\d+)\s*([hdw]?)$")
_SPAN_UNITS = {"": 1, "h": 1, "d": HOURS_PER_DAY, "w": 7 * HOURS_PER_DAY}

HANDLERS = {
    "validate": handle_validate,
    "pt-optimize": handle_pt_optimize,
    "simulate": handle_simulate,
    "sweep": handle_sweep,
    "report": handle_report,
}


def parse_span(text: str) -> int:
    """Hours from '168', '168h', '7d' or '2w'"""
    match = _SPAN_PATTERN.match(text.strip().lower())
    if not match:
        raise argparse.ArgumentTypeError(f"span '{text}' must look like 168, 168h, 7d or 2w")
    return int(match.group(1)) * _SPAN_UNITS[match.group(2)]


def parse_grid(text: str) -> GridSpec:
    try:
        return GridSpec.parse(text)
    except ValidationException as e:
        raise argparse.ArgumentTypeError(e.message)


def parse_modes(text: str) -> List[str]:
    modes = [m.strip() for m in text.split(",") if m.strip()]
    unknown = [m for m in modes if m not in SWEEP_MODES]
    if not modes or unknown:
        raise argparse.ArgumentTypeError(f"modes must be a comma list drawn from {SWEEP_MODES}")
    return modes


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--case", help="case directory (default: bundled desk5bus case)")
    parser.add_argument("--seed", type=int, help="seed for synthesized case series")
    parser.add_argument("--output", help="output directory for this run")


def _window(parser: argparse.ArgumentParser):
    parser.add_argument("--span", type=parse_span, help="hours to run, e.g. 168 or 7d")
    parser.add_argument("--start", type=int, help="first hour of the run")


def _design(parser: argparse.ArgumentParser):
    sizing = parser.add_mutually_exclusive_group()
    sizing.add_argument("--power-mw", dest="power_mw", type=float, help="battery power rating (MW)")
    sizing.add_argument("--power-ratio", dest="power_ratio", type=float, help="battery power over wind rating")
    parser.add_argument("--duration-hr", dest="duration_hr", type=float, help="battery duration (h)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iesbench",
        description="Price-taker versus market-aware valuation of a wind-battery plant",
    )
    sub = parser.add_subparsers(dest="command", metavar="|".join(CLI_COMMANDS))
    sub.required = True

    validate = sub.add_parser("validate", help="check configuration and case files")
    _common(validate)

    pt = sub.add_parser("pt-optimize", help="price-taker sizing and scheduling")
    _common(pt)
    _window(pt)
    _design(pt)
    pt.add_argument("--prices", help="CSV with hour,lmp columns (default: case historical LMP)")

    simulate = sub.add_parser("simulate", help="market simulation with the IES in the loop")
    _common(simulate)
    _window(simulate)
    _design(simulate)
    simulate.add_argument("--mode", choices=SIMULATION_MODES)

    sweep = sub.add_parser("sweep", help="design grid in price-taker and market modes")
    _common(sweep)
    _window(sweep)
    sweep.add_argument("--grid", type=parse_grid, help="'full' or '<r1,r2>x<h1,h2>'")
    sweep.add_argument("--modes", type=parse_modes, help="comma list of pt,mo")
    sweep.add_argument("--mode", choices=SIMULATION_MODES, help="market mode for the mo cells")
    sweep.add_argument("--jobs", type=int, help="worker processes")
    sweep.add_argument("--price-source", dest="price_source", choices=PT_PRICE_SOURCES)
    sweep.add_argument("--prices", help="reference price CSV for the pt cells")

    report = sub.add_parser("report", help="price-taker versus market comparison for a saved run")
    _common(report)
    report.add_argument("--log", required=True, help="output directory of a simulate run")
    return parser


def cli(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors; bad input is a validation failure here
        return 0 if not e.code else EXIT_VALIDATION_FAILURE
    logger.debug(f"Running command {args.command}")
    return HANDLERS[args.command](args)


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
