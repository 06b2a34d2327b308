"""
File I/O for iesbench
Case directories, market logs, price series, PT results and run manifests
"""

import importlib
import json
import os
from datetime import datetime
from typing import Any, Dict, List, Optional

import aiofiles
import numpy as np
import pandas as pd

from constants import (
    BID_CURVES_FILE,
    CASE_MANIFEST_FILE,
    CASE_REQUIRED_COLUMNS,
    CASE_TABLES,
    CSV_FLOAT_FORMAT,
    DEFAULT_BASE_MVA,
    DEFAULT_SHED_PENALTY,
    DEFAULT_WIND_OM_RATE,
    LOG_HOURLY_FILE,
    LOG_SUMMARY_FILE,
    PT_SCHEDULE_FILE,
    PT_SUMMARY_FILE,
    RUN_MANIFEST_FILE,
)
from core import WindAsset
from exceptions import SchemaException
from services.bidder import BidCurve, bid_curves_to_frame
from services.market import (
    LOG_COLUMNS,
    Bus,
    IesSite,
    Line,
    MarketLog,
    NetworkCase,
    RenewableUnit,
    ThermalUnit,
)
from services.price_taker import PriceSeries, PtResult
from utils.logger import get_logger

logger = get_logger(__name__)

SEGMENT_SEPARATOR = ";"
THERMAL_KIND = "thermal"


def _dumps(data: Any) -> str:
    return json.dumps(data, indent=2, ensure_ascii=False, default=str) + "\n"


def write_json(path: str, data: Any):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(_dumps(data))


def read_json(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise SchemaException("file not found", file=path)
    with open(path, "r", encoding="utf-8") as handle:
        text = handle.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaException(e.msg, file=path, line=e.lineno, column=str(e.colno))


async def write_text_async(path: str, text: str):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    async with aiofiles.open(path, "w", encoding="utf-8") as handle:
        await handle.write(text)


async def write_json_async(path: str, data: Any):
    await write_text_async(path, _dumps(data))


def write_csv(frame: pd.DataFrame, path: str, index: bool = False):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    frame.to_csv(path, index=index, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")


def read_csv(path: str, required: Optional[List[str]] = None) -> pd.DataFrame:
    """Read a CSV and check its header; schema errors carry file, line and column"""
    if not os.path.exists(path):
        raise SchemaException("file not found", file=path)
    try:
        frame = pd.read_csv(path, keep_default_na=False, na_values=[""])
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise SchemaException(f"unreadable CSV: {e}", file=path)
    for column in required or []:
        if column not in frame.columns:
            raise SchemaException(f"missing required column '{column}'", file=path, line=1, column=column)
    return frame


def numeric_column(frame: pd.DataFrame, column: str, path: str, allow_missing: bool = False) -> np.ndarray:
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = values.isna() & (frame[column].notna() | (not allow_missing))
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise SchemaException(f"non-numeric value '{frame[column].iloc[row]}'", file=path,
                              line=row + 2, column=column)
    return values.to_numpy(float)


def _parse_segments(text: Any, path: str, line: int, column: str) -> List[float]:
    try:
        return [float(part) for part in str(text).split(SEGMENT_SEPARATOR)]
    except ValueError:
        raise SchemaException(f"segment list '{text}' must be '{SEGMENT_SEPARATOR}'-separated numbers",
                              file=path, line=line, column=column)


def _resolve_synthesizer(spec: Dict[str, Any], path: str, seed: Optional[int] = None) -> pd.DataFrame:
    target = spec.get("synthesizer", "")
    module_name, _, attr = target.rpartition(".")
    try:
        synthesize = getattr(importlib.import_module(module_name), attr)
    except (ImportError, AttributeError, ValueError):
        raise SchemaException(f"unknown timeseries synthesizer '{target}'", file=path, column="timeseries")
    logger.info(f"Synthesizing case timeseries with {target}")
    return synthesize(int(spec["hours"]), int(spec["seed"] if seed is None else seed))


def load_case(case_dir: str, seed: Optional[int] = None) -> NetworkCase:
    """Read a case directory: manifest.json plus buses, lines, generators and timeseries CSVs

    A manifest without timeseries.csv names a synthesizer; seed replaces its stored seed.
    """
    manifest_path = os.path.join(case_dir, CASE_MANIFEST_FILE)
    manifest = read_json(manifest_path)
    for key in ("name", "reference_bus", "ies"):
        if key not in manifest:
            raise SchemaException(f"missing key '{key}'", file=manifest_path, column=key)

    paths = {table: os.path.join(case_dir, name) for table, name in CASE_TABLES.items()}
    buses_df = read_csv(paths["buses"], CASE_REQUIRED_COLUMNS["buses"])
    lines_df = read_csv(paths["lines"], CASE_REQUIRED_COLUMNS["lines"])
    gens_df = read_csv(paths["generators"], CASE_REQUIRED_COLUMNS["generators"])
    if os.path.exists(paths["timeseries"]):
        series_df = read_csv(paths["timeseries"], CASE_REQUIRED_COLUMNS["timeseries"])
    elif "timeseries" in manifest:
        series_df = _resolve_synthesizer(manifest["timeseries"], manifest_path, seed)
    else:
        raise SchemaException("file not found and no synthesizer in manifest", file=paths["timeseries"])

    hours = numeric_column(series_df, "hour", paths["timeseries"])
    if not np.array_equal(hours, np.arange(hours.size)):
        raise SchemaException("hours must run 0, 1, 2, ... without gaps", file=paths["timeseries"], column="hour")

    shares = numeric_column(buses_df, "load_share", paths["buses"])
    buses = [Bus(str(name), float(share)) for name, share in zip(buses_df["bus"], shares)]

    lines = [
        Line(str(row.line), str(row.from_bus), str(row.to_bus), float(b), float(limit))
        for row, b, limit in zip(lines_df.itertuples(index=False),
                                 numeric_column(lines_df, "susceptance_pu", paths["lines"]),
                                 numeric_column(lines_df, "limit_mw", paths["lines"]))
    ]

    numeric = {column: numeric_column(gens_df, column, paths["generators"], allow_missing=True)
               for column in CASE_REQUIRED_COLUMNS["generators"]
               if column not in ("unit", "bus", "kind", "segment_mw", "segment_cost")}
    thermal, renewables = [], []
    for k, row in enumerate(gens_df.itertuples(index=False)):
        line = k + 2
        kind = str(row.kind)
        if kind == THERMAL_KIND:
            missing = [c for c, values in numeric.items() if np.isnan(values[k])]
            if missing:
                raise SchemaException("thermal unit needs a value", file=paths["generators"], line=line,
                                      column=missing[0])
            sizes = _parse_segments(row.segment_mw, paths["generators"], line, "segment_mw")
            costs = _parse_segments(row.segment_cost, paths["generators"], line, "segment_cost")
            if len(sizes) != len(costs):
                raise SchemaException("segment_mw and segment_cost differ in length",
                                      file=paths["generators"], line=line, column="segment_cost")
            thermal.append(ThermalUnit(
                name=str(row.unit),
                bus=str(row.bus),
                pmin_mw=float(numeric["pmin_mw"][k]),
                pmax_mw=float(numeric["pmax_mw"][k]),
                ramp_mw_per_hr=float(numeric["ramp_mw_per_hr"][k]),
                min_up_hr=int(numeric["min_up_hr"][k]),
                min_down_hr=int(numeric["min_down_hr"][k]),
                segments=tuple(zip(sizes, costs)),
                startup_cost=float(numeric["startup_cost"][k]),
                no_load_cost=float(numeric["no_load_cost"][k]),
                initial_status_hr=int(numeric["initial_status_hr"][k]),
                initial_power_mw=float(numeric["initial_power_mw"][k]),
            ))
        else:
            column = f"cf_{row.unit}"
            if column not in series_df.columns:
                raise SchemaException(f"missing capacity factor column for '{row.unit}'",
                                      file=paths["timeseries"], line=1, column=column)
            renewables.append(RenewableUnit(str(row.unit), str(row.bus), kind, float(numeric["pmax_mw"][k]),
                                            numeric_column(series_df, column, paths["timeseries"])))

    ies_spec = manifest["ies"]
    cf_column = ies_spec.get("capacity_factor_column", "cf_ies")
    if cf_column not in series_df.columns:
        raise SchemaException("missing IES capacity factor column", file=paths["timeseries"], line=1,
                              column=cf_column)
    wind = WindAsset(float(ies_spec["wind_max_power_mw"]), numeric_column(series_df, cf_column, paths["timeseries"]),
                     float(ies_spec.get("om_cost_rate", DEFAULT_WIND_OM_RATE)))

    lmp_column = manifest.get("historical_lmp_column", "historical_lmp")
    historical = numeric_column(series_df, lmp_column, paths["timeseries"]) if lmp_column in series_df else None
    if "load_mw" not in series_df.columns:
        raise SchemaException("missing required column 'load_mw'", file=paths["timeseries"], line=1, column="load_mw")

    case = NetworkCase(
        name=str(manifest["name"]),
        buses=buses,
        lines=lines,
        thermal_units=thermal,
        renewables=renewables,
        ies=IesSite(str(ies_spec["bus"]), wind),
        load_mw=numeric_column(series_df, "load_mw", paths["timeseries"]),
        reference_bus=str(manifest["reference_bus"]),
        historical_lmp=historical,
        base_mva=float(manifest.get("base_mva", DEFAULT_BASE_MVA)),
        shed_penalty=float(manifest.get("shed_penalty", DEFAULT_SHED_PENALTY)),
    )
    logger.debug(f"Loaded case '{case.name}' with {case.horizon} hours from {case_dir}")
    return case


def _join(values) -> str:
    return SEGMENT_SEPARATOR.join(f"{v:.17g}" for v in values)


def save_case(case: NetworkCase, case_dir: str):
    """Write every table, including the full timeseries; the manifest drops any synthesizer"""
    os.makedirs(case_dir, exist_ok=True)
    write_json(os.path.join(case_dir, CASE_MANIFEST_FILE), {
        "name": case.name,
        "reference_bus": case.reference_bus,
        "base_mva": case.base_mva,
        "shed_penalty": case.shed_penalty,
        "ies": {
            "bus": case.ies.bus,
            "wind_max_power_mw": case.ies.wind.max_power_mw,
            "om_cost_rate": case.ies.wind.om_cost_rate,
            "capacity_factor_column": "cf_ies",
        },
        "historical_lmp_column": "historical_lmp",
    })
    write_csv(pd.DataFrame({"bus": [b.name for b in case.buses], "load_share": [b.load_share for b in case.buses]}),
              os.path.join(case_dir, CASE_TABLES["buses"]))
    write_csv(pd.DataFrame([{
        "line": line.name, "from_bus": line.from_bus, "to_bus": line.to_bus,
        "susceptance_pu": line.susceptance_pu, "limit_mw": line.limit_mw,
    } for line in case.lines], columns=CASE_REQUIRED_COLUMNS["lines"]), os.path.join(case_dir, CASE_TABLES["lines"]))

    rows = [{
        "unit": u.name, "bus": u.bus, "kind": THERMAL_KIND, "pmin_mw": u.pmin_mw, "pmax_mw": u.pmax_mw,
        "ramp_mw_per_hr": u.ramp_mw_per_hr, "min_up_hr": u.min_up_hr, "min_down_hr": u.min_down_hr,
        "segment_mw": _join(u.segment_sizes), "segment_cost": _join(u.segment_costs),
        "startup_cost": u.startup_cost, "no_load_cost": u.no_load_cost,
        "initial_status_hr": u.initial_status_hr, "initial_power_mw": u.initial_power_mw,
    } for u in case.thermal_units]
    rows += [{"unit": r.name, "bus": r.bus, "kind": r.kind, "pmax_mw": r.max_power_mw} for r in case.renewables]
    write_csv(pd.DataFrame(rows, columns=CASE_REQUIRED_COLUMNS["generators"]),
              os.path.join(case_dir, CASE_TABLES["generators"]))

    series = {"hour": np.arange(case.horizon), "load_mw": case.load_mw}
    for unit in case.renewables:
        series[f"cf_{unit.name}"] = unit.capacity_factors[:case.horizon]
    series["cf_ies"] = case.ies.wind.capacity_factors[:case.horizon]
    if case.historical_lmp is not None:
        series["historical_lmp"] = case.historical_lmp[:case.horizon]
    write_csv(pd.DataFrame(series), os.path.join(case_dir, CASE_TABLES["timeseries"]))


def save_log(log: MarketLog, out_dir: str, extra: Optional[Dict[str, Any]] = None):
    os.makedirs(out_dir, exist_ok=True)
    write_csv(log.to_frame(), os.path.join(out_dir, LOG_HOURLY_FILE))
    if log.bids:
        write_csv(bid_curves_to_frame(log.bids), os.path.join(out_dir, BID_CURVES_FILE))
    summary = {"metadata": log.metadata(), "revenue_usd": log.revenue}
    summary.update(extra or {})
    write_json(os.path.join(out_dir, LOG_SUMMARY_FILE), summary)


def load_log(out_dir: str) -> MarketLog:
    summary_path = os.path.join(out_dir, LOG_SUMMARY_FILE)
    metadata = read_json(summary_path).get("metadata")
    if metadata is None:
        raise SchemaException("missing key 'metadata'", file=summary_path, column="metadata")
    columns = list(LOG_COLUMNS) + [f"lmp_{bus}" for bus in metadata["buses"]]
    frame = read_csv(os.path.join(out_dir, LOG_HOURLY_FILE), columns)
    log = MarketLog.from_frame(frame, metadata)

    bids_path = os.path.join(out_dir, BID_CURVES_FILE)
    if os.path.exists(bids_path):
        bids = read_csv(bids_path, ["hour", "price", "power_mw"])
        for hour, group in bids.groupby("hour", sort=True):
            log.bids.append(BidCurve(int(hour), group["price"].to_numpy(float), group["power_mw"].to_numpy(float)))
    return log


def load_prices(path: str, bus: str = "ies", scenario: str = "base") -> PriceSeries:
    frame = read_csv(path, ["hour", "lmp"])
    hours = numeric_column(frame, "hour", path)
    if not np.array_equal(hours, np.arange(hours.size)):
        raise SchemaException("hours must run 0, 1, 2, ... without gaps", file=path, column="hour")
    return PriceSeries(numeric_column(frame, "lmp", path), bus, scenario)


def save_prices(series: PriceSeries, path: str):
    write_csv(series.to_frame(), path)


def save_pt_result(result: PtResult, out_dir: str, start_hour: int = 0):
    os.makedirs(out_dir, exist_ok=True)
    frame = result.schedule.to_frame(start_hour)
    frame.insert(1, "lmp", result.prices.values)
    frame.insert(2, "wind_available_mw", result.wind_available)
    write_csv(frame, os.path.join(out_dir, PT_SCHEDULE_FILE))
    write_json(os.path.join(out_dir, PT_SUMMARY_FILE), result.to_dict())


def write_run_manifest(out_dir: str, config: Any = None, extra: Optional[Dict[str, Any]] = None) -> str:
    """manifest.json with the run configuration, its hash and anything the command adds"""
    manifest: Dict[str, Any] = {"created": datetime.now().isoformat(timespec="seconds")}
    if config is not None:
        manifest["config_hash"] = config.config_hash()
        manifest["config"] = config.model_dump(mode="json")
    manifest.update(extra or {})
    path = os.path.join(out_dir, RUN_MANIFEST_FILE)
    write_json(path, manifest)
    return path
