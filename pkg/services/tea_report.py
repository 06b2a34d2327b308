"""
Techno-economic reporting for iesbench
Run summaries, price-taker versus market comparison and the battery design sweep
"""

import asyncio
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from constants import (
    CONSERVATION_RELATIVE_TOLERANCE,
    CSV_FLOAT_FORMAT,
    DEFAULT_TIMESTEP_HR,
    HIGH_LMP_THRESHOLD,
    LMP_HISTOGRAM_EDGES,
    MWH_PER_GWH,
    PT_PRICE_SOURCES,
    SWEEP_DURATIONS_HR,
    SWEEP_LONG_FILE,
    SWEEP_MODES,
    SWEEP_POWER_RATIOS,
    USD_PER_MUSD,
)
from core import BatteryDesign, WindAsset, capex, energy_ledger, om_cost
from exceptions import IesBenchException, ValidationException
from services.market import MarketLog, NetworkCase, SimulationSettings, run_simulation
from services.persistence import write_json_async, write_text_async
from services.price_taker import FinanceParams, PriceSeries, PtResult, annualization_factor, evaluate_design
from utils.logger import get_logger

logger = get_logger(__name__)

SWEEP_METRICS = ["npv_musd", "revenue_musd", "curtailment_gwh", "lmp_received"]
DEFAULT_MO_MODE = "TV_bidding"


def histogram_labels(edges: Sequence[float]) -> List[str]:
    """Labels for buckets (-inf, e0), [e0, e1), ..., [eN, inf)"""
    edges = list(edges)
    labels = [f"<{edges[0]:g}"]
    labels += [f"{lo:g}-{hi:g}" for lo, hi in zip(edges, edges[1:])]
    labels.append(f">={edges[-1]:g}")
    return labels


@dataclass
class TeaSummary:
    """Market outcome metrics of one run; energies in GWh, money in M$"""
    label: str
    source: str
    power_mw: float
    power_ratio: float
    duration_hr: float
    hours: int
    available_gwh: float
    sold_gwh: float
    curtailment_gwh: float
    losses_gwh: float
    delta_soc_gwh: float
    revenue_musd: float
    annual_revenue_musd: float
    om_musd_per_yr: float
    capex_musd: float
    npv_musd: float
    npv_factor: float
    lmp_bus_time_avg: Optional[float]
    lmp_bus_load_wtd: Optional[float]
    lmp_received: Optional[float]
    high_lmp_hours: int
    high_lmp_energy_gwh: float
    lmp_histogram: Dict[str, int]
    energy_histogram_gwh: Dict[str, float]
    histogram_edges: List[float]
    annualization: float
    annualized: bool
    conservation_residual_gwh: float

    def recomputed_npv(self) -> float:
        return self.npv_factor * (self.annual_revenue_musd - self.om_musd_per_yr) - self.capex_musd

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TeaSummary":
        return cls(**data)


def _histograms(prices: np.ndarray, sold_mwh: np.ndarray,
                edges: Sequence[float]) -> Tuple[Dict[str, int], Dict[str, float]]:
    labels = histogram_labels(edges)
    buckets = np.digitize(prices, edges)
    counts = np.bincount(buckets, minlength=len(labels))
    energy = np.bincount(buckets, weights=sold_mwh, minlength=len(labels)) / MWH_PER_GWH
    return ({label: int(c) for label, c in zip(labels, counts)},
            {label: float(e) for label, e in zip(labels, energy)})


def summarize(source: Union[PtResult, MarketLog], design: BatteryDesign, wind: WindAsset,
              finance: Optional[FinanceParams] = None, edges: Sequence[float] = LMP_HISTOGRAM_EDGES,
              label: Optional[str] = None, dt: float = DEFAULT_TIMESTEP_HR,
              high_lmp_threshold: float = HIGH_LMP_THRESHOLD) -> TeaSummary:
    """Outcome metrics for a price-taker result or a simulated market log"""
    finance = finance or FinanceParams()
    if isinstance(source, PtResult):
        kind, prices = "pt", source.prices.values
        schedule, available = source.schedule, source.wind_available
        revenue, bus_load = source.market_revenue, None
        settled_mwh = source.schedule.total_sale * dt
        label = label or "pt"
    elif isinstance(source, MarketLog):
        kind, prices = "mo", source.ies_lmp
        schedule, available = source.schedule(), source.available
        revenue, bus_load = source.revenue, source.ies_bus_load
        dt = source.dt
        settled_mwh = source.cleared * dt
        label = label or source.mode
    else:
        raise ValidationException(f"cannot summarize {type(source).__name__}", field="source")

    hours = len(schedule)
    ledger = energy_ledger(schedule, available, design, dt)
    if ledger.relative_residual > CONSERVATION_RELATIVE_TOLERANCE:
        logger.warning(f"{label}: energy ledger is off by {ledger.residual:.3g} MWh", mode=label)
    sold_mwh = schedule.total_sale * dt

    scale = annualization_factor(hours, dt)
    phi = finance.npv_factor
    revenue_musd = revenue / USD_PER_MUSD
    annual_revenue_musd = revenue_musd * scale
    om_musd = om_cost(wind, design) / USD_PER_MUSD
    capex_musd = capex(design) / USD_PER_MUSD

    lmp_time = float(prices.mean()) if hours else None
    lmp_load = None
    if bus_load is not None and hours and bus_load.sum() > 0:
        lmp_load = float(np.sum(prices * bus_load) / bus_load.sum())
    # settlements pay cleared MW, so the received price is per settled MWh
    settled_total = float(settled_mwh.sum())
    received = revenue / settled_total if settled_total > 1e-9 else None

    high = prices >= high_lmp_threshold
    lmp_histogram, energy_histogram = _histograms(prices, sold_mwh, edges)

    return TeaSummary(
        label=label,
        source=kind,
        power_mw=design.max_power_mw,
        power_ratio=design.power_ratio(wind),
        duration_hr=design.duration_hr,
        hours=hours,
        available_gwh=ledger.available / MWH_PER_GWH,
        sold_gwh=ledger.sold / MWH_PER_GWH,
        curtailment_gwh=ledger.curtailed / MWH_PER_GWH,
        losses_gwh=ledger.losses / MWH_PER_GWH,
        delta_soc_gwh=ledger.delta_soc / MWH_PER_GWH,
        revenue_musd=revenue_musd,
        annual_revenue_musd=annual_revenue_musd,
        om_musd_per_yr=om_musd,
        capex_musd=capex_musd,
        npv_musd=phi * (annual_revenue_musd - om_musd) - capex_musd,
        npv_factor=phi,
        lmp_bus_time_avg=lmp_time,
        lmp_bus_load_wtd=lmp_load,
        lmp_received=received,
        high_lmp_hours=int(high.sum()),
        high_lmp_energy_gwh=float(sold_mwh[high].sum() / MWH_PER_GWH),
        lmp_histogram=lmp_histogram,
        energy_histogram_gwh=energy_histogram,
        histogram_edges=[float(e) for e in edges],
        annualization=scale,
        annualized=scale != 1.0,
        conservation_residual_gwh=ledger.residual / MWH_PER_GWH,
    )


@dataclass
class Comparison:
    """How far price-taker figures overstate the market outcome"""
    revenue_gap_musd: float
    revenue_ratio: Optional[float]
    revenue_overestimate_pct: Optional[float]
    mo_revenue_share_pct: Optional[float]
    npv_gap_musd: float
    npv_overestimate_pct: Optional[float]
    curtailment_gap_gwh: float
    lmp_received_gap: Optional[float]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _ratio(numerator: float, denominator: float) -> Optional[float]:
    return numerator / denominator if abs(denominator) > 1e-12 else None


def compare(pt: TeaSummary, mo: TeaSummary) -> Comparison:
    if not (math.isclose(pt.power_mw, mo.power_mw, abs_tol=1e-9)
            and math.isclose(pt.duration_hr, mo.duration_hr, abs_tol=1e-9)):
        logger.warning("Comparing summaries of different designs")
    revenue_gap = pt.revenue_musd - mo.revenue_musd
    npv_gap = pt.npv_musd - mo.npv_musd
    overestimate = _ratio(revenue_gap, abs(mo.revenue_musd))
    npv_over = _ratio(npv_gap, abs(mo.npv_musd))
    share = _ratio(mo.revenue_musd, pt.revenue_musd)
    received_gap = None
    if pt.lmp_received is not None and mo.lmp_received is not None:
        received_gap = pt.lmp_received - mo.lmp_received
    return Comparison(
        revenue_gap_musd=revenue_gap,
        revenue_ratio=_ratio(pt.revenue_musd, mo.revenue_musd),
        revenue_overestimate_pct=None if overestimate is None else 100.0 * overestimate,
        mo_revenue_share_pct=None if share is None else 100.0 * share,
        npv_gap_musd=npv_gap,
        npv_overestimate_pct=None if npv_over is None else 100.0 * npv_over,
        curtailment_gap_gwh=pt.curtailment_gwh - mo.curtailment_gwh,
        lmp_received_gap=received_gap,
    )


@dataclass(frozen=True)
class GridSpec:
    power_ratios: Tuple[float, ...] = SWEEP_POWER_RATIOS
    durations_hr: Tuple[float, ...] = SWEEP_DURATIONS_HR

    def __post_init__(self):
        object.__setattr__(self, "power_ratios", tuple(float(r) for r in self.power_ratios))
        object.__setattr__(self, "durations_hr", tuple(float(h) for h in self.durations_hr))
        if not self.power_ratios or not self.durations_hr:
            raise ValidationException("grid axes cannot be empty", field="grid")
        if min(self.power_ratios) <= 0 or min(self.durations_hr) <= 0:
            raise ValidationException("grid ratios and durations must be positive", field="grid")

    @classmethod
    def full(cls) -> "GridSpec":
        return cls(SWEEP_POWER_RATIOS, SWEEP_DURATIONS_HR)

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        """'full' or '<r1,r2,...>x<h1,h2,...>'"""
        text = text.strip()
        if text == "full":
            return cls.full()
        try:
            ratios, durations = text.split("x")
            return cls(tuple(float(r) for r in ratios.split(",")), tuple(float(h) for h in durations.split(",")))
        except ValueError:
            raise ValidationException(f"grid '{text}' is not 'full' or '<ratios>x<durations>'", field="grid")

    @property
    def size(self) -> int:
        return len(self.power_ratios) * len(self.durations_hr)

    def designs(self, wind: WindAsset,
                template: Optional[BatteryDesign] = None) -> List[Tuple[float, float, BatteryDesign]]:
        template = template or BatteryDesign.none()
        kwargs = {
            "charge_eff": template.charge_eff,
            "discharge_eff": template.discharge_eff,
            "degradation_coeff": template.degradation_coeff,
            "om_cost_rate": template.om_cost_rate,
            "capex_rate": template.capex_rate,
        }
        return [(r, h, BatteryDesign.from_ratio(wind, r, h, **kwargs))
                for h in self.durations_hr for r in self.power_ratios]


@dataclass
class SweepCell:
    power_ratio: float
    duration_hr: float
    mode: str
    summary: Optional[TeaSummary] = None
    error: Optional[str] = None
    error_code: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.summary is not None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "power_ratio": self.power_ratio,
            "duration_hr": self.duration_hr,
            "mode": self.mode,
            "summary": self.summary.to_dict() if self.summary else None,
            "error": self.error,
            "error_code": self.error_code,
        }


@dataclass
class SweepGrid:
    spec: GridSpec
    modes: Tuple[str, ...]
    cells: Dict[Tuple[float, float, str], SweepCell] = field(default_factory=dict)

    def add(self, cell: SweepCell):
        self.cells[(cell.power_ratio, cell.duration_hr, cell.mode)] = cell

    def ordered_cells(self) -> List[SweepCell]:
        order = {mode: k for k, mode in enumerate(self.modes)}
        return sorted(self.cells.values(), key=lambda c: (c.duration_hr, c.power_ratio, order.get(c.mode, 99)))

    @property
    def failures(self) -> List[SweepCell]:
        return [cell for cell in self.ordered_cells() if not cell.ok]

    def matrix(self, metric: str, mode: str) -> pd.DataFrame:
        """Rows are durations, columns are power ratios; failed cells are NaN"""
        values = np.full((len(self.spec.durations_hr), len(self.spec.power_ratios)), np.nan)
        for i, h in enumerate(self.spec.durations_hr):
            for j, r in enumerate(self.spec.power_ratios):
                cell = self.cells.get((r, h, mode))
                if cell is not None and cell.ok:
                    value = getattr(cell.summary, metric)
                    values[i, j] = np.nan if value is None else value
        return pd.DataFrame(values, index=pd.Index(self.spec.durations_hr, name="duration_hr"),
                            columns=pd.Index(self.spec.power_ratios, name="power_ratio"))

    def difference(self, metric: str) -> pd.DataFrame:
        """PT minus MO"""
        return self.matrix(metric, "pt") - self.matrix(metric, "mo")

    def to_long_frame(self, metrics: Sequence[str] = SWEEP_METRICS) -> pd.DataFrame:
        rows = []
        for cell in self.ordered_cells():
            if not cell.ok:
                continue
            for metric in metrics:
                value = getattr(cell.summary, metric)
                rows.append({
                    "power_ratio": cell.power_ratio,
                    "duration_hr": cell.duration_hr,
                    "mode": cell.mode,
                    "metric": metric,
                    "value": np.nan if value is None else value,
                })
        return pd.DataFrame(rows, columns=["power_ratio", "duration_hr", "mode", "metric", "value"])


@dataclass
class SweepTask:
    """One design's work item; must stay picklable for the process pool"""
    case: NetworkCase
    wind: WindAsset
    power_ratio: float
    duration_hr: float
    design: BatteryDesign
    modes: Tuple[str, ...]
    finance: FinanceParams
    settings: SimulationSettings
    span: int
    price_source: str
    reference_prices: Optional[np.ndarray]
    mo_mode: str = DEFAULT_MO_MODE


def _failed(task: SweepTask, mode: str, exc: Exception) -> SweepCell:
    code = exc.error_code if isinstance(exc, IesBenchException) else "E999"
    return SweepCell(task.power_ratio, task.duration_hr, mode, error=str(exc), error_code=code)


def run_sweep_task(task: SweepTask) -> List[SweepCell]:
    """Evaluate one design in every requested mode"""
    cells = []
    log: Optional[MarketLog] = None
    if "mo" in task.modes:
        try:
            log = run_simulation(task.case, task.wind, task.design, task.mo_mode, task.span, task.settings)
            summary = summarize(log, task.design, task.wind, task.finance, label=task.mo_mode)
            cells.append(SweepCell(task.power_ratio, task.duration_hr, "mo", summary=summary))
        except Exception as exc:
            logger.warning(f"Sweep cell ({task.power_ratio}, {task.duration_hr}, mo) failed: {exc}")
            cells.append(_failed(task, "mo", exc))

    if "pt" in task.modes:
        try:
            if task.price_source == "realized":
                if log is None:
                    raise ValidationException("realized prices need a successful market run", field="price_source")
                # incentive-free so the market trace is a feasible point of the same objective
                prices = PriceSeries(log.ies_lmp, task.case.ies.bus, "realized")
                result = evaluate_design(prices, task.wind, task.design, replace(task.finance, incentive=0.0),
                                         initial_state=log.initial_state, periodic=False,
                                         start_hour=task.settings.start_hour, settings=task.settings.solver)
            else:
                prices = PriceSeries(task.reference_prices, task.case.ies.bus, "reference")
                result = evaluate_design(prices, task.wind, task.design, task.finance,
                                         start_hour=task.settings.start_hour, settings=task.settings.solver)
            summary = summarize(result, task.design, task.wind, task.finance, label="pt")
            cells.append(SweepCell(task.power_ratio, task.duration_hr, "pt", summary=summary))
        except Exception as exc:
            logger.warning(f"Sweep cell ({task.power_ratio}, {task.duration_hr}, pt) failed: {exc}")
            cells.append(_failed(task, "pt", exc))
    return cells


def reference_prices(case: NetworkCase, wind: WindAsset, span: int,
                     settings: Optional[SimulationSettings] = None) -> np.ndarray:
    """IES-bus LMPs of a wind-only, zero-cost run; the price-taker's exogenous series"""
    log = run_simulation(case, wind, BatteryDesign.none(), "wind_only_TI", span, settings)
    return log.ies_lmp


async def run_sweep(case: NetworkCase, wind: WindAsset, modes: Sequence[str] = tuple(SWEEP_MODES),
                    grid: Optional[GridSpec] = None, finance: Optional[FinanceParams] = None,
                    settings: Optional[SimulationSettings] = None, span: Optional[int] = None,
                    price_source: str = "reference", prices: Optional[np.ndarray] = None,
                    jobs: int = 1, template: Optional[BatteryDesign] = None,
                    mo_mode: str = DEFAULT_MO_MODE) -> SweepGrid:
    """Evaluate every design of the grid; jobs > 1 uses a bounded process pool"""
    grid = grid or GridSpec.full()
    finance = finance or FinanceParams()
    settings = settings or SimulationSettings()
    modes = tuple(modes)
    span = case.horizon - settings.start_hour if span is None else span
    unknown = [m for m in modes if m not in SWEEP_MODES]
    if unknown or not modes:
        raise ValidationException(f"sweep modes must be drawn from {SWEEP_MODES}, got {list(modes)}", field="modes")
    if price_source not in PT_PRICE_SOURCES:
        raise ValidationException(f"price source must be one of {PT_PRICE_SOURCES}", field="price_source")
    if price_source == "realized" and "mo" not in modes:
        raise ValidationException("realized price source needs the mo mode", field="price_source")
    if jobs < 1:
        raise ValidationException("jobs must be at least 1", field="jobs")

    started = time.perf_counter()
    if "pt" in modes and price_source == "reference" and prices is None:
        logger.info(f"Building reference prices from a {span} h wind-only run")
        prices = reference_prices(case, wind, span, settings)
    if prices is not None:
        prices = np.asarray(prices, dtype=float)
        if prices.size != span:
            raise ValidationException(f"reference prices cover {prices.size} h, sweep span is {span} h",
                                      field="prices")

    tasks = [
        SweepTask(case, wind, r, h, design, modes, finance, settings, span, price_source, prices, mo_mode)
        for r, h, design in grid.designs(wind, template)
    ]
    logger.info(f"Sweeping {len(tasks)} designs x {list(modes)} with {jobs} job(s)")

    if jobs == 1:
        results = [run_sweep_task(task) for task in tasks]
    else:
        loop = asyncio.get_running_loop()
        with ProcessPoolExecutor(max_workers=min(jobs, os.cpu_count() or 1)) as pool:
            results = await asyncio.gather(*(loop.run_in_executor(pool, run_sweep_task, task) for task in tasks))

    sweep_grid = SweepGrid(grid, modes)
    for cells in results:
        for cell in cells:
            sweep_grid.add(cell)
    if sweep_grid.failures:
        logger.warning(f"{len(sweep_grid.failures)} sweep cell(s) failed")
    logger.log_performance("tea_report.run_sweep", time.perf_counter() - started, cells=len(sweep_grid.cells))
    return sweep_grid


def sweep(case: NetworkCase, wind: WindAsset, modes: Sequence[str] = tuple(SWEEP_MODES),
          grid: Optional[GridSpec] = None, finance: Optional[FinanceParams] = None, **kwargs) -> SweepGrid:
    """Synchronous entry point for run_sweep"""
    return asyncio.run(run_sweep(case, wind, modes, grid, finance, **kwargs))


async def write_sweep_outputs(sweep_grid: SweepGrid, out_dir: str,
                              metrics: Sequence[str] = SWEEP_METRICS) -> List[str]:
    """Per-cell JSON, one CSV matrix per metric and mode, PT-MO differences and the long CSV"""
    cell_dir = os.path.join(out_dir, "cells")
    os.makedirs(cell_dir, exist_ok=True)
    written = []
    writes = []
    for cell in sweep_grid.ordered_cells():
        path = os.path.join(cell_dir, f"{cell.mode}_r{cell.power_ratio:g}_h{cell.duration_hr:g}.json")
        writes.append(write_json_async(path, cell.to_dict()))
        written.append(path)

    for metric in metrics:
        for mode in sweep_grid.modes:
            path = os.path.join(out_dir, f"{metric}_{mode}.csv")
            text = sweep_grid.matrix(metric, mode).to_csv(float_format=CSV_FLOAT_FORMAT)
            writes.append(write_text_async(path, text))
            written.append(path)
        if {"pt", "mo"} <= set(sweep_grid.modes):
            path = os.path.join(out_dir, f"{metric}_diff.csv")
            text = sweep_grid.difference(metric).to_csv(float_format=CSV_FLOAT_FORMAT)
            writes.append(write_text_async(path, text))
            written.append(path)

    path = os.path.join(out_dir, SWEEP_LONG_FILE)
    text = sweep_grid.to_long_frame(metrics).to_csv(index=False, float_format=CSV_FLOAT_FORMAT)
    writes.append(write_text_async(path, text))
    written.append(path)
    await asyncio.gather(*writes)
    return written
