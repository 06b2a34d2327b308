"""
Linear and mixed-integer optimization engine for iesbench
Dense two-phase simplex with duals, a HiGHS backend and best-bound branch and bound
"""

import heapq
import math
import os
import time
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from constants import (
    BRANCH_AND_BOUND_SETTINGS,
    DEFAULT_MIP_GAP,
    DEFAULT_SOLVER_BACKEND,
    DENSE_SIMPLEX_MAX_CELLS,
    INTEGRALITY_TOLERANCE,
    MILP_BACKENDS,
    SIMPLEX_SETTINGS,
    SOLVER_BACKENDS,
)
from exceptions import (
    ModelValidationException,
    SolverFailureException,
    SolverNumericalException,
)
from utils.logger import get_logger

logger = get_logger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
GAP_LIMIT = "gap_limit"

SENSES = {"<=": "L", "=": "E", "==": "E", ">=": "G", "L": "L", "E": "E", "G": "G"}
_LP_SENSE_TEXT = {"L": "<=", "E": "=", "G": ">="}

# per-process solve counts, read by the run monitor
_SOLVE_COUNTS = {"lp": 0, "milp": 0}


def solve_counts() -> Dict[str, int]:
    return dict(_SOLVE_COUNTS)


def reset_solve_counts():
    for key in _SOLVE_COUNTS:
        _SOLVE_COUNTS[key] = 0


@dataclass
class SolverSettings:
    """Knobs shared by every solve"""
    backend: str = DEFAULT_SOLVER_BACKEND
    milp_backend: str = "branch_and_bound"
    mip_gap: float = DEFAULT_MIP_GAP
    max_nodes: int = BRANCH_AND_BOUND_SETTINGS["max_nodes"]
    time_limit_s: float = BRANCH_AND_BOUND_SETTINGS["time_limit_s"]
    dense_max_cells: int = DENSE_SIMPLEX_MAX_CELLS
    max_iterations: int = SIMPLEX_SETTINGS["max_iterations"]
    refactor_every: int = SIMPLEX_SETTINGS["refactor_every"]
    max_refactor_attempts: int = SIMPLEX_SETTINGS["max_refactor_attempts"]
    pivot_tolerance: float = SIMPLEX_SETTINGS["pivot_tolerance"]
    optimality_tolerance: float = SIMPLEX_SETTINGS["optimality_tolerance"]
    feasibility_tolerance: float = SIMPLEX_SETTINGS["feasibility_tolerance"]
    degenerate_pivots_before_bland: int = SIMPLEX_SETTINGS["degenerate_pivots_before_bland"]
    dump_lp_dir: Optional[str] = None

    def __post_init__(self):
        if self.backend not in SOLVER_BACKENDS:
            raise ModelValidationException(f"unknown LP backend '{self.backend}'")
        if self.milp_backend not in MILP_BACKENDS:
            raise ModelValidationException(f"unknown MILP backend '{self.milp_backend}'")
        if not 0.0 <= self.mip_gap < 1.0:
            raise ModelValidationException(f"MIP gap {self.mip_gap} must lie in [0, 1)")


@dataclass
class Variable:
    name: str
    lb: float = 0.0
    ub: float = math.inf
    integer: bool = False
    obj: float = 0.0


@dataclass
class ModelArrays:
    """Matrix form of a LinearModel; c is in the model's own sense"""
    c: np.ndarray
    A: sparse.csr_matrix
    senses: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integrality: np.ndarray
    maximize: bool

    @property
    def c_min(self) -> np.ndarray:
        return -self.c if self.maximize else self.c


class LinearModel:
    """Named variables with bounds and integrality, linear rows and a linear objective"""

    def __init__(self, name: str = "model", sense: str = "min"):
        if sense not in ("min", "max"):
            raise ModelValidationException(f"objective sense must be 'min' or 'max', got '{sense}'")
        self.name = name
        self.sense = sense
        self.variables: List[Variable] = []
        self._var_index: Dict[str, int] = {}
        self._row_ids: List[int] = []
        self._col_ids: List[int] = []
        self._values: List[float] = []
        self.row_senses: List[str] = []
        self.rhs: List[float] = []
        self.row_names: List[str] = []

    @property
    def num_vars(self) -> int:
        return len(self.variables)

    @property
    def num_constraints(self) -> int:
        return len(self.rhs)

    @property
    def maximize(self) -> bool:
        return self.sense == "max"

    @property
    def integer_indices(self) -> np.ndarray:
        return np.array([j for j, v in enumerate(self.variables) if v.integer], dtype=int)

    @property
    def is_mip(self) -> bool:
        return any(v.integer for v in self.variables)

    def add_var(self, name: str, lb: float = 0.0, ub: float = math.inf,
                integer: bool = False, obj: float = 0.0) -> int:
        if name in self._var_index:
            raise ModelValidationException(f"duplicate variable '{name}' in model {self.name}")
        index = len(self.variables)
        self.variables.append(Variable(name, float(lb), float(ub), bool(integer), float(obj)))
        self._var_index[name] = index
        return index

    def add_vars(self, prefix: str, count: int, lb: Union[float, Sequence[float]] = 0.0,
                 ub: Union[float, Sequence[float]] = math.inf, integer: bool = False,
                 obj: Union[float, Sequence[float]] = 0.0) -> np.ndarray:
        """Add an indexed family prefix[0..count-1]; returns their column indices"""
        lbs = np.broadcast_to(np.asarray(lb, dtype=float), (count,))
        ubs = np.broadcast_to(np.asarray(ub, dtype=float), (count,))
        objs = np.broadcast_to(np.asarray(obj, dtype=float), (count,))
        return np.array([
            self.add_var(f"{prefix}[{k}]", lbs[k], ubs[k], integer, objs[k]) for k in range(count)
        ], dtype=int)

    def var_index(self, name: str) -> int:
        try:
            return self._var_index[name]
        except KeyError:
            raise ModelValidationException(f"unknown variable '{name}' in model {self.name}")

    def set_objective(self, index: int, coeff: float):
        self.variables[index].obj = float(coeff)

    def add_constraint(self, coeffs: Union[Mapping[int, float], Iterable[Tuple[int, float]]],
                       sense: str, rhs: float, name: Optional[str] = None) -> int:
        """Add one row; coefficients on a repeated column are summed"""
        if sense not in SENSES:
            raise ModelValidationException(f"unknown constraint sense '{sense}'")
        items = coeffs.items() if isinstance(coeffs, Mapping) else coeffs
        row = len(self.rhs)
        for col, value in items:
            self._row_ids.append(row)
            self._col_ids.append(int(col))
            self._values.append(float(value))
        self.row_senses.append(SENSES[sense])
        self.rhs.append(float(rhs))
        self.row_names.append(name or f"c{row}")
        return row

    def add_constraints(self, cols: np.ndarray, values: np.ndarray, sense: str,
                        rhs: Union[float, np.ndarray], prefix: str) -> np.ndarray:
        """Add a block of rows: row k has coefficients values[k] on columns cols[k]"""
        cols = np.atleast_2d(np.asarray(cols, dtype=int))
        values = np.broadcast_to(np.asarray(values, dtype=float), cols.shape)
        count = cols.shape[0]
        rhs = np.broadcast_to(np.asarray(rhs, dtype=float), (count,))
        if sense not in SENSES:
            raise ModelValidationException(f"unknown constraint sense '{sense}'")
        first = len(self.rhs)
        rows = np.repeat(np.arange(first, first + count), cols.shape[1])
        self._row_ids.extend(rows.tolist())
        self._col_ids.extend(cols.reshape(-1).tolist())
        self._values.extend(values.reshape(-1).tolist())
        self.row_senses.extend([SENSES[sense]] * count)
        self.rhs.extend(rhs.tolist())
        self.row_names.extend(f"{prefix}[{k}]" for k in range(count))
        return np.arange(first, first + count)

    def row_index(self, name: str) -> int:
        return self.row_names.index(name)

    def validate(self):
        """Reject non-finite data, crossed bounds and rows on undeclared columns"""
        for var in self.variables:
            if math.isnan(var.lb) or math.isnan(var.ub) or var.lb > var.ub:
                raise ModelValidationException(f"variable '{var.name}' has bounds [{var.lb}, {var.ub}]")
            if var.lb == math.inf or var.ub == -math.inf:
                raise ModelValidationException(f"variable '{var.name}' has an infinite bound on the wrong side")
            if not math.isfinite(var.obj):
                raise ModelValidationException(f"variable '{var.name}' has a non-finite objective coefficient")
        if self._col_ids:
            cols = np.asarray(self._col_ids)
            if cols.min() < 0 or cols.max() >= self.num_vars:
                raise ModelValidationException("constraint references an undeclared variable")
        if not np.all(np.isfinite(self._values)) or not np.all(np.isfinite(self.rhs)):
            raise ModelValidationException("constraint data must be finite")

    def to_arrays(self) -> ModelArrays:
        self.validate()
        A = sparse.coo_matrix(
            (self._values, (self._row_ids, self._col_ids)),
            shape=(self.num_constraints, self.num_vars),
        ).tocsr()
        A.sum_duplicates()
        return ModelArrays(
            c=np.array([v.obj for v in self.variables], dtype=float),
            A=A,
            senses=np.array(self.row_senses, dtype="<U1"),
            b=np.array(self.rhs, dtype=float),
            lb=np.array([v.lb for v in self.variables], dtype=float),
            ub=np.array([v.ub for v in self.variables], dtype=float),
            integrality=np.array([v.integer for v in self.variables], dtype=bool),
            maximize=self.maximize,
        )

    def copy(self, name: Optional[str] = None) -> "LinearModel":
        other = LinearModel(name or self.name, self.sense)
        other.variables = [replace(v) for v in self.variables]
        other._var_index = dict(self._var_index)
        other._row_ids = list(self._row_ids)
        other._col_ids = list(self._col_ids)
        other._values = list(self._values)
        other.row_senses = list(self.row_senses)
        other.rhs = list(self.rhs)
        other.row_names = list(self.row_names)
        return other

    def fix_integers(self, values: np.ndarray) -> "LinearModel":
        """Copy with every integer variable pinned to its rounded value and relaxed to continuous"""
        fixed = self.copy(f"{self.name}_fixed")
        for j in self.integer_indices:
            value = float(np.round(values[j]))
            var = fixed.variables[j]
            var.lb = var.ub = value
            var.integer = False
        return fixed

    def to_lp_text(self) -> str:
        """Human-readable LP file in the CPLEX LP layout"""
        arrays = self.to_arrays()
        names = [v.name for v in self.variables]

        def linear(cols, vals) -> str:
            terms = [f"{'-' if v < 0 else '+'} {abs(v):.12g} {names[j]}" for j, v in zip(cols, vals) if v != 0]
            return " ".join(terms) if terms else "0"

        lines = [f"\\ model {self.name}", "Maximize" if self.maximize else "Minimize"]
        nz = np.flatnonzero(arrays.c)
        lines.append(f" obj: {linear(nz, arrays.c[nz])}")
        lines.append("Subject To")
        for i in range(self.num_constraints):
            start, stop = arrays.A.indptr[i], arrays.A.indptr[i + 1]
            expr = linear(arrays.A.indices[start:stop], arrays.A.data[start:stop])
            lines.append(f" {self.row_names[i]}: {expr} {_LP_SENSE_TEXT[arrays.senses[i]]} {arrays.b[i]:.12g}")
        lines.append("Bounds")
        for v in self.variables:
            if v.lb == -math.inf and v.ub == math.inf:
                lines.append(f" {v.name} free")
            elif v.ub == math.inf:
                lines.append(f" {v.name} >= {v.lb:.12g}")
            elif v.lb == -math.inf:
                lines.append(f" -inf <= {v.name} <= {v.ub:.12g}")
            else:
                lines.append(f" {v.lb:.12g} <= {v.name} <= {v.ub:.12g}")
        integers = [v.name for v in self.variables if v.integer]
        if integers:
            lines.append("General")
            lines.extend(f" {name}" for name in integers)
        lines.append("End")
        return "\n".join(lines) + "\n"


@dataclass
class Solution:
    """Result of a solve; duals are d(objective)/d(rhs) in the model's own sense"""
    status: str
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective: float = math.nan
    dual_objective: float = math.nan
    mip_gap: float = 0.0
    best_bound: float = math.nan
    iterations: int = 0
    nodes: int = 0
    bound_history: List[float] = field(default_factory=list)
    backend: str = ""
    primal_residual: float = 0.0

    @property
    def is_optimal(self) -> bool:
        return self.status == OPTIMAL

    @property
    def has_incumbent(self) -> bool:
        return self.status in (OPTIMAL, GAP_LIMIT) and self.x.size > 0

    def value(self, index) -> Union[float, np.ndarray]:
        return self.x[index]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": self.status,
            "objective": self.objective,
            "dual_objective": self.dual_objective,
            "mip_gap": self.mip_gap,
            "best_bound": self.best_bound,
            "iterations": self.iterations,
            "nodes": self.nodes,
            "backend": self.backend,
            "primal_residual": self.primal_residual,
        }


@dataclass
class _LpResult:
    status: str
    x: Optional[np.ndarray] = None
    y_min: Optional[np.ndarray] = None
    iterations: int = 0


def primal_residual(arrays: ModelArrays, x: np.ndarray) -> float:
    """Largest violation of any row or bound at x"""
    activity = arrays.A @ x
    gaps = np.zeros_like(arrays.b)
    gaps = np.where(arrays.senses == "L", activity - arrays.b, gaps)
    gaps = np.where(arrays.senses == "G", arrays.b - activity, gaps)
    gaps = np.where(arrays.senses == "E", np.abs(activity - arrays.b), gaps)
    worst = float(gaps.max(initial=0.0))
    bound_gap = max(float((arrays.lb - x).max(initial=0.0)), float((x - arrays.ub).max(initial=0.0)))
    return max(worst, bound_gap, 0.0)


def lagrangian_dual_objective(arrays: ModelArrays, y_min: np.ndarray, lb: np.ndarray,
                              ub: np.ndarray, tolerance: float) -> float:
    """min over the box of the Lagrangian, in the minimization form"""
    reduced = arrays.c_min - arrays.A.T @ y_min
    value = float(arrays.b @ y_min)
    for d, lo, hi in zip(reduced, lb, ub):
        if d > tolerance:
            value += d * lo if math.isfinite(lo) else -math.inf
        elif d < -tolerance:
            value += d * hi if math.isfinite(hi) else -math.inf
        elif math.isfinite(lo):
            value += d * lo
        elif math.isfinite(hi):
            value += d * hi
    return value


class DenseSimplex:
    """Two-phase tableau simplex on the bound-shifted standard form"""

    def __init__(self, settings: SolverSettings):
        self.settings = settings
        self.iterations = 0
        self.refactor_failures = 0

    def solve(self, arrays: ModelArrays, lb: np.ndarray, ub: np.ndarray) -> _LpResult:
        s = self.settings
        A = arrays.A.toarray()
        m, n = A.shape
        c = arrays.c_min

        # x = offset + sum of signed nonnegative columns
        orig, sign, offset, bound_rows = [], [], np.zeros(n), []
        for j in range(n):
            lo, hi = lb[j], ub[j]
            if math.isfinite(lo):
                offset[j] = lo
                if math.isfinite(hi):
                    bound_rows.append((len(orig), hi - lo))
                orig.append(j)
                sign.append(1.0)
            elif math.isfinite(hi):
                offset[j] = hi
                orig.append(j)
                sign.append(-1.0)
            else:
                orig.extend((j, j))
                sign.extend((1.0, -1.0))
        orig = np.array(orig, dtype=int)
        sign = np.array(sign)
        nz = len(orig)

        rows_total = m + len(bound_rows)
        Az = np.zeros((rows_total, nz))
        Az[:m] = A[:, orig] * sign
        rhs = np.empty(rows_total)
        rhs[:m] = arrays.b - A @ offset
        senses = np.empty(rows_total, dtype="<U1")
        senses[:m] = arrays.senses
        for k, (col, width) in enumerate(bound_rows):
            Az[m + k, col] = 1.0
            rhs[m + k] = width
            senses[m + k] = "L"

        slack_rows = np.flatnonzero(senses != "E")
        ns = len(slack_rows)
        slack_block = np.zeros((rows_total, ns))
        slack_block[slack_rows, np.arange(ns)] = np.where(senses[slack_rows] == "L", 1.0, -1.0)

        flip = np.where(rhs < 0, -1.0, 1.0)
        Az *= flip[:, None]
        slack_block *= flip[:, None]
        rhs = rhs * flip

        basis = np.full(rows_total, -1, dtype=int)
        for k, i in enumerate(slack_rows):
            if slack_block[i, k] > 0:
                basis[i] = nz + k
        art_rows = np.flatnonzero(basis < 0)
        na = len(art_rows)
        art_block = np.zeros((rows_total, na))
        art_block[art_rows, np.arange(na)] = 1.0
        basis[art_rows] = nz + ns + np.arange(na)

        full = np.hstack([Az, slack_block, art_block])
        ncols = full.shape[1]
        self._full = full
        self._rhs = rhs
        tableau = np.hstack([full, rhs[:, None]])

        art_start = nz + ns
        cost1 = np.zeros(ncols)
        cost1[art_start:] = 1.0
        allowed = np.ones(ncols, dtype=bool)

        if na:
            tableau, status = self._run_phase(tableau, basis, cost1, allowed)
            infeasibility = float(cost1[basis] @ tableau[:, -1])
            if infeasibility > s.feasibility_tolerance * max(1.0, float(np.abs(rhs).max(initial=0.0))):
                return _LpResult(INFEASIBLE, iterations=self.iterations)
            tableau = self._drive_out_artificials(tableau, basis, art_start)

        cost2 = np.zeros(ncols)
        cost2[:nz] = c[orig] * sign
        allowed[art_start:] = False
        tableau, status = self._run_phase(tableau, basis, cost2, allowed)
        if status == UNBOUNDED:
            return _LpResult(UNBOUNDED, iterations=self.iterations)

        B = full[:, basis]
        try:
            x_basic = np.linalg.solve(B, rhs)
            y_std = np.linalg.solve(B.T, cost2[basis])
        except np.linalg.LinAlgError as e:
            raise SolverNumericalException(f"final basis is singular: {e}", attempts=self.refactor_failures)

        w = np.zeros(ncols)
        w[basis] = x_basic
        z = np.maximum(w[:nz], 0.0)
        x = offset.copy()
        np.add.at(x, orig, sign * z)
        y_min = (flip * y_std)[:m]
        return _LpResult(OPTIMAL, x=x, y_min=y_min, iterations=self.iterations)

    def _run_phase(self, tableau: np.ndarray, basis: np.ndarray, cost: np.ndarray,
                   allowed: np.ndarray) -> Tuple[np.ndarray, str]:
        s = self.settings
        ncols = cost.size
        degenerate_run = 0
        bland = False
        since_refactor = 0

        while True:
            if self.iterations >= s.max_iterations:
                raise SolverNumericalException(f"simplex iteration limit {s.max_iterations} reached",
                                               attempts=self.refactor_failures)
            reduced = cost - cost[basis] @ tableau[:, :ncols]
            candidates = np.flatnonzero(allowed & (reduced < -s.optimality_tolerance))
            if candidates.size == 0:
                return tableau, OPTIMAL
            entering = int(candidates[0]) if bland else int(candidates[np.argmin(reduced[candidates])])

            column = tableau[:, entering]
            rows = np.flatnonzero(column > s.pivot_tolerance)
            if rows.size == 0:
                return tableau, UNBOUNDED
            ratios = tableau[rows, -1] / column[rows]
            best = ratios.min()
            ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
            leaving_row = int(ties[np.argmin(basis[ties])])

            if best <= s.feasibility_tolerance:
                degenerate_run += 1
                if degenerate_run >= s.degenerate_pivots_before_bland and not bland:
                    bland = True
                    logger.debug(f"Switching to Bland's rule after {degenerate_run} degenerate pivots")
            else:
                degenerate_run = 0

            self._pivot(tableau, leaving_row, entering)
            basis[leaving_row] = entering
            self.iterations += 1
            since_refactor += 1

            if since_refactor >= s.refactor_every or not np.all(np.isfinite(tableau[:, -1])):
                tableau = self._refactor(tableau, basis)
                since_refactor = 0
            np.clip(tableau[:, -1], 0.0, None, out=tableau[:, -1])

    @staticmethod
    def _pivot(tableau: np.ndarray, row: int, col: int):
        pivot_row = tableau[row] / tableau[row, col]
        tableau -= np.outer(tableau[:, col], pivot_row)
        tableau[row] = pivot_row

    def _refactor(self, tableau: np.ndarray, basis: np.ndarray) -> np.ndarray:
        """Rebuild B^-1 [A | b] from the original matrix"""
        B = self._full[:, basis]
        try:
            if np.linalg.cond(B) > 1e12:
                raise np.linalg.LinAlgError("ill-conditioned basis")
            rebuilt = np.linalg.solve(B, np.hstack([self._full, self._rhs[:, None]]))
        except np.linalg.LinAlgError as e:
            self.refactor_failures += 1
            logger.warning(f"Refactorization failed ({self.refactor_failures}): {e}")
            if self.refactor_failures >= self.settings.max_refactor_attempts or not np.all(np.isfinite(tableau)):
                raise SolverNumericalException(
                    f"basis could not be refactored after {self.refactor_failures} attempts",
                    attempts=self.refactor_failures,
                )
            return tableau
        if (rebuilt[:, -1] < -self.settings.feasibility_tolerance * 10).any():
            self.refactor_failures += 1
            if self.refactor_failures >= self.settings.max_refactor_attempts:
                raise SolverNumericalException("basic solution lost feasibility",
                                               attempts=self.refactor_failures)
        return rebuilt

    def _drive_out_artificials(self, tableau: np.ndarray, basis: np.ndarray, art_start: int) -> np.ndarray:
        """Pivot zero-valued artificials out of the basis where a structural column allows it"""
        for row in np.flatnonzero(basis >= art_start):
            entries = np.abs(tableau[row, :art_start])
            entries[basis[basis < art_start]] = 0.0
            col = int(np.argmax(entries)) if entries.size else -1
            if col >= 0 and entries[col] > self.settings.pivot_tolerance:
                self._pivot(tableau, int(row), col)
                basis[row] = col
                self.iterations += 1
        return tableau


def _solve_highs_lp(arrays: ModelArrays, lb: np.ndarray, ub: np.ndarray,
                    settings: SolverSettings) -> _LpResult:
    le = arrays.senses == "L"
    ge = arrays.senses == "G"
    eq = arrays.senses == "E"
    A_ub = sparse.vstack([arrays.A[le], -arrays.A[ge]]).tocsr()
    b_ub = np.concatenate([arrays.b[le], -arrays.b[ge]])
    A_eq = arrays.A[eq]
    b_eq = arrays.b[eq]

    result = linprog(
        arrays.c_min,
        A_ub=A_ub if A_ub.shape[0] else None,
        b_ub=b_ub if A_ub.shape[0] else None,
        A_eq=A_eq if A_eq.shape[0] else None,
        b_eq=b_eq if A_eq.shape[0] else None,
        bounds=np.column_stack([lb, ub]),
        method="highs",
        options={"primal_feasibility_tolerance": settings.feasibility_tolerance,
                 "dual_feasibility_tolerance": settings.optimality_tolerance},
    )
    iterations = int(getattr(result, "nit", 0) or 0)
    if result.status == 2:
        return _LpResult(INFEASIBLE, iterations=iterations)
    if result.status == 3:
        return _LpResult(UNBOUNDED, iterations=iterations)
    if result.status == 4:
        raise SolverNumericalException(f"HiGHS reported numerical difficulties: {result.message}")
    if result.status != 0:
        raise SolverFailureException(f"HiGHS stopped early: {result.message}", status=str(result.status))

    y_min = np.zeros(arrays.b.size)
    n_le = int(le.sum())
    if A_ub.shape[0]:
        marginals = np.asarray(result.ineqlin.marginals)
        y_min[le] = marginals[:n_le]
        y_min[ge] = -marginals[n_le:]
    if A_eq.shape[0]:
        y_min[eq] = np.asarray(result.eqlin.marginals)
    return _LpResult(OPTIMAL, x=np.asarray(result.x, dtype=float), y_min=y_min, iterations=iterations)


def _dense_cells(arrays: ModelArrays, lb: np.ndarray, ub: np.ndarray) -> int:
    m, n = arrays.A.shape
    rows = m + int(np.sum(np.isfinite(lb) & np.isfinite(ub)))
    return rows * (n + 2 * rows)


def _select_backend(arrays: ModelArrays, lb: np.ndarray, ub: np.ndarray, settings: SolverSettings) -> str:
    if settings.backend != "auto":
        return settings.backend
    return "simplex" if _dense_cells(arrays, lb, ub) <= settings.dense_max_cells else "highs"


def _solve_relaxation(arrays: ModelArrays, lb: np.ndarray, ub: np.ndarray,
                      settings: SolverSettings) -> Tuple[_LpResult, str]:
    backend = _select_backend(arrays, lb, ub, settings)
    if backend == "simplex":
        try:
            return DenseSimplex(settings).solve(arrays, lb, ub), "simplex"
        except SolverNumericalException as e:
            if settings.backend != "auto":
                raise
            logger.warning(f"Dense simplex failed, retrying with HiGHS: {e.message}")
    return _solve_highs_lp(arrays, lb, ub, settings), "highs"


def _package(arrays: ModelArrays, result: _LpResult, backend: str, lb: np.ndarray,
             ub: np.ndarray, settings: SolverSettings) -> Solution:
    if result.status != OPTIMAL:
        return Solution(status=result.status, iterations=result.iterations, backend=backend)
    sign = -1.0 if arrays.maximize else 1.0
    objective = float(arrays.c @ result.x)
    dual_min = lagrangian_dual_objective(arrays, result.y_min, lb, ub, settings.optimality_tolerance)
    residual = primal_residual(arrays, result.x)
    scale = max(1.0, float(np.abs(arrays.b).max(initial=0.0)))
    if residual > settings.feasibility_tolerance * scale:
        logger.warning(f"{backend} returned a point violating its model by {residual:.3g}",
                       backend=backend, status=OPTIMAL)
    return Solution(
        status=OPTIMAL,
        x=result.x,
        duals=sign * result.y_min,
        objective=objective,
        dual_objective=sign * dual_min,
        best_bound=objective,
        iterations=result.iterations,
        backend=backend,
        primal_residual=residual,
    )


def _dump(model: LinearModel, settings: SolverSettings):
    directory = settings.dump_lp_dir
    if not directory:
        return
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, f"{model.name}.lp")
    with open(path, "w", encoding="utf-8") as f:
        f.write(model.to_lp_text())
    logger.debug(f"Dumped model {model.name} to {path}")


def solve_lp(model: LinearModel, settings: Optional[SolverSettings] = None) -> Solution:
    """Solve a continuous model; infeasible and unbounded come back as statuses"""
    settings = settings or SolverSettings()
    if model.is_mip:
        raise ModelValidationException(f"model {model.name} has integer variables; use solve_milp")
    _dump(model, settings)
    start = time.perf_counter()
    arrays = model.to_arrays()
    _SOLVE_COUNTS["lp"] += 1
    result, backend = _solve_relaxation(arrays, arrays.lb, arrays.ub, settings)
    solution = _package(arrays, result, backend, arrays.lb, arrays.ub, settings)
    logger.log_solve(model.name, solution.status, time.perf_counter() - start,
                     iterations=solution.iterations, backend=backend)
    return solution


def solve_milp(model: LinearModel, rel_gap: Optional[float] = None,
               settings: Optional[SolverSettings] = None) -> Solution:
    """Solve a mixed-integer model to within rel_gap of the best bound"""
    settings = settings or SolverSettings()
    rel_gap = settings.mip_gap if rel_gap is None else rel_gap
    if not model.is_mip:
        return solve_lp(model, settings)
    _dump(model, settings)
    start = time.perf_counter()
    arrays = model.to_arrays()
    _SOLVE_COUNTS["milp"] += 1
    if settings.milp_backend == "highs":
        solution = _solve_highs_milp(arrays, rel_gap, settings)
    else:
        solution = BranchAndBound(arrays, rel_gap, settings).run()
    logger.log_solve(model.name, solution.status, time.perf_counter() - start,
                     iterations=solution.iterations, nodes=solution.nodes, objective=solution.objective)
    return solution


@dataclass(order=True)
class _Node:
    bound: float
    node_id: int
    lb: np.ndarray = field(compare=False)
    ub: np.ndarray = field(compare=False)
    depth: int = field(compare=False, default=0)


class BranchAndBound:
    """Best-bound search with most-fractional branching, in minimization form"""

    heuristic_every = 25

    def __init__(self, arrays: ModelArrays, rel_gap: float, settings: SolverSettings):
        self.arrays = arrays
        self.rel_gap = rel_gap
        self.settings = settings
        self.int_idx = np.flatnonzero(arrays.integrality)
        self.incumbent_x: Optional[np.ndarray] = None
        self.incumbent_y: Optional[np.ndarray] = None
        self.incumbent_obj = math.inf
        self.iterations = 0
        self.nodes = 0
        self.bound_history: List[float] = []
        self._counter = 0

    def _solve(self, lb: np.ndarray, ub: np.ndarray) -> _LpResult:
        result, _ = _solve_relaxation(self.arrays, lb, ub, self.settings)
        self.iterations += result.iterations
        return result

    def _objective(self, x: np.ndarray) -> float:
        return float(self.arrays.c_min @ x)

    def _fractionality(self, x: np.ndarray) -> np.ndarray:
        values = x[self.int_idx]
        return np.abs(values - np.round(values))

    def _accept(self, x: np.ndarray, y: np.ndarray):
        x = x.copy()
        x[self.int_idx] = np.round(x[self.int_idx])
        obj = self._objective(x)
        if obj < self.incumbent_obj:
            self.incumbent_obj = obj
            self.incumbent_x = x
            self.incumbent_y = y

    def _rounding_heuristic(self, x: np.ndarray, lb: np.ndarray, ub: np.ndarray):
        """Fix integers at rounded-up then nearest values and re-solve the continuous part"""
        for rounded in (np.ceil(x[self.int_idx] - INTEGRALITY_TOLERANCE), np.round(x[self.int_idx])):
            rounded = np.clip(rounded, lb[self.int_idx], ub[self.int_idx])
            fixed_lb, fixed_ub = lb.copy(), ub.copy()
            fixed_lb[self.int_idx] = rounded
            fixed_ub[self.int_idx] = rounded
            result = self._solve(fixed_lb, fixed_ub)
            if result.status == OPTIMAL:
                self._accept(result.x, result.y_min)
                return

    def _gap(self, bound: float) -> float:
        if not math.isfinite(self.incumbent_obj):
            return math.inf
        return max(0.0, self.incumbent_obj - bound) / max(1e-10, abs(self.incumbent_obj))

    def _push(self, heap: List[_Node], bound: float, lb: np.ndarray, ub: np.ndarray, depth: int):
        self._counter += 1
        heapq.heappush(heap, _Node(bound, self._counter, lb, ub, depth))

    def run(self) -> Solution:
        s = self.settings
        start = time.perf_counter()
        root = self._solve(self.arrays.lb, self.arrays.ub)
        if root.status != OPTIMAL:
            return Solution(status=root.status, iterations=self.iterations, nodes=1, backend="branch_and_bound")

        heap: List[_Node] = []
        self._push(heap, self._objective(root.x), self.arrays.lb.copy(), self.arrays.ub.copy(), 0)
        root_result: Optional[_LpResult] = root
        best_bound = self._objective(root.x)
        exhausted = False

        while heap:
            best_bound = min(heap[0].bound, self.incumbent_obj)
            self.bound_history.append(best_bound)
            if self._gap(best_bound) <= self.rel_gap:
                break
            if self.nodes >= s.max_nodes or time.perf_counter() - start > s.time_limit_s:
                exhausted = True
                break

            node = heapq.heappop(heap)
            if node.bound >= self.incumbent_obj:
                continue
            self.nodes += 1
            result = root_result if root_result is not None else self._solve(node.lb, node.ub)
            root_result = None
            if result.status != OPTIMAL:
                continue
            obj = self._objective(result.x)
            if obj >= self.incumbent_obj:
                continue

            frac = self._fractionality(result.x)
            if frac.size == 0 or frac.max() <= INTEGRALITY_TOLERANCE:
                self._accept(result.x, result.y_min)
                continue

            if self.nodes == 1 or self.nodes % self.heuristic_every == 0:
                self._rounding_heuristic(result.x, node.lb, node.ub)

            # most fractional, lowest index on ties
            pick = int(np.argmax(np.round(frac, 12)))
            j = int(self.int_idx[pick])
            value = result.x[j]
            down_ub = node.ub.copy()
            down_ub[j] = math.floor(value)
            up_lb = node.lb.copy()
            up_lb[j] = math.ceil(value)
            self._push(heap, obj, node.lb, down_ub, node.depth + 1)
            self._push(heap, obj, up_lb, node.ub, node.depth + 1)
        else:
            best_bound = self.incumbent_obj

        return self._finish(best_bound, exhausted and bool(heap))

    def _finish(self, best_bound: float, exhausted: bool) -> Solution:
        sign = -1.0 if self.arrays.maximize else 1.0
        if self.incumbent_x is None:
            return Solution(status=INFEASIBLE, iterations=self.iterations, nodes=self.nodes,
                            bound_history=[sign * b for b in self.bound_history], backend="branch_and_bound")
        best_bound = min(best_bound, self.incumbent_obj)
        gap = self._gap(best_bound)
        status = GAP_LIMIT if exhausted and gap > self.rel_gap else OPTIMAL
        if status == GAP_LIMIT:
            logger.warning(f"Branch and bound budget exhausted at gap {gap:.4%} after {self.nodes} nodes")
        objective = float(self.arrays.c @ self.incumbent_x)
        return Solution(
            status=status,
            x=self.incumbent_x,
            duals=sign * self.incumbent_y if self.incumbent_y is not None else np.zeros(0),
            objective=objective,
            mip_gap=gap,
            best_bound=sign * best_bound,
            iterations=self.iterations,
            nodes=self.nodes,
            bound_history=[sign * b for b in self.bound_history],
            backend="branch_and_bound",
        )


def _solve_highs_milp(arrays: ModelArrays, rel_gap: float, settings: SolverSettings) -> Solution:
    constraints = []
    lower = np.where(arrays.senses == "L", -np.inf, arrays.b)
    upper = np.where(arrays.senses == "G", np.inf, arrays.b)
    if arrays.A.shape[0]:
        constraints.append(LinearConstraint(arrays.A, lower, upper))
    result = milp(
        arrays.c_min,
        constraints=constraints,
        integrality=arrays.integrality.astype(int),
        bounds=Bounds(arrays.lb, arrays.ub),
        options={"mip_rel_gap": rel_gap, "time_limit": settings.time_limit_s,
                 "node_limit": settings.max_nodes},
    )
    sign = -1.0 if arrays.maximize else 1.0
    nodes = int(getattr(result, "mip_node_count", 0) or 0)
    if result.status == 2:
        return Solution(status=INFEASIBLE, nodes=nodes, backend="highs")
    if result.status == 3:
        return Solution(status=UNBOUNDED, nodes=nodes, backend="highs")
    if result.x is None:
        if result.status == 1:
            return Solution(status=INFEASIBLE, nodes=nodes, backend="highs")
        raise SolverFailureException(f"HiGHS MILP failed: {result.message}", status=str(result.status))
    x = np.asarray(result.x, dtype=float)
    x[arrays.integrality] = np.round(x[arrays.integrality])
    objective = float(arrays.c @ x)
    bound = getattr(result, "mip_dual_bound", None)
    bound = sign * float(bound) if bound is not None else objective
    gap = float(getattr(result, "mip_gap", 0.0) or 0.0)
    return Solution(
        status=OPTIMAL if result.status == 0 else GAP_LIMIT,
        x=x,
        objective=objective,
        mip_gap=gap,
        best_bound=bound,
        nodes=nodes,
        bound_history=[bound],
        backend="highs",
    )


def fixed_integer_duals(model: LinearModel, incumbent: Solution,
                        settings: Optional[SolverSettings] = None) -> Solution:
    """Pin integers at the incumbent and re-solve the continuous model for duals"""
    if not model.is_mip:
        return solve_lp(model, settings)
    if incumbent.x.size != model.num_vars:
        raise ModelValidationException(
            f"incumbent has {incumbent.x.size} values, model {model.name} has {model.num_vars} variables"
        )
    values = incumbent.x[model.integer_indices]
    if np.any(np.abs(values - np.round(values)) > INTEGRALITY_TOLERANCE):
        raise ModelValidationException("incumbent is not integral")
    return solve_lp(model.fix_integers(incumbent.x), settings)
