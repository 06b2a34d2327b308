"""
Tests for the LP/MILP layer
Model building, both LP backends, duals, branch and bound and LP dumps
"""

import itertools
import os

import numpy as np
import pytest

from constants import PRIMAL_FEASIBILITY_TOLERANCE
from core import WindAsset
from exceptions import ModelValidationException
from services.market import Bus, IesSite, NetworkCase, SimulationSettings, ThermalUnit, day_ahead_uc
from services.optimizer import (
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    LinearModel,
    Solution,
    SolverSettings,
    fixed_integer_duals,
    reset_solve_counts,
    solve_counts,
    solve_lp,
    solve_milp,
)

LP_BACKENDS = ["simplex", "highs"]
MILP_BACKENDS = ["branch_and_bound", "highs"]


def production_model() -> LinearModel:
    """max 3x + 2y  s.t.  x + y <= 4,  x + 3y <= 7,  x <= 3; optimum (3, 1) with value 11"""
    model = LinearModel("production", sense="max")
    x = model.add_var("x", obj=3.0)
    y = model.add_var("y", obj=2.0)
    model.add_constraint({x: 1.0, y: 1.0}, "<=", 4.0, name="capacity")
    model.add_constraint({x: 1.0, y: 3.0}, "<=", 7.0, name="labour")
    model.add_constraint({x: 1.0}, "<=", 3.0, name="market")
    return model


def knapsack(values, weights, capacity) -> LinearModel:
    model = LinearModel("knapsack", sense="max")
    items = model.add_vars("take", len(values), ub=1.0, integer=True, obj=values)
    model.add_constraint(list(zip(items, weights)), "<=", capacity, name="weight")
    return model


def brute_force_knapsack(values, weights, capacity) -> float:
    best = 0.0
    for choice in itertools.product([0, 1], repeat=len(values)):
        if np.dot(choice, weights) <= capacity:
            best = max(best, float(np.dot(choice, values)))
    return best


def random_lp(rng: np.random.Generator, n: int = 4, m: int = 5) -> LinearModel:
    """Bounded, feasible maximization: x = 0 satisfies every row"""
    model = LinearModel("random", sense="max")
    cols = model.add_vars("x", n, ub=rng.uniform(1.0, 5.0, n), obj=rng.uniform(-1.0, 3.0, n))
    for i in range(m):
        model.add_constraint(list(zip(cols, rng.uniform(0.0, 2.0, n))), "<=", rng.uniform(1.0, 6.0), name=f"r{i}")
    return model


class TestLinearModel:
    """Test model construction and validation"""

    def test_duplicate_variable_rejected(self):
        model = LinearModel()
        model.add_var("x")
        with pytest.raises(ModelValidationException):
            model.add_var("x")

    def test_unknown_sense_rejected(self):
        model = LinearModel()
        x = model.add_var("x")
        with pytest.raises(ModelValidationException):
            model.add_constraint({x: 1.0}, "<>", 1.0)

    def test_crossed_bounds_rejected(self):
        model = LinearModel()
        model.add_var("x", lb=2.0, ub=1.0)
        with pytest.raises(ModelValidationException):
            model.to_arrays()

    def test_block_rows(self):
        model = LinearModel()
        x = model.add_vars("x", 3)
        y = model.add_vars("y", 3)
        rows = model.add_constraints(np.column_stack([x, y]), [1.0, -1.0], "<=", [1.0, 2.0, 3.0], prefix="gap")
        assert list(rows) == [0, 1, 2]
        assert model.row_index("gap[2]") == 2
        arrays = model.to_arrays()
        assert arrays.A.shape == (3, 6)
        assert arrays.A[1, int(y[1])] == -1.0

    def test_lp_text(self):
        text = production_model().to_lp_text()
        assert text.startswith("\\ model production")
        assert "Maximize" in text
        assert " capacity: + 1 x + 1 y <= 4" in text

    def test_solve_lp_rejects_integers(self):
        with pytest.raises(ModelValidationException):
            solve_lp(knapsack([1.0], [1.0], 1.0))

    def test_unknown_backend_rejected(self):
        with pytest.raises(ModelValidationException):
            SolverSettings(backend="glpk")


class TestSolveLp:
    """Test both LP backends on small hand-checkable models"""

    @pytest.mark.parametrize("backend", LP_BACKENDS)
    def test_production_optimum(self, backend):
        solution = solve_lp(production_model(), SolverSettings(backend=backend))
        assert solution.status == OPTIMAL
        assert solution.backend == backend
        np.testing.assert_allclose(solution.x, [3.0, 1.0], atol=1e-7)
        assert solution.objective == pytest.approx(11.0)

    @pytest.mark.parametrize("backend", LP_BACKENDS)
    def test_duals_are_marginal_values(self, backend):
        """Raising capacity by one adds 2, the market limit adds 1, labour is slack"""
        solution = solve_lp(production_model(), SolverSettings(backend=backend))
        np.testing.assert_allclose(solution.duals, [2.0, 0.0, 1.0], atol=1e-7)
        assert solution.dual_objective == pytest.approx(solution.objective)

    @pytest.mark.parametrize("backend", LP_BACKENDS)
    def test_equality_and_free_variable(self, backend):
        """min y with x - y = 2 and x free below"""
        model = LinearModel("free")
        x = model.add_var("x", lb=-np.inf)
        y = model.add_var("y", lb=1.0, ub=3.0, obj=1.0)
        model.add_constraint({x: 1.0, y: -1.0}, "=", 2.0, name="link")
        model.add_constraint({x: 1.0}, ">=", -10.0, name="floor")
        solution = solve_lp(model, SolverSettings(backend=backend))
        assert solution.is_optimal
        assert solution.x[y] == pytest.approx(1.0)
        assert solution.x[x] == pytest.approx(3.0)

    @pytest.mark.parametrize("backend", LP_BACKENDS)
    def test_infeasible(self, backend):
        model = LinearModel("infeasible")
        x = model.add_var("x", obj=1.0)
        model.add_constraint({x: 1.0}, ">=", 5.0)
        model.add_constraint({x: 1.0}, "<=", 3.0)
        assert solve_lp(model, SolverSettings(backend=backend)).status == INFEASIBLE

    @pytest.mark.parametrize("backend", LP_BACKENDS)
    def test_unbounded(self, backend):
        model = LinearModel("unbounded", sense="max")
        x = model.add_var("x", obj=1.0)
        y = model.add_var("y")
        model.add_constraint({x: 1.0, y: -1.0}, "<=", 1.0)
        assert solve_lp(model, SolverSettings(backend=backend)).status == UNBOUNDED

    def test_backends_agree_on_random_models(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            model = random_lp(rng)
            dense = solve_lp(model, SolverSettings(backend="simplex"))
            highs = solve_lp(model, SolverSettings(backend="highs"))
            assert dense.is_optimal and highs.is_optimal
            assert dense.objective == pytest.approx(highs.objective, abs=1e-6)
            assert dense.dual_objective == pytest.approx(dense.objective, abs=1e-6)

    def test_auto_picks_simplex_for_small_models(self):
        assert solve_lp(production_model()).backend == "simplex"

    def test_auto_switches_to_highs_above_cell_limit(self):
        solution = solve_lp(production_model(), SolverSettings(dense_max_cells=1))
        assert solution.backend == "highs"


class TestSolveMilp:
    """Test branch and bound against brute force"""

    VALUES = [10.0, 13.0, 7.0, 8.0, 4.0]
    WEIGHTS = [5.0, 6.0, 3.0, 4.0, 2.0]

    @pytest.mark.parametrize("backend", MILP_BACKENDS)
    def test_knapsack_matches_enumeration(self, backend):
        expected = brute_force_knapsack(self.VALUES, self.WEIGHTS, 10.0)
        solution = solve_milp(knapsack(self.VALUES, self.WEIGHTS, 10.0), rel_gap=0.0,
                              settings=SolverSettings(milp_backend=backend))
        assert solution.status == OPTIMAL
        assert solution.objective == pytest.approx(expected)
        np.testing.assert_allclose(solution.x, np.round(solution.x), atol=1e-6)

    def test_random_knapsacks(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            values = rng.integers(1, 20, 6).astype(float)
            weights = rng.integers(1, 10, 6).astype(float)
            capacity = float(rng.integers(5, 25))
            solution = solve_milp(knapsack(values, weights, capacity), rel_gap=0.0)
            assert solution.objective == pytest.approx(brute_force_knapsack(values, weights, capacity))

    def test_bound_history_is_monotone(self):
        solution = solve_milp(knapsack(self.VALUES, self.WEIGHTS, 10.0), rel_gap=0.0)
        history = np.array(solution.bound_history)
        assert np.all(np.diff(history) <= 1e-9)
        assert solution.best_bound == pytest.approx(solution.objective)

    def test_infeasible_integer_model(self):
        model = LinearModel("parity")
        k = model.add_var("k", ub=10.0, integer=True)
        model.add_constraint({k: 2.0}, "=", 3.0)
        assert solve_milp(model).status == INFEASIBLE

    def test_continuous_model_goes_to_lp(self):
        assert solve_milp(production_model()).objective == pytest.approx(11.0)


class TestFixedIntegerDuals:
    """Test pricing a committed schedule"""

    def commitment_model(self) -> LinearModel:
        model = LinearModel("uc")
        u = model.add_var("u", ub=1.0, integer=True, obj=100.0)
        p = model.add_var("p", ub=50.0, obj=10.0)
        model.add_constraint({p: 1.0, u: -50.0}, "<=", 0.0, name="pmax")
        model.add_constraint({p: 1.0}, "=", 30.0, name="demand")
        return model

    def test_demand_dual_is_marginal_cost(self):
        model = self.commitment_model()
        incumbent = solve_milp(model, rel_gap=0.0)
        priced = fixed_integer_duals(model, incumbent)
        assert priced.is_optimal
        assert priced.duals[model.row_index("demand")] == pytest.approx(10.0)
        assert priced.objective == pytest.approx(400.0)

    def test_rejects_fractional_incumbent(self):
        model = self.commitment_model()
        with pytest.raises(ModelValidationException):
            fixed_integer_duals(model, Solution(status=OPTIMAL, x=np.array([0.5, 30.0])))

    def test_rejects_wrong_length(self):
        with pytest.raises(ModelValidationException):
            fixed_integer_duals(self.commitment_model(), Solution(status=OPTIMAL, x=np.zeros(5)))


class TestSolverBookkeeping:
    """Test solve counters and LP dumps"""

    def test_solve_counts(self):
        reset_solve_counts()
        solve_lp(production_model())
        solve_milp(knapsack([1.0, 2.0], [1.0, 1.0], 1.0))
        counts = solve_counts()
        assert counts["lp"] == 1
        assert counts["milp"] == 1

    def test_dump_lp_dir(self, tmp_path):
        solve_lp(production_model(), SolverSettings(dump_lp_dir=str(tmp_path)))
        path = tmp_path / "production.lp"
        assert path.exists()
        assert "Subject To" in path.read_text()
        assert os.path.getsize(path) > 0


def vertex_optimum(model: LinearModel) -> float:
    """Best objective over every basic solution of [A; -I; I] x <= [b; -lb; ub]"""
    arrays = model.to_arrays()
    A = arrays.A.toarray()
    n = A.shape[1]
    G = np.vstack([A, -np.eye(n), np.eye(n)])
    h = np.r_[arrays.b, -arrays.lb, arrays.ub]
    combos = np.array(list(itertools.combinations(range(len(G)), n)))
    systems, rhs = G[combos], h[combos]
    keep = np.abs(np.linalg.det(systems)) > 1e-9
    points = np.linalg.solve(systems[keep], rhs[keep][..., None])[..., 0]
    feasible = np.all(points @ G.T <= h + 1e-9, axis=1)
    return float((points[feasible] @ arrays.c).max())


class TestLpOptimality:
    """Test LP solutions against vertex enumeration and the optimality conditions"""

    @pytest.mark.parametrize("backend", LP_BACKENDS)
    def test_random_models_match_vertex_enumeration(self, backend):
        rng = np.random.default_rng(1234)
        for _ in range(200):
            model = random_lp(rng, n=int(rng.integers(2, 6)), m=int(rng.integers(2, 6)))
            solution = solve_lp(model, SolverSettings(backend=backend))
            assert solution.is_optimal
            assert solution.objective == pytest.approx(vertex_optimum(model), abs=1e-6)

    @pytest.mark.parametrize("backend", LP_BACKENDS)
    def test_duals_satisfy_complementary_slackness(self, backend):
        rng = np.random.default_rng(99)
        for _ in range(200):
            model = random_lp(rng, n=int(rng.integers(2, 6)), m=int(rng.integers(2, 6)))
            arrays = model.to_arrays()
            solution = solve_lp(model, SolverSettings(backend=backend))
            x, y = solution.x, solution.duals
            slack = arrays.b - arrays.A @ x
            reduced = arrays.c - arrays.A.T @ y
            interior = (x > arrays.lb + 1e-6) & (x < arrays.ub - 1e-6)

            assert np.all(y >= -1e-7)
            np.testing.assert_allclose(y * slack, 0.0, atol=1e-6)
            np.testing.assert_allclose(reduced[interior], 0.0, atol=1e-6)
            assert np.all(reduced[x <= arrays.lb + 1e-6] <= 1e-6)
            assert np.all(reduced[x >= arrays.ub - 1e-6] >= -1e-6)
            assert solution.dual_objective == pytest.approx(solution.objective, abs=1e-6)
            assert solution.primal_residual <= PRIMAL_FEASIBILITY_TOLERANCE * max(1.0, np.abs(arrays.b).max())

    def test_residual_warning_on_violating_point(self, mocker):
        warning = mocker.patch("services.optimizer.logger.warning")
        mocker.patch("services.optimizer.primal_residual", return_value=1.0)
        solution = solve_lp(production_model(), SolverSettings(backend="simplex"))
        assert solution.primal_residual == 1.0
        warning.assert_called_once()


def random_commitment_case(rng: np.random.Generator, hours: int = 6) -> NetworkCase:
    """One bus, three units with pmin, no-load and start-up costs; ramps and min up/down never bind"""
    units = []
    for g in range(3):
        pmax = float(rng.uniform(50.0, 150.0))
        pmin = float(rng.uniform(0.0, 0.3)) * pmax
        on = bool(rng.integers(0, 2))
        units.append(ThermalUnit(
            f"g{g}", "a", pmin, pmax, pmax, 1, 1, ((pmax, float(rng.uniform(10.0, 60.0))),),
            startup_cost=float(rng.uniform(0.0, 500.0)), no_load_cost=float(rng.uniform(0.0, 200.0)),
            initial_status_hr=24 if on else -24, initial_power_mw=pmin if on else 0.0,
        ))
    return NetworkCase(
        name="uc_random",
        buses=[Bus("a", 1.0)],
        lines=[],
        thermal_units=units,
        renewables=[],
        ies=IesSite("a", WindAsset(10.0, np.zeros(hours))),
        load_mw=rng.uniform(20.0, 320.0, hours),
        reference_bus="a",
    )


def commitment_optimum(case: NetworkCase) -> float:
    """Dynamic program over the eight on/off states with merit-order dispatch inside each hour"""
    units = case.thermal_units
    states = np.array(list(itertools.product([0, 1], repeat=len(units))), dtype=float)
    pmin = np.array([unit.pmin_mw for unit in units])
    pmax = np.array([unit.pmax_mw for unit in units])
    cost = np.array([unit.segment_costs[0] for unit in units])
    no_load = np.array([unit.no_load_cost for unit in units])
    startup = np.array([unit.startup_cost for unit in units])
    penalty = case.shed_penalty

    order = np.argsort(cost)
    room_caps = (states * (pmax - pmin))[:, order]
    before = np.cumsum(room_caps, axis=1) - room_caps
    floor = states @ pmin
    room = case.load_mw[:, None] - floor[None, :]
    extra = np.clip(room[..., None] - before[None], 0.0, room_caps[None])
    shed = np.maximum(room - room_caps.sum(axis=1)[None, :], 0.0)
    spill = np.maximum(-room, 0.0)
    hourly = (states @ (cost * pmin + no_load))[None, :] + extra @ cost[order] + penalty * (shed + spill)

    starts = states[None, :, :] * (1.0 - states[:, None, :])
    transition = starts @ startup
    initial = np.array([1.0 if unit.initially_on else 0.0 for unit in units])
    first = int(np.flatnonzero(np.all(states == initial, axis=1))[0])

    value = hourly[0] + transition[first]
    for t in range(1, len(case.load_mw)):
        value = (value[:, None] + transition).min(axis=0) + hourly[t]
    return float(value.min())


class TestCommitmentOptimality:
    """Test the day-ahead MILP against a dynamic program over commitment states"""

    @pytest.mark.slow
    def test_random_cases_match_dynamic_program(self):
        rng = np.random.default_rng(2024)
        for _ in range(20):
            case = random_commitment_case(rng)
            commitment = day_ahead_uc(case, 0, settings=SimulationSettings(mip_gap=0.0))
            expected = commitment_optimum(case)
            assert commitment.cost == pytest.approx(expected, rel=1e-6, abs=1e-4)
