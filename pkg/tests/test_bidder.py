"""
Tests for the self-scheduling bidder
"""

import numpy as np
import pytest

from core import BatteryDesign, IesState, WindAsset
from exceptions import BidMonotonicityException, InsufficientHistoryException, ValidationException
from services.bidder import (
    Backcaster,
    BidCurve,
    BidPlan,
    ScenarioSet,
    backcast,
    bid_curves_to_frame,
    solve_bidding,
    to_bid_curve,
    track_dispatch,
)
from services.price_taker import FinanceParams, PriceSeries, optimize


def plan_with_offers(offers, start_hour=7) -> BidPlan:
    """One-hour plan whose offered power per scenario is all direct sale"""
    sale = np.asarray(offers, dtype=float).reshape(-1, 1)
    zeros = np.zeros_like(sale)
    return BidPlan(zeros, zeros, sale, zeros, zeros, 0.0, 0.0, IesState(), start_hour)


class TestBackcast:
    """Test scenario generation from price history"""

    def test_rows_repeat_previous_days(self):
        history = np.arange(72.0)
        scenarios = backcast(history, 48, window=4, n=2)
        assert scenarios.n_scenarios == 2
        np.testing.assert_allclose(scenarios.prices[0], [24.0, 25.0, 26.0, 27.0])
        np.testing.assert_allclose(scenarios.prices[1], [0.0, 1.0, 2.0, 3.0])
        np.testing.assert_allclose(scenarios.weights, [0.5, 0.5])

    def test_accepts_price_series(self):
        scenarios = backcast(PriceSeries(np.arange(48.0)), 24, window=2, n=1)
        np.testing.assert_allclose(scenarios.prices, [[0.0, 1.0]])

    def test_not_enough_days(self):
        with pytest.raises(InsufficientHistoryException) as exc_info:
            backcast(np.arange(72.0), 30, n=2)
        assert exc_info.value.required == 48

    def test_history_ends_too_early(self):
        with pytest.raises(InsufficientHistoryException):
            backcast(np.arange(30.0), 60, window=24, n=1)

    @pytest.mark.parametrize("window", [0, 25])
    def test_window_limits(self, window):
        with pytest.raises(ValidationException):
            backcast(np.arange(72.0), 48, window=window, n=1)

    def test_gaps_are_insufficient(self):
        history = np.arange(48.0)
        history[25] = np.nan
        with pytest.raises(InsufficientHistoryException):
            backcast(history, 48, window=4, n=1)


class TestBackcaster:
    """Test the rolling history used during simulation"""

    def test_falls_back_to_fewer_days(self):
        backcaster = Backcaster(np.arange(30.0), n_scenarios=3, window=4)
        scenarios = backcaster.scenarios(30)
        assert scenarios.n_scenarios == 1
        np.testing.assert_allclose(scenarios.prices[0], [6.0, 7.0, 8.0, 9.0])

    def test_flat_fallback_warns_once(self, mocker):
        warning = mocker.patch("services.bidder.logger.warning")
        backcaster = Backcaster(window=3, fallback_price=20.0)
        first = backcaster.scenarios(0)
        backcaster.scenarios(1)
        np.testing.assert_allclose(first.prices, [[20.0, 20.0, 20.0]])
        warning.assert_called_once()

    def test_record_extends_history(self):
        backcaster = Backcaster()
        backcaster.record(2, 5.0)
        history = backcaster.history
        assert history.size == 3
        assert np.isnan(history[0])
        assert history[2] == 5.0

    def test_recorded_prices_feed_scenarios(self):
        backcaster = Backcaster(n_scenarios=1, window=2)
        for hour in range(24):
            backcaster.record(hour, float(hour))
        np.testing.assert_allclose(backcaster.scenarios(24).prices, [[0.0, 1.0]])


class TestSolveBidding:
    """Test the stochastic self-schedule"""

    def test_single_scenario_matches_price_taker(self, lossy_design):
        """With one scenario and no terminal value the bidder is the price taker on the window"""
        rng = np.random.default_rng(3)
        wind = WindAsset(100.0, rng.uniform(0.0, 1.0, 24))
        prices = rng.uniform(5.0, 60.0, 4)
        state = IesState(soc=10.0)

        plan = solve_bidding(state, wind.capacity_factors[:4], ScenarioSet(prices[None, :], 0), lossy_design, wind)
        pt = optimize(PriceSeries(prices), wind, finance=FinanceParams(incentive=0.0), fixed_design=lossy_design,
                      initial_state=state, periodic=False)
        assert plan.expected_revenue == pytest.approx(pt.market_revenue, rel=1e-6)

    def test_higher_price_scenarios_offer_more(self, flat_wind, lossy_design):
        scenarios = ScenarioSet(np.array([[10.0] * 4, [50.0] * 4]), 0)
        plan = solve_bidding(IesState(soc=20.0), np.full(4, 0.3), scenarios, lossy_design, flat_wind)
        assert np.all(plan.offered[1] >= plan.offered[0] - 1e-7)
        assert plan.window == 4

    def test_window_shorter_than_scenarios(self, flat_wind, lossy_design):
        scenarios = ScenarioSet(np.full((2, 4), 30.0), 0)
        plan = solve_bidding(IesState(), np.full(2, 0.5), scenarios, lossy_design, flat_wind)
        assert plan.charge.shape == (2, 2)

    def test_empty_window_rejected(self, flat_wind, lossy_design):
        with pytest.raises(ValidationException):
            solve_bidding(IesState(), [], ScenarioSet(np.ones((1, 4)), 0), lossy_design, flat_wind)

    def test_plan_operations_respect_storage(self, flat_wind, lossy_design):
        scenarios = ScenarioSet(np.array([[0.0, 0.0, 80.0, 80.0]]), 0)
        plan = solve_bidding(IesState(), np.ones(4), scenarios, lossy_design, flat_wind)
        assert plan.soc.max() <= lossy_design.max_soc + 1e-6
        assert plan.operation(0, 3).discharge > 0.0


class TestBidCurve:
    """Test stepwise offers"""

    def curve(self) -> BidCurve:
        return BidCurve(5, np.array([0.0, 10.0, 30.0]), np.array([2.0, 5.0, 9.0]))

    def test_offered_at(self):
        curve = self.curve()
        assert curve.offered_at(-1.0) == 0.0
        assert curve.offered_at(5.0) == 2.0
        assert curve.offered_at(10.0) == 5.0
        assert curve.offered_at(100.0) == 9.0
        assert curve.max_power == 9.0

    def test_segments_are_increments(self):
        assert self.curve().segments() == [(0.0, 2.0), (10.0, 3.0), (30.0, 4.0)]

    def test_zero_cost_clips_negative_power(self):
        curve = BidCurve.zero_cost(3, -1.0)
        assert curve.max_power == 0.0
        assert curve.segments() == []

    def test_capped(self):
        np.testing.assert_allclose(self.curve().capped(4.0).powers, [2.0, 4.0, 4.0])

    def test_prices_must_increase(self):
        with pytest.raises(ValidationException):
            BidCurve(0, np.array([10.0, 10.0]), np.array([1.0, 2.0]))

    def test_powers_must_not_decrease(self):
        with pytest.raises(ValidationException):
            BidCurve(0, np.array([0.0, 10.0]), np.array([5.0, 2.0]))

    def test_frame(self):
        frame = bid_curves_to_frame([self.curve(), BidCurve.zero_cost(6, 1.0)])
        assert list(frame.columns) == ["hour", "price", "power_mw"]
        assert len(frame) == 4


class TestToBidCurve:
    """Test turning scenario offers into a curve"""

    def test_equal_prices_merge(self):
        scenarios = ScenarioSet(np.array([[10.0], [10.0], [30.0]]), 7)
        curve = to_bid_curve(plan_with_offers([2.0, 4.0, 6.0]), scenarios)
        np.testing.assert_allclose(curve.prices, [0.0, 10.0, 30.0])
        np.testing.assert_allclose(curve.powers, [0.0, 4.0, 6.0])
        assert curve.hour == 7

    def test_negative_price_breakpoint_kept(self):
        scenarios = ScenarioSet(np.array([[-5.0], [20.0]]), 7)
        curve = to_bid_curve(plan_with_offers([3.0, 8.0]), scenarios)
        np.testing.assert_allclose(curve.prices, [-5.0, 20.0])
        np.testing.assert_allclose(curve.powers, [3.0, 8.0])
        assert curve.offered_at(-1.0) == pytest.approx(3.0)
        assert curve.offered_at(-6.0) == 0.0
        assert curve.segments() == [(-5.0, 3.0), (20.0, 5.0)]

    def test_zero_price_scenario_replaces_anchor(self):
        scenarios = ScenarioSet(np.array([[0.0], [20.0]]), 7)
        curve = to_bid_curve(plan_with_offers([3.0, 8.0]), scenarios)
        np.testing.assert_allclose(curve.prices, [0.0, 20.0])
        np.testing.assert_allclose(curve.powers, [3.0, 8.0])

    def test_decreasing_offer_rejected(self):
        scenarios = ScenarioSet(np.array([[10.0], [50.0]]), 7)
        with pytest.raises(BidMonotonicityException) as exc_info:
            to_bid_curve(plan_with_offers([5.0, 2.0]), scenarios)
        assert exc_info.value.hour == 7
        assert exc_info.value.violation == pytest.approx(3.0)

    def test_solved_plan_gives_valid_curve(self, flat_wind, lossy_design):
        scenarios = ScenarioSet(np.array([[10.0] * 4, [25.0] * 4, [50.0] * 4]), 12)
        plan = solve_bidding(IesState(soc=20.0), np.full(4, 0.3), scenarios, lossy_design, flat_wind)
        curve = to_bid_curve(plan, scenarios)
        assert curve.prices[0] == 0.0
        assert np.all(np.diff(curve.prices) > 0)
        assert np.all(np.diff(curve.powers) >= 0)
        assert curve.hour == 12


class TestTrackDispatch:
    """Test following a cleared quantity in real time"""

    def test_wind_first_then_battery(self, flat_wind, ideal_design):
        tracked = track_dispatch(IesState(soc=10.0), 55.0, 0.5, ideal_design, flat_wind)
        assert tracked.operation.direct_sale == pytest.approx(50.0)
        assert tracked.operation.discharge == pytest.approx(5.0)
        assert tracked.operation.charge == 0.0
        assert tracked.shortfall == 0.0

    def test_shortfall_when_over_cleared(self, flat_wind, ideal_design):
        tracked = track_dispatch(IesState(soc=10.0), 80.0, 0.5, ideal_design, flat_wind)
        assert tracked.operation.total_sale == pytest.approx(60.0)
        assert tracked.shortfall == pytest.approx(20.0)

    def test_surplus_wind_charges(self, flat_wind, ideal_design):
        tracked = track_dispatch(IesState(soc=10.0), 20.0, 0.5, ideal_design, flat_wind)
        assert tracked.operation.direct_sale == pytest.approx(20.0)
        assert tracked.operation.charge == pytest.approx(10.0)
        assert not tracked.operation.is_simultaneous

    def test_negative_clearing_is_zero_target(self, flat_wind, ideal_design):
        tracked = track_dispatch(IesState(), -5.0, 0.5, ideal_design, flat_wind)
        assert tracked.target == 0.0
        assert tracked.operation.total_sale == 0.0


class TestBiddingOptimality:
    """Test price ordering of offers and optimality of the scenario LP"""

    def test_offers_rise_with_scenario_price(self, lossy_design):
        rng = np.random.default_rng(17)
        for _ in range(10):
            wind = WindAsset(100.0, rng.uniform(0.0, 1.0, 24))
            scenarios = ScenarioSet(rng.normal(30.0, 15.0, (4, 6)).round(), 0)
            state = IesState(soc=float(rng.uniform(0.0, lossy_design.max_soc)))
            plan = solve_bidding(state, wind.capacity_factors[:6], scenarios, lossy_design, wind,
                                 terminal_soc_value=25.0)
            offers, prices = plan.offered, scenarios.prices
            products = (offers[:, None, :] - offers[None, :, :]) * (prices[:, None, :] - prices[None, :, :])
            assert products.min() >= -1e-5

    def test_two_scenarios_match_grid_search(self, flat_wind):
        """95 MWh in store, no wind; holding is worth 20 $/MWh of SoC, prices are 10 or 30"""
        design = BatteryDesign(100.0, 0.95)
        scenarios = ScenarioSet(np.array([[10.0], [30.0]]), 0)
        plan = solve_bidding(IesState(soc=95.0), [0.0], scenarios, design, flat_wind, terminal_soc_value=20.0)

        step = 0.25
        grid = np.arange(0.0, 90.25 + step / 2, step)
        low, high = np.meshgrid(grid, grid, indexing="ij")
        value = 0.5 * (10.0 * low + 20.0 * (95.0 - low / 0.95)) + 0.5 * (30.0 * high + 20.0 * (95.0 - high / 0.95))
        best = value[low <= high].max()

        assert best - 1e-6 <= plan.objective <= best + step * 0.5 * (11.06 + 8.95)
        np.testing.assert_allclose(plan.offered[:, 0], [0.0, 90.25], atol=1e-6)

    def test_first_hour_offer_follows_price(self, flat_wind, lossy_design):
        """Stored energy is worth 30 $/MWh: kept at 10 $/MWh, sold at 50 $/MWh"""
        scenarios = ScenarioSet(np.array([[10.0], [50.0]]), 0)
        plan = solve_bidding(IesState(soc=20.0), [0.0], scenarios, lossy_design, flat_wind,
                             terminal_soc_value=30.0)
        np.testing.assert_allclose(plan.offered[:, 0], [0.0, 10.0], atol=1e-6)
        curve = to_bid_curve(plan, scenarios, 0)
        assert curve.offered_at(10.0) == pytest.approx(0.0, abs=1e-6)
        assert curve.offered_at(50.0) == pytest.approx(10.0)
