"""
Tests for the wind-battery device model
SoC dynamics, operating envelope, trajectory replay, energy accounting and costs
"""

import numpy as np
import pytest

from core import (
    BatteryDesign,
    HourlyOperation,
    IesState,
    Schedule,
    WindAsset,
    capex,
    degraded_capacity,
    energy_ledger,
    feasible_envelope,
    om_cost,
    soc_step,
    validate_trajectory,
)
from exceptions import InfeasibleTransitionException, SeriesLengthException, ValidationException


class TestWindAsset:
    """Test wind farm series handling"""

    def test_available_power(self):
        """Available power is capacity factor times rating"""
        wind = WindAsset(200.0, [0.0, 0.5, 1.0])
        assert wind.available(1) == pytest.approx(100.0)
        np.testing.assert_allclose(wind.available_series(), [0.0, 100.0, 200.0])

    def test_rejects_capacity_factor_above_one(self):
        with pytest.raises(ValidationException):
            WindAsset(100.0, [0.2, 1.2])

    def test_rejects_non_positive_rating(self):
        with pytest.raises(ValidationException):
            WindAsset(0.0, [0.5])

    def test_series_request_past_end(self):
        """Requests beyond the series raise a length error naming both sizes"""
        wind = WindAsset(100.0, np.ones(5))
        with pytest.raises(SeriesLengthException) as exc_info:
            wind.available_series(3, 4)
        assert exc_info.value.expected == 7
        assert exc_info.value.actual == 5

    def test_window_truncates_at_end(self):
        wind = WindAsset(100.0, np.linspace(0.0, 1.0, 6))
        assert wind.window(4, 4).size == 2


class TestBatteryDesign:
    """Test battery sizing helpers"""

    def test_from_ratio(self, flat_wind):
        design = BatteryDesign.from_ratio(flat_wind, 0.5, 4.0)
        assert design.max_power_mw == pytest.approx(50.0)
        assert design.max_soc == pytest.approx(200.0)
        assert design.label(flat_wind) == "r0.50_h4"

    def test_none_is_empty(self):
        assert BatteryDesign.none().is_empty
        assert BatteryDesign.none().max_soc == 0.0

    @pytest.mark.parametrize("kwargs", [
        {"max_power_mw": -1.0, "duration_hr": 2.0},
        {"max_power_mw": 10.0, "duration_hr": -2.0},
        {"max_power_mw": 10.0, "duration_hr": 2.0, "charge_eff": 0.0},
        {"max_power_mw": 10.0, "duration_hr": 2.0, "discharge_eff": 1.1},
        {"max_power_mw": 10.0, "duration_hr": 2.0, "degradation_coeff": -1e-4},
    ])
    def test_invalid_designs(self, kwargs):
        with pytest.raises(ValidationException):
            BatteryDesign(**kwargs)

    def test_dict_round_trip(self, lossy_design):
        assert BatteryDesign.from_dict(lossy_design.to_dict()) == lossy_design


class TestHourlyOperation:
    """Test flow identities of one hour"""

    def test_from_flows_fills_totals(self):
        op = HourlyOperation.from_flows(charge=4.0, discharge=0.0, direct_sale=6.0)
        assert op.wind_used == pytest.approx(10.0)
        assert op.total_sale == pytest.approx(6.0)

    def test_inconsistent_wind_used_rejected(self):
        with pytest.raises(ValidationException):
            HourlyOperation(wind_used=5.0, charge=1.0, discharge=0.0, direct_sale=1.0, total_sale=1.0)

    def test_negative_flow_rejected(self):
        with pytest.raises(ValidationException):
            HourlyOperation.from_flows(charge=-1.0, discharge=0.0, direct_sale=0.0)

    def test_solver_noise_clipped(self):
        op = HourlyOperation.from_flows(charge=-1e-9, discharge=2.0, direct_sale=0.0)
        assert op.charge == 0.0

    def test_simultaneous_flag(self):
        assert HourlyOperation.from_flows(1.0, 1.0, 0.0).is_simultaneous
        assert not HourlyOperation.from_flows(1.0, 0.0, 0.0).is_simultaneous


class TestSocStep:
    """Test one-step battery dynamics"""

    def test_lossy_charge(self, lossy_design):
        """Charging stores eta_c * P and adds half the flow to throughput"""
        state = soc_step(IesState(), HourlyOperation.from_flows(10.0, 0.0, 0.0), lossy_design)
        assert state.soc == pytest.approx(9.5)
        assert state.throughput == pytest.approx(5.0)

    def test_lossy_discharge(self, lossy_design):
        state = soc_step(IesState(soc=20.0), HourlyOperation.from_flows(0.0, 9.5, 0.0), lossy_design)
        assert state.soc == pytest.approx(10.0)
        assert state.throughput == pytest.approx(4.75)

    def test_half_hour_step(self, ideal_design):
        state = soc_step(IesState(), HourlyOperation.from_flows(10.0, 0.0, 0.0), ideal_design, dt=0.5)
        assert state.soc == pytest.approx(5.0)

    def test_discharge_below_empty_raises(self, ideal_design):
        with pytest.raises(InfeasibleTransitionException) as exc_info:
            soc_step(IesState(soc=2.0), HourlyOperation.from_flows(0.0, 5.0, 0.0), ideal_design, hour=3)
        assert exc_info.value.constraint == "soc lower bound"
        assert exc_info.value.hour == 3
        assert exc_info.value.residual == pytest.approx(3.0)

    def test_charge_above_rating_raises(self, ideal_design):
        with pytest.raises(InfeasibleTransitionException) as exc_info:
            soc_step(IesState(), HourlyOperation.from_flows(12.0, 0.0, 0.0), ideal_design)
        assert exc_info.value.constraint == "charge power limit"

    def test_overfill_raises(self, ideal_design):
        """20 MWh battery at 15 MWh cannot take 10 MWh more"""
        with pytest.raises(InfeasibleTransitionException) as exc_info:
            soc_step(IesState(soc=15.0), HourlyOperation.from_flows(10.0, 0.0, 0.0), ideal_design)
        assert exc_info.value.constraint == "soc upper bound"
        assert exc_info.value.residual == pytest.approx(5.0)

    def test_degradation_shrinks_capacity(self):
        """Capacity is S_max - delta * E evaluated at the new throughput"""
        design = BatteryDesign(10.0, 2.0, charge_eff=1.0, discharge_eff=1.0, degradation_coeff=0.1)
        assert degraded_capacity(design, 100.0) == pytest.approx(10.0)
        with pytest.raises(InfeasibleTransitionException):
            soc_step(IesState(soc=0.0, throughput=100.0), HourlyOperation.from_flows(10.0, 0.0, 0.0), design)

    def test_idle_keeps_state(self, lossy_design):
        state = IesState(soc=12.0, throughput=30.0)
        assert soc_step(state, HourlyOperation.idle(), lossy_design) == state

    def test_round_trip_efficiency(self, lossy_design):
        """10 MWh charged comes back as 9.025 MWh"""
        assert lossy_design.round_trip_efficiency == pytest.approx(0.9025, abs=1e-12)
        charged = soc_step(IesState(), HourlyOperation.from_flows(10.0, 0.0, 0.0), lossy_design)
        out = charged.soc * lossy_design.discharge_eff
        emptied = soc_step(charged, HourlyOperation.from_flows(0.0, out, 0.0), lossy_design)
        assert out == pytest.approx(9.025, abs=1e-12)
        assert emptied.soc == pytest.approx(0.0, abs=1e-12)

    def test_half_capacity_after_full_throughput(self):
        """delta = 1e-4 and E = 5e6 MWh take 500 MWh off a 1000 MWh battery"""
        design = BatteryDesign(250.0, 4.0)
        assert design.max_soc == pytest.approx(1000.0)
        assert degraded_capacity(design, 5_000_000.0) == pytest.approx(500.0, abs=1e-6)

    def test_five_thousand_cycles_halve_capacity(self):
        """Each cycle moves the nameplate energy in and out, in two half-depth swings"""
        design = BatteryDesign(500.0, 2.0, charge_eff=1.0, discharge_eff=1.0, degradation_coeff=1e-4)
        swing = 0.5 * design.max_soc
        charge = HourlyOperation.from_flows(swing, 0.0, 0.0)
        discharge = HourlyOperation.from_flows(0.0, swing, 0.0)
        state = IesState()
        for _ in range(5000):
            for op in (charge, discharge, charge, discharge):
                state = soc_step(state, op, design)
        assert state.throughput == pytest.approx(5000 * design.max_soc)
        assert degraded_capacity(design, state.throughput) == pytest.approx(0.5 * design.max_soc, abs=1e-6)


class TestFeasibleEnvelope:
    """Test the per-hour operating envelope"""

    def test_bounds(self, flat_wind, ideal_design):
        envelope = feasible_envelope(IesState(soc=5.0), 0.5, flat_wind, ideal_design)
        assert envelope.available_wind == pytest.approx(50.0)
        assert envelope.max_charge == pytest.approx(10.0)
        assert envelope.max_discharge == pytest.approx(5.0)
        assert envelope.p_max == pytest.approx(55.0)

    def test_charge_limited_by_headroom(self, flat_wind, ideal_design):
        envelope = feasible_envelope(IesState(soc=16.0), 1.0, flat_wind, ideal_design)
        assert envelope.max_charge == pytest.approx(4.0)

    def test_empty_battery_delivers_only_wind(self, flat_wind):
        envelope = feasible_envelope(IesState(), 0.3, flat_wind, BatteryDesign.none())
        assert envelope.max_charge == 0.0
        assert envelope.p_max == pytest.approx(30.0)

    def test_every_vertex_is_feasible(self, flat_wind, lossy_design):
        """Corners of the envelope pass soc_step from random reachable states"""
        rng = np.random.default_rng(11)
        for _ in range(50):
            throughput = rng.uniform(0.0, 1000.0)
            capacity = degraded_capacity(lossy_design, throughput)
            state = IesState(soc=rng.uniform(0.0, capacity), throughput=throughput)
            envelope = feasible_envelope(state, rng.uniform(0.0, 1.0), flat_wind, lossy_design)
            for op in envelope.vertices():
                assert envelope.contains(op)

    def test_excess_wind_not_contained(self, flat_wind, ideal_design):
        envelope = feasible_envelope(IesState(), 0.5, flat_wind, ideal_design)
        assert not envelope.contains(HourlyOperation.from_flows(0.0, 0.0, 60.0))


class TestValidateTrajectory:
    """Test schedule replay and violation reporting"""

    def test_valid_periodic_schedule(self, flat_wind, ideal_design):
        ops = [HourlyOperation.from_flows(10.0, 0.0, 90.0), HourlyOperation.from_flows(0.0, 10.0, 100.0)]
        report = validate_trajectory(ops, IesState(), ideal_design, flat_wind, periodic=True)
        assert report.valid
        assert report.hours_checked == 2
        assert report.final_state.soc == pytest.approx(0.0)

    def test_first_violation_hour(self, flat_wind, ideal_design):
        ops = [HourlyOperation.idle(), HourlyOperation.from_flows(0.0, 5.0, 0.0), HourlyOperation.idle()]
        report = validate_trajectory(ops, IesState(), ideal_design, flat_wind)
        assert not report.valid
        assert report.first_violation.hour == 1
        assert report.first_violation.constraint == "soc lower bound"
        assert report.hours_checked == 1

    def test_wind_availability_violation(self, flat_wind, ideal_design):
        ops = [HourlyOperation.from_flows(0.0, 0.0, 101.0)]
        report = validate_trajectory(ops, IesState(), ideal_design, flat_wind)
        assert report.first_violation.constraint == "wind availability"
        assert report.first_violation.residual == pytest.approx(1.0)

    def test_periodic_gap(self, flat_wind, ideal_design):
        ops = [HourlyOperation.from_flows(10.0, 0.0, 0.0)]
        report = validate_trajectory(ops, IesState(), ideal_design, flat_wind, periodic=True)
        assert report.first_violation.constraint == "periodic soc"
        assert report.first_violation.residual == pytest.approx(10.0)

    def test_simultaneous_hours_reported(self, flat_wind, ideal_design):
        ops = [HourlyOperation.from_flows(10.0, 0.0, 0.0), HourlyOperation.from_flows(5.0, 5.0, 0.0)]
        report = validate_trajectory(ops, IesState(), ideal_design, flat_wind)
        assert report.valid
        assert report.simultaneous_hours == [1]

    def test_schedule_longer_than_wind(self, flat_wind, ideal_design):
        with pytest.raises(SeriesLengthException):
            validate_trajectory([HourlyOperation.idle()] * 25, IesState(), ideal_design, flat_wind)

    def test_random_envelope_schedules_validate(self, lossy_design, feasible_ops):
        wind = WindAsset(100.0, np.random.default_rng(3).uniform(0.0, 1.0, 48))
        ops = feasible_ops(wind, lossy_design, IesState(), 48)
        assert validate_trajectory(ops, IesState(), lossy_design, wind).valid


class TestScheduleAndLedger:
    """Test the schedule container and energy conservation"""

    def test_from_operations_traces_state(self, flat_wind, lossy_design):
        ops = [HourlyOperation.from_flows(10.0, 0.0, 0.0)] * 3
        schedule = Schedule.from_operations(ops, IesState(), lossy_design)
        np.testing.assert_allclose(schedule.soc, [9.5, 19.0, 28.5])
        np.testing.assert_allclose(schedule.throughput, [5.0, 10.0, 15.0])
        assert schedule.final_state.soc == pytest.approx(28.5)

    def test_empty_schedule_keeps_initial_state(self):
        initial = IesState(soc=3.0)
        assert Schedule.empty(initial).final_state == initial

    def test_mismatched_columns_rejected(self):
        with pytest.raises(SeriesLengthException):
            Schedule(np.zeros(2), np.zeros(3), np.zeros(2), np.zeros(2), np.zeros(2))

    def test_energy_is_conserved(self, lossy_design, feasible_ops):
        """available = sold + curtailed + losses + delta SoC on any feasible schedule"""
        wind = WindAsset(100.0, np.random.default_rng(5).uniform(0.0, 1.0, 72))
        initial = IesState(soc=10.0)
        ops = feasible_ops(wind, lossy_design, initial, 72)
        schedule = Schedule.from_operations(ops, initial, lossy_design)
        ledger = energy_ledger(schedule, wind.available_series(0, 72), lossy_design)
        assert abs(ledger.residual) < 1e-6
        assert ledger.losses > 0.0

    def test_ledger_length_mismatch(self, lossy_design):
        with pytest.raises(SeriesLengthException):
            energy_ledger(Schedule.empty(), np.ones(3), lossy_design)


class TestCosts:
    """Test O&M and capital cost formulas"""

    def test_om_cost(self, lossy_design):
        """1000 * (42 k$/MW-yr * 100 MW + 19 k$/MWh-yr * 40 MWh)"""
        wind = WindAsset(100.0, np.ones(1))
        assert om_cost(wind, lossy_design) == pytest.approx(4_960_000.0)

    def test_wind_only_om_cost(self):
        """847 MW at 42 k$/MW-yr is 35.574 M$/yr"""
        wind = WindAsset(847.0, np.ones(1))
        assert om_cost(wind, BatteryDesign.none()) == pytest.approx(35_574_000.0)

    def test_capex(self, lossy_design):
        """0.8 k$/kW on 10 MW"""
        assert capex(lossy_design) == pytest.approx(8_000_000.0)

    def test_empty_battery_has_no_capex(self):
        assert capex(BatteryDesign.none()) == 0.0
