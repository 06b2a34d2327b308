"""
Tests for case and environment validation
"""

from dataclasses import replace

import pytest

from exceptions import CaseValidationException
from services.market import Bus, Line
from utils.validators import CaseValidator, ConfigValidator, validate_case


class TestCaseValidator:
    """Test structural case checks"""

    def test_valid_case(self, two_bus_case):
        report = CaseValidator.validate_case(two_bus_case)
        assert report["valid"]
        assert report["units"] == 2
        assert report["horizon"] == 48

    def test_disconnected_bus(self, two_bus_case):
        two_bus_case.buses.append(Bus("island", 0.0))
        issues = CaseValidator.check_topology(two_bus_case)
        assert issues == ["bus 'island' is disconnected from reference bus 'a'"]

    def test_line_to_unknown_bus(self, two_bus_case):
        two_bus_case.lines.append(Line("bx", "b", "x", 5.0, 10.0))
        report = CaseValidator.validate_case(two_bus_case)
        assert not report["valid"]
        assert any("unknown bus 'x'" in issue for issue in report["issues"])

    def test_bad_line_parameters(self, two_bus_case):
        two_bus_case.lines[0] = Line("ab", "a", "b", 0.0, -1.0)
        issues = CaseValidator.check_topology(two_bus_case)
        assert len(issues) == 2

    def test_non_convex_segments(self, two_bus_case):
        unit = two_bus_case.thermal_units[0]
        two_bus_case.thermal_units[0] = replace(unit, segments=((100.0, 30.0), (100.0, 20.0)))
        issues = CaseValidator.check_units(two_bus_case)
        assert any("non-convex" in issue for issue in issues)

    def test_segments_must_cover_pmax(self, two_bus_case):
        unit = two_bus_case.thermal_units[0]
        two_bus_case.thermal_units[0] = replace(unit, segments=((150.0, 10.0),))
        assert any("segments sum" in issue for issue in CaseValidator.check_units(two_bus_case))

    def test_off_unit_with_power(self, two_bus_case):
        unit = two_bus_case.thermal_units[0]
        two_bus_case.thermal_units[0] = replace(unit, initial_status_hr=-3, initial_power_mw=5.0)
        assert any("is off" in issue for issue in CaseValidator.check_units(two_bus_case))

    def test_load_shares_must_sum_to_one(self, two_bus_case):
        two_bus_case.buses[0] = Bus("a", 0.5)
        assert CaseValidator.check_series(two_bus_case) == ["bus load shares must be non-negative and sum to 1"]

    def test_short_historical_series(self, two_bus_case):
        two_bus_case.historical_lmp = two_bus_case.historical_lmp[:10]
        assert any("historical LMP" in issue for issue in CaseValidator.check_series(two_bus_case))

    def test_validate_case_raises_with_issues(self, two_bus_case, mocker):
        mocker.patch("utils.validators.logger.warning")
        two_bus_case.buses[0] = Bus("a", 0.5)
        with pytest.raises(CaseValidationException) as exc_info:
            validate_case(two_bus_case)
        assert exc_info.value.issues == ["bus load shares must be non-negative and sum to 1"]


class TestConfigValidator:
    """Test environment checks"""

    def test_defaults_are_valid(self):
        result = ConfigValidator.validate_environment()
        assert result["valid"]
        assert result["config"]["IES_JOBS"] == 1

    @pytest.mark.parametrize("name,value", [("IES_JOBS", "zero"), ("IES_JOBS", "0"), ("LOG_LEVEL", "LOUD")])
    def test_invalid_values(self, monkeypatch, name, value):
        monkeypatch.setenv(name, value)
        result = ConfigValidator.validate_environment()
        assert not result["valid"]
        assert len(result["invalid_vars"]) == 1
