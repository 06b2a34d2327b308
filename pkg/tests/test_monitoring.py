"""
Tests for run monitoring
"""

from datetime import datetime

from services.monitoring import REPORTED_PACKAGES, RunMetrics, RunMonitor, system_info
from services.optimizer import LinearModel, solve_lp


def tiny_lp() -> LinearModel:
    model = LinearModel("tiny", sense="max")
    x = model.add_var("x", ub=2.0, obj=1.0)
    model.add_constraint({x: 1.0}, "<=", 1.0)
    return model


class TestRunMonitor:
    """Test timing, memory and solve counting"""

    def test_counts_solves_inside_block(self):
        solve_lp(tiny_lp())
        with RunMonitor("unit", case="tiny") as monitor:
            solve_lp(tiny_lp())
            solve_lp(tiny_lp())
        assert monitor.metrics.lp_solves == 2
        assert monitor.metrics.milp_solves == 0
        assert monitor.metrics.solves == 2

    def test_resources_recorded(self):
        with RunMonitor("unit") as monitor:
            monitor.sample()
        assert monitor.metrics.wall_time_s >= 0.0
        assert monitor.metrics.peak_rss_bytes > 0

    def test_exceptions_propagate_with_metrics(self, mocker):
        performance = mocker.patch("services.monitoring.logger.log_performance")
        monitor = RunMonitor("failing")
        try:
            with monitor:
                raise RuntimeError("boom")
        except RuntimeError:
            pass
        assert performance.call_args.kwargs["failed"] is True

    def test_metrics_dict(self):
        metrics = RunMetrics("op", datetime(2024, 1, 1), peak_rss_bytes=3 * 1024 * 1024, extra={"mode": "TV_bidding"})
        data = metrics.to_dict()
        assert data["peak_rss_mb"] == 3.0
        assert data["started"] == "2024-01-01T00:00:00"
        assert data["mode"] == "TV_bidding"


class TestSystemInfo:
    """Test static host information"""

    def test_reports_packages(self):
        info = system_info()
        assert info["cpu_count"] >= 1
        assert set(info["packages"]) == set(REPORTED_PACKAGES)
        assert info["packages"]["numpy"] is not None
