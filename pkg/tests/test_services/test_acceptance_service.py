import math

import pytest
from unittest.mock import MagicMock

from src.models.handover_model import RadialBird
from src.models.scenario_model import HeadPoint
from src.services.acceptance_service import (
    SUITES,
    AcceptanceSuite,
    envelope_oracle,
    hyperbola_area_oracle,
    union_area_oracle,
)
from src.utils.errors import ConfigError, NoEvents
from src.utils.geometry import half_ball_union_area, hyperbola_extra_area
from src.utils.rng import make_rng


class TestOracles:
    """Test the brute-force oracles the suite compares against"""

    def test_union_area(self):
        """Test two radius-2 half disks two apart"""
        area = union_area_oracle(0.0, 2.0, 2.0, 2.0, 1.0, 400_000, make_rng(1))
        assert area == pytest.approx(8.0 * math.pi / 3.0 + math.sqrt(3.0), rel=1e-2)
        assert area == pytest.approx(half_ball_union_area(0.0, 2.0, 2.0, 2.0), rel=1e-2)

    def test_hyperbola_area(self):
        """Test the swept region of a fast bird under a slow one"""
        slow = RadialBird(head=HeadPoint(t=0.0, h=1.0, cls=2), v=1.0)
        exact = hyperbola_extra_area(slow, 1.0, 2.0, 2.0)
        mc = hyperbola_area_oracle(slow, 1.0, 2.0, 2.0, 4_000_000, make_rng(2))
        assert exact > 0
        assert mc == pytest.approx(exact, rel=3e-2)

    def test_envelope_oracle(self, three_head_realization):
        """Test the grid oracle finds the three serving heads and their breakpoints"""
        serving, breaks = envelope_oracle(three_head_realization, 20_001)
        assert serving == [0, 1, 2]
        assert breaks == pytest.approx([0.0, 3.0], abs=1e-9)


class TestAcceptanceSuite:
    """Test AcceptanceSuite class"""

    def test_unknown_suite(self):
        """Test suite names are checked"""
        with pytest.raises(ConfigError):
            AcceptanceSuite(MagicMock(), "exhaustive")

    def test_overrides(self):
        """Test overrides replace suite sizes"""
        suite = AcceptanceSuite(MagicMock(), "quick", overrides={"replicas": 2})
        assert suite.p["replicas"] == 2
        assert suite.p["window"] == SUITES["quick"]["window"]

    def test_full_suite_is_larger(self):
        """Test the full suite never samples less than the quick one"""
        for key in ("replicas", "mc_samples", "area_points", "chain_steps", "envelope_grid"):
            assert SUITES["full"][key] >= SUITES["quick"][key]

    def test_errors_fail_their_criterion(self):
        """Test a library error marks the criterion failed and keeps going"""
        service = MagicMock()
        service.run_replicas.side_effect = NoEvents("no interior handover")
        results = AcceptanceSuite(service, "quick").run(only=[1, 3])
        assert [r["criterion"] for r in results] == [1, 3]
        assert all(r["passed"] is False for r in results)
        assert results[0]["details"]["error"] == "no interior handover"

    def test_area_criterion(self):
        """Test the area criterion on a few instances"""
        suite = AcceptanceSuite(
            None, "quick", overrides={"area_instances": 3, "area_points": 50_000, "area_tol": 0.1}
        )
        (result,) = suite.run(only=[9])
        assert result["criterion"] == 9
        assert result["name"] == "area_formulas"
        assert result["details"]["ellipse_ball_gap"] <= 1e-12
        assert set(result["details"]["worst_relative_error"]) == {"ball", "ellipse", "hyperbola"}

    @pytest.mark.slow
    def test_quick_suite_reports_every_criterion(self):
        """Test the quick suite reports all fourteen criteria"""
        from src.services.simulation_service import SimulationService

        results = AcceptanceSuite(SimulationService(), "quick").run()
        assert len(results) == 14
        assert [r["criterion"] for r in results] == list(range(1, 15))
        assert all(isinstance(r["passed"], bool) for r in results)
