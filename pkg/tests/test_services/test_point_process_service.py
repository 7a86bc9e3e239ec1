import math

import numpy as np
import pytest

from src.models.scenario_model import DirectionLaw, PlanarStation, ScenarioConfig
from src.services.point_process_service import (
    displace,
    enlarge_window,
    sample_heads,
    sample_planar_stations,
    size_window,
    station_positions,
    stations_to_heads,
    visible_rate_upper,
)
from src.utils.errors import ConfigError
from src.utils.rng import make_rng
from src.utils.stats import chi_square, ks_two_sample, poisson_dispersion, two_rate_test


class TestPlanarStations:
    """Test planar station sampling and displacement"""

    def test_zero_intensity(self):
        """Test lambda = 0 gives no stations"""
        assert sample_planar_stations(0.0, 10.0, DirectionLaw(), make_rng(0)) == []

    def test_bad_radius(self):
        """Test a non-positive radius is refused"""
        with pytest.raises(ConfigError):
            sample_planar_stations(1.0, 0.0, DirectionLaw(), make_rng(0))

    def test_count_is_poisson(self):
        """Test disk counts have mean and variance 100 pi"""
        counts = [
            len(sample_planar_stations(1.0, 10.0, DirectionLaw(), make_rng(3, k))) for k in range(300)
        ]
        assert np.mean(counts) == pytest.approx(100.0 * math.pi, rel=0.02)
        assert poisson_dispersion(counts).p_value > 0.001

    def test_fixed_direction(self):
        """Test the fixed law gives every station the same heading"""
        stations = sample_planar_stations(1.0, 5.0, DirectionLaw(kind="fixed", theta=0.4), make_rng(1))
        assert stations
        assert all(st.theta == pytest.approx(0.4) for st in stations)
        assert all(-math.pi <= st.alpha < math.pi for st in stations)

    def test_positions_inside_disk(self):
        """Test sampled positions lie in the disk"""
        stations = sample_planar_stations(2.0, 3.0, DirectionLaw(), make_rng(2))
        radii = np.hypot(*station_positions(stations).T)
        assert np.all(radii <= 3.0 + 1e-9)

    def test_displace_identity(self):
        """Test t = 0 leaves positions unchanged"""
        st = PlanarStation(R=2.0, alpha=0.3, theta=1.1)
        moved = displace([st], 0.0)[0]
        assert moved.position == pytest.approx(st.position)

    def test_displace_straight_line(self):
        """Test a station at (1, 0) heading along x moves to (3, 0)"""
        st = PlanarStation(R=1.0, alpha=0.0, theta=0.0, v=1.0)
        moved = displace([st], 2.0)[0]
        assert moved.position == pytest.approx((3.0, 0.0), abs=1e-12)
        assert moved.R == pytest.approx(3.0)

    def test_stations_to_heads(self):
        """Test every station maps to a head of its class"""
        stations = sample_planar_stations(1.0, 4.0, DirectionLaw(), make_rng(4), cls=2, v=2.0)
        heads = stations_to_heads(stations)
        assert len(heads) == len(stations)
        assert all(h.cls == 2 and h.h <= 4.0 + 1e-9 for h in heads)


class TestHeadWindow:
    """Test truncation window sizing"""

    def test_truncation_budget(self):
        """Test the expected excursion count above h_max stays within epsilon"""
        config = ScenarioConfig(classes=[{"v": 1.0, "lambda": 1.0}], window=(0.0, 1000.0), epsilon=1e-3)
        window = size_window(config)
        budget = math.exp(-math.pi * window.h_max**2) * visible_rate_upper(config) * 1000.0
        assert budget <= 1e-3 * (1.0 + 1e-9)

    def test_denser_population_lowers_cap(self):
        """Test h_max decreases as lambda grows"""
        sparse = ScenarioConfig(classes=[{"v": 1.0, "lambda": 1.0}], window=(0.0, 100.0))
        dense = ScenarioConfig(classes=[{"v": 1.0, "lambda": 10.0}], window=(0.0, 100.0))
        assert size_window(dense).h_max < size_window(sparse).h_max

    def test_buffer_uses_slowest_speed(self):
        """Test the time buffer is h_max over the slowest speed"""
        config = ScenarioConfig(
            classes=[{"v": 2.0, "lambda": 0.5}, {"v": 1.0, "lambda": 0.5}], window=(0.0, 10.0)
        )
        window = size_window(config)
        assert window.guard == pytest.approx(window.h_max)
        assert window.t_lo == pytest.approx(-window.h_max)
        assert window.t_hi == pytest.approx(10.0 + window.h_max)

    def test_enlarge_window(self):
        """Test enlarging doubles the cap and widens the buffers"""
        config = ScenarioConfig(classes=[{"v": 1.0, "lambda": 1.0}], window=(0.0, 10.0))
        window = size_window(config)
        bigger = enlarge_window(config, window)
        assert bigger.h_max == pytest.approx(2.0 * window.h_max)
        assert bigger.t_lo < window.t_lo


class TestSampleHeads:
    """Test the head point process sampler"""

    @pytest.fixture
    def config(self):
        """Two classes, the slow one empty"""
        return ScenarioConfig(
            classes=[{"v": 2.0, "lambda": 1.0}, {"v": 1.0, "lambda": 0.0}], window=(0.0, 20.0), seed=3
        )

    def test_heads_inside_window(self, config):
        """Test heads are sorted and inside the truncated domain"""
        window = size_window(config)
        real = sample_heads(config, window, make_rng(config.seed, 0))
        assert np.all(np.diff(real.t) >= 0)
        assert np.all((real.t >= window.t_lo) & (real.t <= window.t_hi))
        assert np.all((real.h >= 0) & (real.h <= window.h_max))

    def test_empty_class_contributes_nothing(self, config):
        """Test a class with lambda = 0 has no heads"""
        real = sample_heads(config, size_window(config), make_rng(config.seed, 1))
        assert set(real.cls.tolist()) <= {1}

    def test_seeded_determinism(self, config):
        """Test equal seeds give identical realizations"""
        window = size_window(config)
        a = sample_heads(config, window, make_rng(5, 0))
        b = sample_heads(config, window, make_rng(5, 0))
        np.testing.assert_array_equal(a.t, b.t)
        np.testing.assert_array_equal(a.h, b.h)

    def test_counts_match_intensity(self, config):
        """Test head counts have mean 2 lambda v per unit area"""
        window = size_window(config)
        counts = [sample_heads(config, window, make_rng(11, k)).n_heads for k in range(200)]
        expected = window.expected_counts[1]
        assert np.mean(counts) == pytest.approx(expected, rel=0.02)
        assert poisson_dispersion(counts).p_value > 0.001

    @pytest.mark.slow
    def test_station_mapping_matches_head_intensity(self):
        """Test heads mapped from planar stations have density 2 lambda v"""
        lam, v, radius = 1.0, 1.5, 12.0
        box_t, box_h = (-2.0, 2.0), (0.0, 4.0)
        grid_t = np.linspace(*box_t, 5)
        grid_h = np.linspace(*box_h, 5)
        counts = np.zeros((4, 4))
        runs = 200
        for k in range(runs):
            stations = sample_planar_stations(lam, radius, DirectionLaw(), make_rng(21, k), v=v)
            heads = stations_to_heads(stations)
            t = np.array([p.t for p in heads])
            h = np.array([p.h for p in heads])
            hist, _, _ = np.histogram2d(t, h, bins=[grid_t, grid_h])
            counts += hist
        cell = (grid_t[1] - grid_t[0]) * (grid_h[1] - grid_h[0])
        expected = np.full(counts.shape, 2.0 * lam * v * cell * runs)
        assert chi_square(counts.ravel(), expected.ravel()).p_value > 0.001


class TestDirectionLaw:
    """Test the head process does not depend on the heading law"""

    @staticmethod
    def _heads_in_box(law, seed, runs=60, lam=1.0, v=1.5, radius=8.0):
        """Per-run counts and pooled (t, h) of heads in [-2, 2] x [0, 4]"""
        counts, ts, hs = [], [], []
        for k in range(runs):
            heads = stations_to_heads(sample_planar_stations(lam, radius, law, make_rng(seed, k), v=v))
            t = np.array([p.t for p in heads])
            h = np.array([p.h for p in heads])
            inside = (np.abs(t) <= 2.0) & (h <= 4.0)
            counts.append(int(inside.sum()))
            ts.append(t[inside])
            hs.append(h[inside])
        return counts, np.concatenate(ts), np.concatenate(hs)

    def test_fixed_heading_matches_uniform(self):
        """Test counts, abscissae and heights agree for a fixed and a uniform heading"""
        n_u, t_u, h_u = self._heads_in_box(DirectionLaw(), 31)
        n_f, t_f, h_f = self._heads_in_box(DirectionLaw(kind="fixed", theta=0.7), 32)
        assert two_rate_test(sum(n_u), sum(n_f)).p_value > 0.001
        assert ks_two_sample(h_u, h_f).p_value > 0.001
        assert ks_two_sample(t_u, t_f).p_value > 0.001

    def test_fixed_heading_intensity(self):
        """Test a fixed heading still gives 2 lambda v heads per unit area"""
        counts, _, _ = self._heads_in_box(DirectionLaw(kind="fixed", theta=-2.0), 33)
        assert np.mean(counts) == pytest.approx(2.0 * 1.0 * 1.5 * 16.0, rel=0.08)
        assert poisson_dispersion(counts).p_value > 0.001
