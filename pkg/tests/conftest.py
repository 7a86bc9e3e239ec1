import pytest
import os
from unittest.mock import patch

from src.models.scenario_model import HeadPoint, HeadWindow, Realization, ScenarioConfig


@pytest.fixture(autouse=True)
def setup_test_environment(tmp_path):
    """Set up test environment variables"""
    test_env = {
        "HANDOVER_LAB_THREADS": "1",
        "HANDOVER_LAB_LOG_LEVEL": "WARNING",
        "HANDOVER_LAB_MC_SAMPLES": "20000",
        "HANDOVER_LAB_OUTPUT_DIR": str(tmp_path / "results"),
    }

    with patch.dict(os.environ, test_env):
        yield


def build_realization(heads, speeds, window=(-2.0, 6.0), h_max=100.0, guard=0.0, seed=0):
    """Realization on hand-placed heads; ``speeds`` lists the class speeds fastest first"""
    config = ScenarioConfig(
        classes=[{"v": v, "lambda": 1.0} for v in speeds],
        window=window,
        seed=seed,
    )
    head_window = HeadWindow(
        t_lo=window[0] - guard - 1.0,
        t_hi=window[1] + guard + 1.0,
        h_max=h_max,
        guard=guard,
    )
    return Realization.from_heads(heads, config, head_window)


@pytest.fixture
def realization_factory():
    """Factory for realizations on hand-placed heads"""
    return build_realization


@pytest.fixture
def three_head_realization():
    """Heads (-1, 1), (1, 1), (5, 1) at unit speed on [-2, 6]"""
    heads = [HeadPoint(t=-1.0, h=1.0), HeadPoint(t=1.0, h=1.0), HeadPoint(t=5.0, h=1.0)]
    return build_realization(heads, [1.0])


@pytest.fixture
def piercing_realization():
    """Fast head (0, 1) at v=4 dipping under a slow head (0, 2) at v=1 on [-3, 3]"""
    heads = [HeadPoint(t=0.0, h=1.0, cls=1), HeadPoint(t=0.0, h=2.0, cls=2)]
    return build_realization(heads, [4.0, 1.0], window=(-3.0, 3.0))


@pytest.fixture
def single_config():
    """Unit speed, unit intensity scenario"""
    return ScenarioConfig(classes=[{"v": 1.0, "lambda": 1.0}], window=(0.0, 60.0), seed=7)


@pytest.fixture
def two_speed_config():
    """Speeds (2, 1) with intensity 0.5 each"""
    return ScenarioConfig(
        classes=[{"v": 2.0, "lambda": 0.5}, {"v": 1.0, "lambda": 0.5}],
        window=(0.0, 60.0),
        seed=11,
    )
