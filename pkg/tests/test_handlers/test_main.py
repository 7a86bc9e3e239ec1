import math

import orjson
import pytest
from unittest.mock import Mock, patch

from src.handlers.analytic import parse_params
from src.handlers.markov import cmd_markov
from src.handlers.palm import cmd_palm
from src.main import main
from src.models.handover_model import MarkovState
from src.models.report_model import ReplicaOutput
from src.services.envelope_service import extract_handovers, lower_envelope
from src.services.simulation_service import SimulationService
from src.utils.errors import ConfigError, Overflow
from src.utils.result_store import ResultStore


@pytest.fixture
def scenario_file(tmp_path):
    """Single-speed scenario on disk"""
    path = tmp_path / "scenario.json"
    path.write_bytes(orjson.dumps({"classes": [{"v": 1.0, "lambda": 1.0}], "window": [0.0, 50.0], "seed": 3}))
    return str(path)


@pytest.fixture
def out_dir(tmp_path):
    return tmp_path / "run"


def _read_json(path):
    return orjson.loads(path.read_bytes())


class TestMainCLI:
    """Test the handover-lab command line"""

    @patch("src.handlers.simulate.SimulationService")
    def test_simulate_success(self, mock_service, scenario_file, out_dir):
        """Test a simulate run writes its events, summary and manifest"""
        mock_service.return_value.simulate.return_value = {
            "success": True,
            "events": [],
            "summary": {"replicas": [], "total_events": 0},
            "retries": 1,
        }

        code = main(["simulate", "--config", scenario_file, "--replicas", "2", "--out", str(out_dir)])

        assert code == 0
        config, replicas = mock_service.return_value.simulate.call_args[0]
        assert replicas == 2
        assert config.seed == 3
        manifest = _read_json(out_dir / "manifest.json")
        assert set(manifest["outputs"]) == {"events.csv", "envelope_summary.json"}
        assert manifest["retries"] == 1
        assert manifest["subcommand"] == "simulate"

    @patch("src.handlers.simulate.SimulationService")
    def test_overrides_reach_the_service(self, mock_service, scenario_file, out_dir):
        """Test --seed and --window override the scenario file"""
        mock_service.return_value.simulate.return_value = {
            "success": True, "events": [], "summary": {}, "retries": 0,
        }
        args = ["simulate", "--config", scenario_file, "--seed", "9", "--window", "1", "5", "--out", str(out_dir)]
        assert main(args) == 0
        config = mock_service.return_value.simulate.call_args[0][0]
        assert config.seed == 9
        assert config.window == (1.0, 5.0)

    def test_zero_replicas(self, scenario_file, out_dir):
        """Test invalid arguments exit with the config code"""
        assert main(["simulate", "--config", scenario_file, "--replicas", "0", "--out", str(out_dir)]) == 2

    def test_missing_config(self, tmp_path, out_dir):
        """Test an unreadable scenario file"""
        assert main(["simulate", "--config", str(tmp_path / "absent.json"), "--out", str(out_dir)]) == 2

    @patch("src.handlers.simulate.SimulationService")
    def test_runtime_failure(self, mock_service, scenario_file, out_dir):
        """Test library errors exit with the runtime code"""
        mock_service.return_value.simulate.return_value = {
            "success": False,
            "error": "cap exhausted",
            "exception": Overflow("cap exhausted"),
        }
        assert main(["simulate", "--config", scenario_file, "--out", str(out_dir)]) == 3

    @patch("src.handlers.simulate.cmd_simulate", side_effect=RuntimeError("boom"))
    def test_unexpected_failure(self, mock_cmd, scenario_file, out_dir):
        """Test unexpected errors exit with the runtime code"""
        assert main(["simulate", "--config", scenario_file, "--out", str(out_dir)]) == 3

    @patch("src.handlers.validate.SimulationService")
    def test_validate_failure_code(self, mock_service, out_dir):
        """Test a failed criterion exits with the validation code"""
        mock_service.return_value.validate.return_value = {
            "success": True,
            "passed": False,
            "criteria": [{"criterion": 4, "name": "visible_heads", "passed": False, "details": {}}],
        }
        assert main(["validate", "quick", "--out", str(out_dir)]) == 4
        manifest = _read_json(out_dir / "manifest.json")
        assert manifest["notes"] == ["failed criteria: [4]"]
        assert _read_json(out_dir / "validation.json")["passed"] is False

    @patch("src.handlers.validate.SimulationService")
    def test_validate_success(self, mock_service, out_dir):
        """Test a passing suite exits with zero"""
        mock_service.return_value.validate.return_value = {"success": True, "passed": True, "criteria": []}
        assert main(["validate", "--out", str(out_dir)]) == 0
        mock_service.return_value.validate.assert_called_once_with("quick")

    def test_analytic_frequency(self, out_dir, capsys):
        """Test the analytic subcommand prints and stores its result"""
        code = main(["analytic", "frequency", "--param", "lambda=1", "--param", "v=1", "--out", str(out_dir)])
        assert code == 0
        stored = _read_json(out_dir / "analytic.json")
        assert stored["result"]["lambda_V"] == pytest.approx(4.0 / math.pi)
        assert stored["params"] == {"lambda": 1, "v": 1}
        assert "lambda_V" in capsys.readouterr().out

    def test_analytic_bad_param(self, out_dir):
        """Test a parameter without '='"""
        assert main(["analytic", "law", "--param", "lambda", "--out", str(out_dir)]) == 2


class TestHandlers:
    """Test the subcommand handlers directly"""

    def test_parse_params(self):
        """Test values parse as JSON when they can"""
        params = parse_params(["lambda=2", "name=handover_distance", 'classes=[{"v": 1, "lambda": 1}]'])
        assert params == {"lambda": 2, "name": "handover_distance", "classes": [{"v": 1, "lambda": 1}]}
        assert parse_params(None) == {}

    def test_parse_params_rejects_bare_keys(self):
        """Test a missing '='"""
        with pytest.raises(ConfigError):
            parse_params(["lambda"])

    def test_cmd_markov(self, single_config, out_dir):
        """Test chain rows are written with the pure type filled in"""
        service = Mock()
        service.markov.return_value = {
            "success": True,
            "trajectory": [(MarkovState(h_l=1.0, t_r=2.0, h_r=0.5), 0.75, 1.25)],
            "transitions": None,
            "mean_dwell": 0.75,
            "notes": [],
        }
        cmd_markov(single_config, 1, str(out_dir), service=service)
        rows = ResultStore(str(out_dir)).read_csv("chain.csv")
        assert rows[0]["old_label"] == "binom(1;1,1)"
        assert float(rows[0]["dwell"]) == 0.75
        assert _read_json(out_dir / "transition_matrix.json")["mean_dwell"] == 0.75

    def test_cmd_markov_bad_steps(self, single_config, out_dir):
        """Test zero steps"""
        with pytest.raises(ConfigError):
            cmd_markov(single_config, 0, str(out_dir), service=Mock())

    def test_cmd_palm(self, three_head_realization, out_dir):
        """Test the report and histogram files of a small run"""

        def simulate(config, replica):
            segments = lower_envelope(three_head_realization)
            events = extract_handovers(segments, three_head_realization)
            return ReplicaOutput(replica=replica, realization=three_head_realization, segments=segments, events=events)

        with patch("src.services.simulation_service.simulate_replica", side_effect=simulate):
            manifest = cmd_palm(
                three_head_realization.config, 2, str(out_dir), n_typical=5, service=SimulationService()
            )

        report = _read_json(out_dir / "palm_report.json")
        assert report["summary"]["n_events"] == 4
        assert report["type_labels"] == {"[[1;1,1]]": "binom(1;1,1)"}
        assert "hist_handover_distance.csv" in manifest.outputs
        assert manifest.notes
