import hashlib
import math
import os

import numpy as np
import orjson
import pytest
from unittest.mock import patch

from src.models.handover_model import HandoverEvent, HandoverType
from src.models.scenario_model import HeadPoint, RunManifest, ScenarioConfig
from src.utils.errors import IoError
from src.utils.result_store import EVENT_COLUMNS, ResultStore, format_value


class TestResultStore:
    """Test ResultStore class"""

    @pytest.fixture
    def store(self, tmp_path):
        """ResultStore writing to a temporary directory"""
        return ResultStore(str(tmp_path / "out"))

    @pytest.fixture
    def sample_events(self):
        """A pure and a mixed handover event"""
        return [
            HandoverEvent(
                s=0.1,
                h=math.sqrt(2.0),
                prev_head=HeadPoint(t=-1.0, h=1.0, cls=1),
                next_head=HeadPoint(t=1.0, h=1.0, cls=1),
                type=HandoverType(q=1, tau_p=1, tau_n=1),
                replica=0,
            ),
            HandoverEvent(
                s=3.0,
                h=2.5,
                prev_head=HeadPoint(t=4.0, h=2.0, cls=1),
                next_head=HeadPoint(t=2.0, h=1.5, cls=2),
                type=HandoverType(q=2, tau_p=1, tau_n=2),
                boundary=True,
                replica=1,
            ),
        ]

    def test_default_directory_from_environment(self):
        """Test the output directory falls back to HANDOVER_LAB_OUTPUT_DIR"""
        store = ResultStore()
        assert str(store.out_dir) == os.environ["HANDOVER_LAB_OUTPUT_DIR"]
        assert store.out_dir.is_dir()

    def test_write_csv_records_hash(self, store):
        """Test written files are hashed"""
        path = store.write_csv("table.csv", ["a", "b"], [[1, 0.5], [2, True]])
        payload = path.read_bytes()
        assert payload == b"a,b\n1,0.5\n2,true\n"
        assert store.hashes["table.csv"] == hashlib.sha256(payload).hexdigest()

    def test_events_survive_a_round_trip(self, store, sample_events):
        """Test events read back equal the events written"""
        store.write_events("events.csv", sample_events)
        assert store.read_events("events.csv") == sample_events

    def test_event_header(self, store, sample_events):
        """Test the event file header and old notation column"""
        store.write_events("events.csv", sample_events)
        rows = store.read_csv("events.csv")
        assert list(rows[0].keys()) == EVENT_COLUMNS
        assert rows[1]["old_label"] == "binom(2;2,1)"
        assert rows[1]["boundary"] == "true"

    def test_write_json_numpy(self, store):
        """Test numpy arrays and integer keys serialize"""
        store.write_json("data.json", {1: np.array([1.0, 2.0]), "x": 0.25})
        data = orjson.loads((store.out_dir / "data.json").read_bytes())
        assert data == {"1": [1.0, 2.0], "x": 0.25}

    def test_write_manifest_lists_outputs(self, store):
        """Test the manifest carries every earlier file hash"""
        store.write_csv("a.csv", ["x"], [[1]])
        config = ScenarioConfig(classes=[{"v": 1.0, "lambda": 1.0}], window=(0.0, 1.0))
        store.write_manifest(RunManifest(config=config, subcommand="simulate", replicas=2))
        manifest = orjson.loads((store.out_dir / "manifest.json").read_bytes())
        assert manifest["outputs"] == {"a.csv": store.hashes["a.csv"]}
        assert manifest["subcommand"] == "simulate"
        assert manifest["config"]["classes"][0]["lambda"] == 1.0

    def test_write_failure(self, store):
        """Test OS errors become IoError"""
        with patch("pathlib.Path.write_bytes", side_effect=OSError("disk full")):
            with pytest.raises(IoError, match="disk full"):
                store.write_json("x.json", {})
        assert "x.json" not in store.hashes

    def test_read_missing(self, store):
        """Test reading a file that was never written"""
        with pytest.raises(IoError):
            store.read_csv("absent.csv")

    def test_format_value(self):
        """Test floats keep 17 significant digits"""
        assert format_value(0.1) == "0.10000000000000001"
        assert format_value(np.float64(2.0)) == "2"
        assert format_value(False) == "false"
        assert format_value("binom(1;2,1)") == "binom(1;2,1)"
