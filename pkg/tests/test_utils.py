import logging
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pytest

from utils import CallTracker, get_logger, setup_logging
from utils.config import coerce, env_values, read_config_file, resolve
from utils.errors import CallLimitError, ConfigError, DatasetFormatError
from utils.jsonio import Envelope, decode_array, encode_array, hexfloat, read_json, unhexfloat, write_json
from utils.seeding import stream_rng, stream_seed


@dataclass(frozen=True)
class Settings:
    steps: int = 10
    rate: float = 0.5
    verbose: bool = False
    name: Optional[str] = None


class TestConfig:
    def test_later_layers_win(self):
        cfg = resolve(Settings, {"steps": "3"}, {"steps": "4", "rate": "0.25"})
        assert cfg == Settings(steps=4, rate=0.25)

    def test_aliases(self):
        assert resolve(Settings, {"speed": "0.1"}, aliases={"speed": "rate"}).rate == 0.1

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="colour"):
            resolve(Settings, {"colour": "red"})

    @pytest.mark.parametrize("raw, expected", [("yes", True), ("0", False), ("TRUE", True), (True, True)])
    def test_booleans(self, raw, expected):
        assert coerce("verbose", raw, bool) is expected

    def test_optional_none(self):
        assert coerce("name", "none", Optional[str]) is None
        assert coerce("name", "run1", Optional[str]) == "run1"

    def test_rejects_fractional_int(self):
        with pytest.raises(ConfigError):
            coerce("steps", 2.5, int)
        with pytest.raises(ConfigError):
            coerce("steps", "ten", int)

    def test_env_values(self):
        found = env_values(["steps", "rate"], {"GM_STEPS": "5", "STEPS": "6", "GM_OTHER": "1"})
        assert found == {"steps": "5"}

    def test_config_file(self, tmp_path):
        path = tmp_path / "run.env"
        path.write_text("# comment\nSTEPS=12\nrate=0.1\n")
        assert resolve(Settings, read_config_file(str(path))) == Settings(steps=12, rate=0.1)

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(ConfigError):
            read_config_file(str(tmp_path / "missing.env"))


class TestCallTracker:
    def test_counts_by_action(self):
        tracker = CallTracker()
        tracker.spend("forward")
        tracker.spend("perturbed", 2)
        assert tracker.used == 3
        assert tracker.counters == {"forward": 1, "perturbed": 2}

    def test_limit(self):
        tracker = CallTracker(limit=2)
        tracker.spend("forward", 2)
        with pytest.raises(CallLimitError):
            tracker.spend("forward")
        assert tracker.used == 2

    def test_reset(self):
        tracker = CallTracker()
        tracker.spend("eval")
        tracker.reset()
        assert tracker.used == 0 and tracker.counters == {}

    def test_thread_safe(self):
        tracker = CallTracker()

        def work():
            for _ in range(1000):
                tracker.spend("forward")

        threads = [threading.Thread(target=work) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert tracker.used == 4000


class TestJsonIO:
    def test_hexfloat_is_exact(self):
        for value in (0.1, -2.5e-300, 1 / 3, 0.0):
            assert unhexfloat(hexfloat(value), "x") == value

    def test_bad_hexfloat(self):
        with pytest.raises(DatasetFormatError, match="where"):
            unhexfloat("0xzz", "where")
        with pytest.raises(DatasetFormatError):
            unhexfloat(1.5, "where")

    def test_array_shape_is_checked(self):
        payload = encode_array(np.ones((2, 3)))
        payload["shape"] = [4, 2]
        with pytest.raises(DatasetFormatError, match="shape"):
            decode_array(payload, "arr")

    def test_envelope_kind_and_version(self):
        content = Envelope("dataset", 1, {"x": 1}).dump()
        assert Envelope.load(content, "dataset", 1).payload["x"] == 1
        with pytest.raises(DatasetFormatError):
            Envelope.load(content, "cost_model", 1)
        with pytest.raises(DatasetFormatError):
            Envelope.load(content, "dataset", 2)

    def test_read_reports_position(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "a": 1,\n  "b": \n')
        with pytest.raises(DatasetFormatError, match="line"):
            read_json(path)

    def test_write_creates_parent(self, tmp_path):
        path = write_json(tmp_path / "nested" / "out.json", {"b": 1, "a": 2})
        assert read_json(path) == {"a": 2, "b": 1}


class TestSeeding:
    def test_streams_are_reproducible(self):
        assert stream_rng(3, "dataset").random() == stream_rng(3, "dataset").random()

    def test_streams_are_independent(self):
        assert stream_rng(3, "dataset").random() != stream_rng(3, "sampling").random()
        assert stream_seed(3, "restarts") != stream_seed(4, "restarts")

    def test_unknown_stream(self):
        with pytest.raises(ConfigError):
            stream_rng(0, "weights")


class TestLogging:
    def test_level_from_environment(self, monkeypatch):
        monkeypatch.setenv("LOG_LEVEL", "warning")
        setup_logging()
        assert logging.getLogger().level == logging.WARNING
        setup_logging("debug")
        assert logging.getLogger().level == logging.DEBUG

    def test_log_file_mirror(self, tmp_path):
        path = tmp_path / "run.log"
        setup_logging("info", str(path))
        get_logger("gm.test").info("hello from the trainer")
        for handler in logging.getLogger().handlers:
            handler.flush()
        assert "| INFO | gm.test | hello from the trainer" in path.read_text()
        setup_logging("info")
