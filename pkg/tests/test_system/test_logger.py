import json
import logging
from pathlib import Path

import numpy as np
import pytest

from models.enums import DistillVariant
from utils.exceptions import ConfigurationException
from utils.system.logger import (
    JsonFormatter,
    LoggerConfig,
    StructuredLogger,
    clear_logs,
    close_log_file,
    log_method,
    logger,
    rotate_logs,
    setup_logger,
)


def _detach(structured: StructuredLogger) -> None:
    for handler in structured._logger.handlers[:]:
        handler.close()
        structured._logger.removeHandler(handler)


def _read(path: Path):
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


class TestLogger:
    @pytest.fixture
    def log_file(self, temp_log_dir):
        return temp_log_dir / "vosr.log"

    @pytest.fixture
    def run_logger(self, log_file):
        """Application logger writing JSON lines to a temporary file."""
        _detach(logger)
        structured = setup_logger(
            LoggerConfig(log_file=log_file, level=logging.DEBUG, max_size=64 * 1024, backup_count=2, format="json")
        )
        yield structured
        _detach(structured)

    def test_levels_reach_file(self, run_logger, log_file):
        run_logger.debug("debug")
        run_logger.info("info")
        run_logger.warning("warning")
        run_logger.error("error")
        run_logger.critical("critical")
        _detach(run_logger)

        levels = [entry["level"] for entry in _read(log_file)]
        assert levels == ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]

    def test_level_threshold(self, log_file):
        _detach(logger)
        structured = setup_logger(
            LoggerConfig(log_file=log_file, level=logging.WARNING, max_size=1024, backup_count=1, format="json")
        )
        structured.info("hidden")
        structured.warning("shown")
        _detach(structured)
        assert [entry["message"] for entry in _read(log_file)] == ["shown"]

    def test_numeric_payloads_are_serialized(self, run_logger, log_file):
        run_logger.info(
            "step",
            extra={
                "step": np.int64(7),
                "loss": np.float32(0.25),
                "size": np.array([16, 16]),
                "directory": Path("runs/teacher"),
            },
        )
        _detach(run_logger)

        entry = _read(log_file)[0]
        assert entry["step"] == 7
        assert entry["loss"] == pytest.approx(0.25)
        assert entry["size"] == [16, 16]
        assert entry["directory"] == str(Path("runs/teacher"))

    def test_run_context(self, run_logger, log_file):
        run_log = run_logger.with_context(run="train", seed=3)
        run_log.info("Training finished", extra={"final_loss": 0.125})
        run_logger.info("plain")
        _detach(run_logger)

        first, second = _read(log_file)
        assert first["run"] == "train"
        assert first["seed"] == 3
        assert first["final_loss"] == 0.125
        assert "run" not in second

    def test_nested_context_overrides(self, run_logger):
        outer = run_logger.with_context(run="distill", variant="rc")
        inner = outer.with_context(variant="shortcut", step=4)
        parsed = json.loads(inner._format_message("Test"))
        assert parsed["variant"] == "shortcut"
        assert parsed["step"] == 4
        assert outer._context == {"run": "distill", "variant": "rc"}

    def test_non_dict_extra(self, run_logger):
        parsed = json.loads(run_logger._format_message("Test", extra=[1, 2]))
        assert parsed["data"] == [1, 2]

    def test_exception_traceback(self, run_logger, log_file):
        try:
            raise ValueError("non-finite loss")
        except ValueError:
            run_logger.exception("Training aborted")
        _detach(run_logger)

        entry = _read(log_file)[0]
        assert "ValueError: non-finite loss" in entry["exc_info"]

    def test_log_method_decorator(self, mocker):
        spy = mocker.patch.object(logger, "with_context", wraps=logger.with_context)

        @log_method()
        def double(x):
            return 2 * x

        assert double(x=4) == 8
        spy.assert_called_once_with(function="double", module=__name__)

    def test_rotation_and_clear(self, run_logger, log_file, temp_log_dir, mocker):
        mocker.patch("utils.system.logger.logger", run_logger)
        run_logger.info("before")
        rotate_logs(temp_log_dir)
        run_logger.info("after")
        _detach(run_logger)

        assert (temp_log_dir / "vosr.log.1").exists()
        assert [entry["message"] for entry in _read(log_file)] == ["after"]
        clear_logs(temp_log_dir)
        assert not list(temp_log_dir.glob("vosr.log*"))

    def test_size_rotation(self, log_file, temp_log_dir):
        _detach(logger)
        structured = setup_logger(
            LoggerConfig(log_file=log_file, level=logging.INFO, max_size=2048, backup_count=3, format="json")
        )
        for _ in range(20):
            structured.info("X" * 500)
        _detach(structured)
        assert len(list(temp_log_dir.glob("vosr.log*"))) > 1

    def test_text_format(self, log_file):
        _detach(logger)
        structured = setup_logger(
            LoggerConfig(log_file=log_file, level=logging.INFO, max_size=1024, backup_count=1, format="text")
        )
        structured.info("plain text")
        _detach(structured)
        assert " - INFO - " in log_file.read_text(encoding="utf-8")

    def test_invalid_format(self, log_file):
        with pytest.raises(ConfigurationException):
            setup_logger(LoggerConfig(log_file=log_file, level=logging.INFO, max_size=1024, backup_count=1, format="xml"))

    def test_json_formatter_plain_message(self):
        record = logging.LogRecord("vosr", logging.INFO, "x.py", 1, "not json", (), None)
        parsed = json.loads(JsonFormatter().format(record))
        assert parsed["message"] == "not json"
        assert parsed["level"] == "INFO"
        assert parsed["logger"] == "vosr"

    def test_enum_payload(self, run_logger):
        parsed = json.loads(run_logger._format_message("Test", extra={"variant": DistillVariant.RC}))
        assert parsed["variant"] == "rc"

    def test_close_log_file(self, run_logger, log_file):
        run_logger.info("kept")
        close_log_file(log_file)
        assert not any(isinstance(h, logging.FileHandler) for h in run_logger._logger.handlers)
        run_logger.info("dropped")
        assert [entry["message"] for entry in _read(log_file)] == ["kept"]
