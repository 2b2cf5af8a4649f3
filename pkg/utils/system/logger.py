"""Structured logging for training, distillation, sampling and evaluation runs.

Every record is a JSON object: the message, a timestamp, the fields bound with
``with_context`` (run, seed, subcommand, step) and the per-call ``extra``.
Numpy scalars, arrays, enums and paths are converted on the way out.
"""

import json
import logging
import logging.config
import logging.handlers
import os
import sys
import time
from dataclasses import dataclass
from datetime import datetime
from enum import Enum, IntEnum
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, TypeVar

import numpy as np
import yaml

from config import APP_NAME, DEBUG_LEVEL
from utils.exceptions import ConfigurationException

LOGGING_CONFIG_PATH = Path(__file__).resolve().parents[2] / "logging_config.yaml"
LOG_DIR_ENV = "VOSR_LOG_DIR"
DEFAULT_LOG_DIR = Path("logs")
TEXT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_FORMATS = ("json", "text")

F = TypeVar("F", bound=Callable[..., Any])


class LogLevel(IntEnum):
    DEBUG = logging.DEBUG
    INFO = logging.INFO
    WARNING = logging.WARNING
    ERROR = logging.ERROR
    CRITICAL = logging.CRITICAL


def to_jsonable(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    return repr(value)


def _decode(message: str) -> Dict[str, Any]:
    try:
        parsed = json.loads(message)
    except (json.JSONDecodeError, TypeError):
        return {"message": message}
    return parsed if isinstance(parsed, dict) else {"message": message}


class StructuredLogger:
    """Logger that renders each record as JSON with bound run context."""

    def __init__(self, name: str, context: Optional[Mapping[str, Any]] = None):
        self.name = name
        self._context: Dict[str, Any] = dict(context or {})
        self._logger = logging.getLogger(name)
        if self._logger.level == logging.NOTSET:
            self._logger.setLevel(DEBUG_LEVEL)
        self._logger.propagate = False

    def with_context(self, **fields: Any) -> "StructuredLogger":
        """Child logger whose records carry ``fields`` on top of the current context."""
        return StructuredLogger(self.name, {**self._context, **fields})

    def _format_message(self, message: str, extra: Any = None) -> str:
        if extra is not None and not isinstance(extra, Mapping):
            extra = {"data": extra}
        record = {
            "message": message,
            "timestamp": datetime.now().isoformat(),
            **self._context,
            **(extra or {}),
        }
        return json.dumps(record, default=to_jsonable)

    def _emit(self, level: int, message: str, extra: Any = None, exc_info: bool = False) -> None:
        if self._logger.isEnabledFor(level):
            self._logger.log(level, self._format_message(message, extra), exc_info=exc_info)

    def _log(self, level: int, message: str, **fields: Any) -> None:
        self._emit(level, message, fields)

    def debug(self, message: str, extra: Any = None) -> None:
        self._emit(logging.DEBUG, message, extra)

    def info(self, message: str, extra: Any = None) -> None:
        self._emit(logging.INFO, message, extra)

    def warning(self, message: str, extra: Any = None) -> None:
        self._emit(logging.WARNING, message, extra)

    def error(self, message: str, extra: Any = None) -> None:
        self._emit(logging.ERROR, message, extra)

    def critical(self, message: str, extra: Any = None) -> None:
        self._emit(logging.CRITICAL, message, extra)

    def exception(self, message: str, extra: Any = None) -> None:
        """ERROR record with the active traceback attached."""
        self._emit(logging.ERROR, message, extra, exc_info=True)


class JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        payload: Dict[str, Any] = {
            "timestamp": self.formatTime(record),
            "level": record.levelname,
            "logger": record.name,
        }
        payload.update(_decode(record.getMessage()))
        if record.exc_info and not record.exc_text:
            record.exc_text = self.formatException(record.exc_info)
        if record.exc_text:
            payload["exc_info"] = record.exc_text
        return json.dumps(payload, default=to_jsonable)


@dataclass(frozen=True)
class LoggerConfig:
    log_file: Path
    level: int = logging.INFO
    max_size: int = 10 * 1024 * 1024
    backup_count: int = 5
    format: str = "json"


def setup_logger(config: LoggerConfig) -> StructuredLogger:
    """Attach a size-rotated file handler to the application logger."""
    if config.format not in LOG_FORMATS:
        raise ConfigurationException(
            f"Invalid log format: {config.format}", details={"allowed": list(LOG_FORMATS)}
        )
    log_file = Path(config.log_file)
    try:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handler = logging.handlers.RotatingFileHandler(
            log_file,
            maxBytes=config.max_size,
            backupCount=config.backup_count,
            encoding="utf-8",
        )
    except OSError as e:
        raise ConfigurationException(
            f"Failed to open log file {log_file}: {e}", details={"path": str(log_file)}
        ) from e
    handler.setFormatter(JsonFormatter() if config.format == "json" else logging.Formatter(TEXT_FORMAT))

    structured = StructuredLogger(APP_NAME)
    structured._logger.addHandler(handler)
    structured._logger.setLevel(config.level)
    return structured


def rotate_logs(log_dir: Path) -> None:
    """Roll over the application logger's rotating handlers that write into ``log_dir``."""
    target = Path(log_dir).resolve()
    for handler in logger._logger.handlers:
        if isinstance(handler, logging.handlers.RotatingFileHandler):
            if Path(handler.baseFilename).resolve().parent == target:
                handler.doRollover()


def close_log_file(log_file: Path) -> None:
    """Detach and close the application logger's handlers writing to ``log_file``."""
    target = Path(log_file).resolve()
    for handler in logger._logger.handlers[:]:
        if isinstance(handler, logging.FileHandler) and Path(handler.baseFilename).resolve() == target:
            logger._logger.removeHandler(handler)
            handler.close()


def clear_logs(log_dir: Path) -> None:
    for log_file in Path(log_dir).glob("*.log*"):
        try:
            log_file.unlink(missing_ok=True)
        except OSError:
            pass


def _log_dir() -> Path:
    return Path(os.environ.get(LOG_DIR_ENV, DEFAULT_LOG_DIR))


def _place_log_files(config: Dict[str, Any], log_dir: Path) -> None:
    # relative handler filenames live under the log directory; files open on first write
    for handler in config.get("handlers", {}).values():
        filename = handler.get("filename")
        if filename is None:
            continue
        handler["filename"] = str(log_dir / filename)
        handler.setdefault("delay", True)


def setup_structured_logger(config_path: Path = LOGGING_CONFIG_PATH) -> StructuredLogger:
    """Configure logging from YAML; without a usable file, log to stderr only."""
    logging.getLogger().setLevel(DEBUG_LEVEL)
    try:
        with open(config_path, encoding="utf-8") as f:
            config = yaml.safe_load(f)
        log_dir = _log_dir()
        log_dir.mkdir(parents=True, exist_ok=True)
        _place_log_files(config, log_dir)
        logging.config.dictConfig(config)
    except (OSError, ValueError, yaml.YAMLError):
        logging.basicConfig(level=DEBUG_LEVEL, format=TEXT_FORMAT, handlers=[logging.StreamHandler(sys.stderr)])

    structured = StructuredLogger(APP_NAME)
    structured._logger.setLevel(DEBUG_LEVEL)
    return structured


def log_method(level: int = LogLevel.DEBUG) -> Callable[[F], F]:
    """Log entry, completion time and failures of the wrapped call."""

    def decorator(func: F) -> F:
        @wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> Any:
            call_log = logger.with_context(function=func.__name__, module=func.__module__)
            call_log._log(level, f"Entering {func.__name__}", kwargs=sorted(kwargs))
            started = time.perf_counter()
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                call_log.error(
                    f"Exception in {func.__name__}",
                    extra={"exception_type": type(e).__name__, "exception_message": str(e)},
                )
                raise
            call_log._log(
                level, f"Completed {func.__name__}", elapsed_s=round(time.perf_counter() - started, 6)
            )
            return result

        return wrapper  # type: ignore[return-value]

    return decorator


logger = setup_structured_logger()
