"""Logging configuration for structured run logs."""

import json
import logging
import logging.handlers
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, Field

UTC = timezone.utc  # alias of datetime.UTC (3.11+)

_RESERVED_ATTRS = frozenset(
    {
        "name",
        "msg",
        "args",
        "levelname",
        "levelno",
        "pathname",
        "filename",
        "module",
        "lineno",
        "funcName",
        "created",
        "msecs",
        "relativeCreated",
        "thread",
        "threadName",
        "processName",
        "process",
        "taskName",
        "stack_info",
        "exc_info",
        "exc_text",
        "message",
        "getMessage",
    }
)


class LoggingConfig(BaseModel):
    """Run logging configuration."""

    log_level: str = Field(default="INFO", description="Log level")
    log_format: str = Field(default="text", description="Log format (json or text)")
    max_file_size_mb: int = Field(default=10, description="Maximum log file size in MB")
    backup_count: int = Field(default=5, description="Number of rotated log files")
    log_dir: Path | None = Field(
        default=None, description="Run log directory (None disables the file log)"
    )
    enable_console_output: bool = Field(
        default=True, description="Enable console logging"
    )

    def setup_directories(self) -> None:
        """Create the log directory if it doesn't exist."""
        if self.log_dir is not None:
            self.log_dir.mkdir(parents=True, exist_ok=True)


class StructuredFormatter(logging.Formatter):
    """JSON formatter for structured run logging."""

    def format(self, record: logging.LogRecord) -> str:
        """Format log record as structured JSON."""
        log_entry: dict[str, Any] = {
            "timestamp": datetime.fromtimestamp(record.created, UTC).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "module": record.module,
            "function": record.funcName if record.funcName else "<unknown>",
            "line": record.lineno,
        }

        if record.exc_info:
            log_entry["exception"] = self.formatException(record.exc_info)

        # Extra fields passed through `extra=`
        log_entry.update(
            {
                key: value
                for key, value in record.__dict__.items()
                if key not in _RESERVED_ATTRS
            }
        )

        return json.dumps(log_entry, default=self._json_serializer, ensure_ascii=True)

    def _json_serializer(self, obj: Any) -> Any:  # noqa: ANN401
        """JSON serializer for non-standard types."""
        if isinstance(obj, np.generic):
            return obj.item()
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, datetime):
            return obj.isoformat()
        if isinstance(obj, Path):
            return str(obj)
        return str(obj)


def setup_run_logging(config: LoggingConfig) -> logging.Logger:
    """Configure the package logger with console and optional file output."""
    config.setup_directories()

    run_logger = logging.getLogger("cmemh")
    run_logger.setLevel(getattr(logging, config.log_level.upper(), logging.INFO))

    # Clear existing handlers to avoid duplicates
    run_logger.handlers.clear()

    formatter: logging.Formatter
    if config.log_format == "json":
        formatter = StructuredFormatter()
    else:
        formatter = logging.Formatter(
            "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
        )

    if config.log_dir is not None:
        file_handler = logging.handlers.RotatingFileHandler(
            filename=config.log_dir / "cmemh_run.log",
            maxBytes=config.max_file_size_mb * 1024 * 1024,
            backupCount=config.backup_count,
        )
        # The file log is always structured
        file_handler.setFormatter(StructuredFormatter())
        run_logger.addHandler(file_handler)

    if config.enable_console_output:
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(formatter)
        run_logger.addHandler(console_handler)

    run_logger.propagate = False

    return run_logger
