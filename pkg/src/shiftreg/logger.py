"""Structured logging for the shift-register simulator."""

import json
import logging
import sys
from datetime import datetime, timezone
from enum import Enum
from typing import Any
from uuid import uuid4


class LogLevel(str, Enum):
    """Supported log levels."""
    DEBUG = "debug"
    INFO = "info"
    WARN = "warn"
    ERROR = "error"


_LEVELS = {
    LogLevel.DEBUG: logging.DEBUG,
    LogLevel.INFO: logging.INFO,
    LogLevel.WARN: logging.WARNING,
    LogLevel.ERROR: logging.ERROR,
}

# Attributes every LogRecord carries; anything else was passed as a structured field.
_STANDARD_FIELDS = frozenset(vars(logging.LogRecord("", 0, "", 0, "", (), None))) | {
    "message", "asctime", "extra",
}


class StructuredFormatter(logging.Formatter):
    """JSON-lines formatter."""

    def format(self, record: logging.LogRecord) -> str:
        """Format log record as one JSON object."""
        log_entry = {
            "timestamp": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
            "level": record.levelname.lower(),
            "component": getattr(record, "component", "shiftreg"),
            "message": record.getMessage(),
        }

        for attr_name, value in vars(record).items():
            if attr_name.startswith("_") or attr_name in _STANDARD_FIELDS or attr_name in log_entry:
                continue
            log_entry[attr_name] = value

        return json.dumps(log_entry, default=str)


class SimLogger:
    """Component logger with structured output."""

    def __init__(self, level: LogLevel = LogLevel.INFO, component: str = "shiftreg"):
        self.component = component
        self.operation_id = str(uuid4())

        self.logger = logging.getLogger(f"shiftreg.{component}")
        self.logger.setLevel(_LEVELS[LogLevel(level)])

        # Remove existing handlers
        for handler in self.logger.handlers[:]:
            self.logger.removeHandler(handler)

        # Add structured handler
        handler = logging.StreamHandler(sys.stdout)
        handler.setFormatter(StructuredFormatter())
        self.logger.addHandler(handler)

        # Prevent propagation to root logger
        self.logger.propagate = False

    @property
    def level(self) -> int:
        """Effective numeric level of the underlying logger."""
        return self.logger.level

    def _log(self, level: int, message: str, **kwargs: Any) -> None:
        """Internal logging method with structured fields."""
        if not self.logger.isEnabledFor(level):
            return
        extra = {
            "component": self.component,
            "operationId": self.operation_id,
            **kwargs,
        }
        record = self.logger.makeRecord(
            name=self.logger.name,
            level=level,
            fn="",
            lno=0,
            msg=message,
            args=(),
            exc_info=None,
            extra=extra,
        )
        self.logger.handle(record)

    def debug(self, message: str, **kwargs: Any) -> None:
        """Log debug message."""
        self._log(logging.DEBUG, message, **kwargs)

    def info(self, message: str, **kwargs: Any) -> None:
        """Log info message."""
        self._log(logging.INFO, message, **kwargs)

    def warn(self, message: str, **kwargs: Any) -> None:
        """Log warning message."""
        self._log(logging.WARNING, message, **kwargs)

    def error(self, message: str, **kwargs: Any) -> None:
        """Log error message."""
        self._log(logging.ERROR, message, **kwargs)

    def run_event(self, event: str, recipe: str, **kwargs: Any) -> None:
        """Log a run lifecycle event (started, finished, failed)."""
        self.info(f"Run {event}", recipe=recipe, **kwargs)

    def progress(self, message: str, step: int, total: int, **kwargs: Any) -> None:
        """Log progress through a scan or propagation."""
        self.debug(message, currentStep=step, totalSteps=total, **kwargs)

    def calibration_step(self, parameter: str, value: float, objective: float, **kwargs: Any) -> None:
        """Log one evaluation of a calibration objective."""
        self.info(
            f"Calibration: {parameter}",
            parameter=parameter,
            value=value,
            objective=objective,
            **kwargs,
        )

    def performance_metric(self, metric_name: str, value: Any, unit: str = "", **kwargs: Any) -> None:
        """Log performance metrics."""
        self.info(
            f"Performance: {metric_name}",
            metricName=metric_name,
            value=value,
            unit=unit,
            **kwargs,
        )


def create_logger(level: LogLevel = LogLevel.INFO, component: str = "shiftreg") -> SimLogger:
    """Create a configured logger instance."""
    return SimLogger(level=level, component=component)
