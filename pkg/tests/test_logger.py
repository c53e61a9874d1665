"""Tests for logging system."""

import json
import logging
from io import StringIO

import pytest

from src.shiftreg.logger import LogLevel, SimLogger, StructuredFormatter, create_logger


def make_record(level=logging.INFO, msg="Test message"):
    return logging.LogRecord(name="test.logger", level=level, pathname="", lineno=0,
                             msg=msg, args=(), exc_info=None)


class TestLogLevel:
    """Tests for LogLevel enum."""

    def test_log_level_values(self):
        assert LogLevel.DEBUG == "debug"
        assert LogLevel.INFO == "info"
        assert LogLevel.WARN == "warn"
        assert LogLevel.ERROR == "error"


class TestStructuredFormatter:
    """Tests for StructuredFormatter class."""

    def test_basic_formatting(self):
        log_data = json.loads(StructuredFormatter().format(make_record()))

        assert log_data["level"] == "info"
        assert log_data["component"] == "shiftreg"
        assert log_data["message"] == "Test message"
        assert log_data["timestamp"].endswith("Z")

    def test_formatting_with_component(self):
        record = make_record(logging.ERROR, "Error message")
        record.component = "dynamics"

        log_data = json.loads(StructuredFormatter().format(record))

        assert log_data["component"] == "dynamics"

    def test_structured_fields(self):
        record = make_record(logging.DEBUG)
        record.recipe = "trap"
        record.operationId = "12345"
        record.atoms = 200

        log_data = json.loads(StructuredFormatter().format(record))

        assert log_data["recipe"] == "trap"
        assert log_data["operationId"] == "12345"
        assert log_data["atoms"] == 200
        assert "lineno" not in log_data


class TestSimLogger:
    """Tests for SimLogger class."""

    def setup_method(self):
        """Set up test logger with string stream."""
        self.stream = StringIO()
        self.logger = SimLogger(level=LogLevel.DEBUG, component="test")

        for handler in self.logger.logger.handlers[:]:
            self.logger.logger.removeHandler(handler)

        handler = logging.StreamHandler(self.stream)
        handler.setFormatter(StructuredFormatter())
        self.logger.logger.addHandler(handler)

    def entries(self):
        return [json.loads(line) for line in self.stream.getvalue().splitlines()]

    def test_logger_creation(self):
        logger = SimLogger()

        assert logger.component == "shiftreg"
        assert logger.operation_id
        assert logger.level == logging.INFO

    def test_fields_and_operation_id(self):
        self.logger.info("Run started", recipe="trap", seed=7)

        entry = self.entries()[0]
        assert entry["message"] == "Run started"
        assert entry["component"] == "test"
        assert entry["seed"] == 7
        assert entry["operationId"] == self.logger.operation_id

    def test_level_filtering(self):
        self.logger.logger.setLevel(logging.WARNING)

        self.logger.debug("hidden")
        self.logger.info("hidden")
        self.logger.warn("shown")

        assert [e["message"] for e in self.entries()] == ["shown"]

    def test_run_event(self):
        self.logger.run_event("completed", "transport_scan", outputFiles=5)

        entry = self.entries()[0]
        assert entry["message"] == "Run completed"
        assert entry["recipe"] == "transport_scan"
        assert entry["outputFiles"] == 5

    def test_progress_is_debug(self):
        self.logger.progress("Transport duration done", 2, 5)

        entry = self.entries()[0]
        assert entry["level"] == "debug"
        assert (entry["currentStep"], entry["totalSteps"]) == (2, 5)

    def test_calibration_step(self):
        self.logger.calibration_step("heating_rate", 1.2e-5, -0.003, t2Ms=71.0)

        entry = self.entries()[0]
        assert entry["parameter"] == "heating_rate"
        assert entry["objective"] == -0.003
        assert entry["t2Ms"] == 71.0

    def test_performance_metric(self):
        self.logger.performance_metric("propagation", 1.5, "s", atoms=100)

        entry = self.entries()[0]
        assert entry["metricName"] == "propagation"
        assert entry["unit"] == "s"

    @pytest.mark.parametrize("name", ["debug", "info", "warn", "error", "run_event", "progress",
                                      "calibration_step", "performance_metric", "_log"])
    def test_methods_documented(self, name):
        assert getattr(SimLogger, name).__doc__


class TestCreateLogger:
    """Tests for create_logger function."""

    def test_create_logger(self):
        logger = create_logger(level=LogLevel.WARN, component="cli")

        assert isinstance(logger, SimLogger)
        assert logger.component == "cli"
        assert logger.level == logging.WARNING

    def test_handlers_not_duplicated(self):
        create_logger(component="experiments")
        logger = create_logger(component="experiments")

        assert len(logger.logger.handlers) == 1
