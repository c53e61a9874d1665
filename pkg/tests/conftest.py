"""Pytest configuration and fixtures for shiftreg tests."""

import json
import tempfile
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, Generator

import pytest

from src.shiftreg.config import ExperimentConfig
from src.shiftreg.control import ShiftSequenceSpec
from src.shiftreg.dynamics import IntegratorConfig, ShiftRegisterSetup
from src.shiftreg.logger import LogLevel
from src.shiftreg.physics import RB85


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """Create a temporary directory for test files."""
    with tempfile.TemporaryDirectory() as temp_path:
        yield Path(temp_path)


@pytest.fixture
def species():
    return RB85


@pytest.fixture
def small_setup() -> ShiftRegisterSetup:
    """Default optics on a 7x7 lit window with a few hundred atoms."""
    return ShiftRegisterSetup(
        species=RB85,
        sequence=ShiftSequenceSpec(symmetric_handover=True),
        integrator=IntegratorConfig(time_step=1e-6, lifetime=None, record_interval=10),
        atoms=200,
        seed=11,
        settle=0.5e-3,
        active_extent=(7, 7),
    )


@pytest.fixture
def ideal_setup(small_setup: ShiftRegisterSetup) -> ShiftRegisterSetup:
    return replace(small_setup, mirror=None)


@pytest.fixture
def minimal_document() -> Dict[str, Any]:
    """Smallest valid config document."""
    return {"schema_version": 1, "name": "minimal", "logging": {"level": "error"}}


@pytest.fixture
def write_config(temp_dir: Path) -> Callable[[Dict[str, Any], str], Path]:
    """Write a config document to the temp dir and return its path."""
    def _write(document: Dict[str, Any], name: str = "config.json") -> Path:
        path = temp_dir / name
        path.write_text(json.dumps(document, indent=2), encoding="utf-8")
        return path
    return _write


@pytest.fixture
def trap_config(temp_dir: Path) -> ExperimentConfig:
    """Analytic trap config writing into the temp dir."""
    config = ExperimentConfig(name="trap", output_dir=temp_dir / "trap")
    config.logging.level = LogLevel.ERROR  # Suppress logs in tests
    return config
