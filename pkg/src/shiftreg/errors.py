"""Exception hierarchy shared by all simulator modules."""

from typing import Optional, Sequence


class ShiftRegisterError(Exception):
    """Base class for every error raised by shiftreg."""

    exit_code = 1


class PhysicsError(ShiftRegisterError):
    """A physical precondition does not hold (singularity, unbound trap, out-of-model tilt, ...)."""


class CapacityError(ShiftRegisterError):
    """More shift cycles requested than the illuminated array can carry."""


class CoverageError(ShiftRegisterError):
    """A requested time span is not covered by the available waveform or trajectory."""


class FitError(ShiftRegisterError):
    """The Gaussian contrast fit is degenerate or did not converge."""

    def __init__(self, message: str, residuals: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.residuals = list(residuals) if residuals is not None else []


class ConfigError(ShiftRegisterError):
    """Experiment configuration is unreadable or violates the schema."""

    exit_code = 2

    def __init__(self, message: str, field: str = "", line: Optional[int] = None):
        location = field or ""
        if line is not None:
            location = f"line {line}" + (f", {field}" if field else "")
        super().__init__(f"{location}: {message}" if location else message)
        self.field = field
        self.line = line


class ArtifactError(ShiftRegisterError):
    """A result bundle is missing expected files."""

    exit_code = 2

    def __init__(self, directory: str, missing: Sequence[str]):
        super().__init__(f"{directory}: missing artifacts: {', '.join(missing)}")
        self.missing = list(missing)
