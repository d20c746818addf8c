"""Exception types shared by the hybrid-trap services.

Input problems subclass ValueError, numerical and analysis failures subclass
RuntimeError. The command line maps each family onto a documented exit code.
"""

from __future__ import annotations


class InvalidInputError(ValueError):
    """Raised when a physical input is outside its domain (non-positive radius, zero coupling, ...)."""


class ConfigNotFoundError(FileNotFoundError):
    """Raised when a config path or preset name cannot be resolved."""


class ConfigValidationError(ValueError):
    """Raised when a configuration fails validation.

    Carries the dotted path of the offending field (``integrator.dt_s``) so the
    command line can report it.
    """

    def __init__(self, field_path: str, message: str) -> None:
        """Store the field path next to the human-readable message."""
        super().__init__(f"{field_path}: {message}")
        self.field_path = field_path
        self.message = message


class SpectrumSchemaError(ValueError):
    """Raised when an input spectrum CSV header doesn't match ``freq_hz,psd``."""


class IntegrationDivergedError(RuntimeError):
    """Raised when the integrated state stops being finite."""

    def __init__(self, step_index: int) -> None:
        """Remember the first step whose state was non-finite."""
        super().__init__(f"integration diverged at step {step_index}")
        self.step_index = step_index


class AnalysisError(RuntimeError):
    """Base class for failures of the closed-form and spectral analysis layers."""


class NotAWellError(AnalysisError):
    """Raised when a position is not inside a trapping optical well (cos(2kx0) <= 0)."""


class UndefinedEquilibriumError(AnalysisError):
    """Raised when no bath couples to the particle, so no steady temperature exists."""


class AliasingError(AnalysisError):
    """Raised when a detector sample rate cannot represent the heterodyne lines."""


class InvalidSegmentationError(AnalysisError):
    """Raised for PSD/spectrogram segment settings that don't fit the series."""


class InsufficientDataError(AnalysisError):
    """Raised when too few windows show a feature to fit its decay."""


class InconsistentObservationError(AnalysisError):
    """Raised when an observed secular frequency lies below the pure-optical floor."""
