"""
App name: Takens Reservoir Toolkit (takres)
Description: Exception hierarchy raised by the numerical usecases and the harness.
"""


class TakresError(Exception):
    """Base class for every error raised by this application."""


class ParameterError(TakresError, ValueError):
    """Invalid parameter combination or insufficient data."""


class GenerationError(TakresError):
    """A signal generator overflowed, produced NaN, or diverged."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class DegenerateInputError(TakresError, ValueError):
    """Zero-variance input where a normalisation needs a spread."""


class NotFoundError(TakresError):
    """A searched-for quantity (minimum, dimension) does not exist in range."""


class ConstructionError(TakresError):
    """Reservoir construction failed (eigenvalue computation)."""


class NoFixedPointError(TakresError):
    """Return-map slope too close to one to define a fixed point."""


class ConfigError(TakresError):
    """Experiment configuration failed validation."""


class UnknownExperimentError(ConfigError):
    """Experiment name not registered with the harness."""


class ResultIOError(TakresError):
    """Result files could not be written."""
