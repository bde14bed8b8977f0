"""Exception types shared across the package."""


class AdlFusionError(Exception):
    """Base class for all package errors."""


class DimensionError(AdlFusionError, ValueError):
    """Array shapes are incompatible for the requested operation."""


class DomainError(AdlFusionError, ValueError):
    """Input lies outside the domain of an operation (e.g. empty softmax)."""


class ConfigurationError(AdlFusionError, ValueError):
    """Model, training or pipeline configuration is inconsistent."""


class DegeneratePoseError(AdlFusionError, ValueError):
    """Joints needed to estimate an orientation coincide or are missing.

    ``frame`` is the offending frame index when known.
    """

    def __init__(self, message, frame=None):
        if frame is not None:
            message = f"frame {frame}: {message}"
        super().__init__(message)
        self.frame = frame


class NoPersonError(AdlFusionError, ValueError):
    """No usable person detection to build an activity crop from."""


class DataError(AdlFusionError, ValueError):
    """Malformed or inconsistent input data (files, records)."""


class NumericalError(AdlFusionError, ArithmeticError):
    """A loss or gradient became non-finite."""
