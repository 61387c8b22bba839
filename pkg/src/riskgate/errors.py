"""Exception hierarchy shared across the package."""

from __future__ import annotations


class RiskgateError(Exception):
    """Base class for all package errors."""


class ConfigurationError(RiskgateError, ValueError):
    """Invalid configuration or insufficient data span."""


class DataError(RiskgateError, ValueError):
    """Malformed or insufficient input data."""


class CalibrationError(RiskgateError, ValueError):
    """Calibration preconditions are not met (e.g. a single-class set)."""


class MetricError(RiskgateError, ValueError):
    """A metric is undefined for the given input."""


class OrderingError(RiskgateError, ValueError):
    """Timestamps go backwards."""


class ShapeError(RiskgateError, ValueError):
    """Array dimensions do not match the model."""


class FitError(RiskgateError, RuntimeError):
    """Model fitting failed."""
