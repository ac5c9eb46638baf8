"""exception types raised by the simulator."""


class DpcflError(Exception):
    """base class for all simulator errors."""


class ParameterError(DpcflError, ValueError):
    """raised when an operation receives an argument outside its domain."""


class CalibrationError(DpcflError):
    """raised when no noise scale satisfies the privacy budget."""


class ConfigError(DpcflError):
    """raised for malformed or inconsistent experiment configuration."""


class ValidationFailure(DpcflError):
    """raised when a validation suite check fails."""


class ConvergenceError(DpcflError):
    """raised when EM violates its ascent property beyond numerical tolerance."""
