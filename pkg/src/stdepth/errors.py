"""Exception types raised across the package."""


class StDepthError(Exception):
    """Base class for all package errors."""


class InvalidIntrinsicsError(StDepthError, ValueError):
    pass


class BehindCameraError(StDepthError, ValueError):
    pass


class InfiniteDepthError(StDepthError, ValueError):
    pass


class DimensionError(StDepthError, ValueError):
    pass


class DegenerateMaskError(StDepthError, ValueError):
    """No valid pixels left to average a loss or metric over."""


class NumericalFailureError(StDepthError, ArithmeticError):
    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class NoIntersectionError(StDepthError, ValueError):
    pass


class AlignmentError(StDepthError, ValueError):
    pass


class ConfigError(StDepthError, ValueError):
    pass


class FormatError(StDepthError, ValueError):
    """Malformed or unrecognised file contents."""
