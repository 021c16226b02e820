"""Exception types shared across the package."""


class V2XGuardError(Exception):
    """Base class for all package errors."""


class FormatError(V2XGuardError, ValueError):
    pass


class GapError(V2XGuardError, ValueError):
    pass


class InsufficientDataError(V2XGuardError, ValueError):
    pass


class ParameterError(V2XGuardError, ValueError):
    pass


class DomainError(V2XGuardError, ValueError):
    pass


class DimensionError(V2XGuardError, ValueError):
    pass


class ModelVersionError(V2XGuardError):
    pass


class CorruptModelError(V2XGuardError):
    pass


class ConfigError(V2XGuardError, ValueError):
    pass


class StreamError(V2XGuardError, ValueError):
    """Streams that should be time-aligned are not."""


class NormalizationError(V2XGuardError, AssertionError):
    """A probability vector drifted off the simplex."""
