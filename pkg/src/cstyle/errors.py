"""Exception types shared across the package."""


class CStyleError(Exception):
    """Base class for all package errors."""


class ShapeError(CStyleError, ValueError):
    pass


class NotSymmetricError(CStyleError, ValueError):
    pass


class NotPSDError(CStyleError, ValueError):
    pass


class NumericalError(CStyleError, ArithmeticError):
    pass


class EmptyDomainError(CStyleError, ValueError):
    pass


class InsufficientDataError(CStyleError, ValueError):
    pass


class ConfigError(CStyleError, ValueError):
    pass


class ParameterError(CStyleError, ValueError):
    pass


class StateError(CStyleError, RuntimeError):
    pass


class FormatError(CStyleError, ValueError):
    """A file on disk is not in the expected format."""


class MissingArtifactError(CStyleError, FileNotFoundError):
    pass
