"""Exception types shared across the package."""


class McsLocError(Exception):
    """Base class for every error raised by mcsloc."""


class DomainError(McsLocError, ValueError):
    """An argument lies outside the domain of the operation."""


class ShapeError(McsLocError, ValueError):
    """Array shapes or channel counts do not line up."""


class ValidationError(McsLocError, ValueError):
    """A data structure violates one of its invariants."""


class ConfigError(McsLocError, ValueError):
    """An experiment configuration is malformed or inconsistent."""


class FormatError(McsLocError):
    """A file on disk does not follow the expected layout."""


class TrainingError(McsLocError, ArithmeticError):
    """Training produced a non-finite value."""
