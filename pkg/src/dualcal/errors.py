"""Exception types shared across the package."""


class DualcalError(Exception):
    """Base class for all package errors."""


class DomainError(DualcalError, ValueError):
    """An argument lies outside the domain of an operation."""


class ValidationError(DualcalError, ValueError):
    """A container violates one of its invariants."""


class ConfigError(DualcalError, ValueError):
    """A configuration cannot be honoured (empty split, bad k, ...)."""


class ParseError(DualcalError, ValueError):
    """A file could not be read into a container.

    The message always names the file and, where known, the row/column.
    """
