"""Exception types shared across the package."""


class SplatsrError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(SplatsrError):
    """A raw or constrained parameter is invalid (non-finite, out of range)."""


class ShapeMismatchError(SplatsrError):
    """Array or image shapes are inconsistent."""


class ConfigError(SplatsrError):
    """An operation was configured incorrectly (missing reference, bad strategy...)."""


class FileFormatError(SplatsrError):
    """A file does not conform to the on-disk format."""
