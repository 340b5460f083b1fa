"""Exception hierarchy shared by every svdq module."""


class SvdqError(Exception):
    """Base class for all library errors."""


class DataError(SvdqError, ValueError):
    """Input data is malformed: non-finite values, shape mismatch, bad codes."""


class FormatError(DataError):
    """A serialized file is truncated, corrupted or has the wrong layout."""


class ConfigError(SvdqError, ValueError):
    """Invalid configuration such as an illegal bit schedule."""


class NumericError(SvdqError, ArithmeticError):
    """A numerical routine failed to converge or produced unusable output."""
