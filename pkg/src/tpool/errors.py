"""Exception hierarchy shared by every tpool module."""


class TpoolError(Exception):
    """Base class for all errors raised by tpool."""


class ParseError(TpoolError, ValueError):
    """A file did not conform to its documented format."""


class DataError(TpoolError, ValueError):
    """Input data violates a domain invariant (non-finite values, bad labels)."""


class ConfigError(TpoolError, ValueError):
    """An option or configuration value is invalid."""


class ShapeError(TpoolError, ValueError):
    """Array shapes are inconsistent."""


class NumericError(TpoolError, ArithmeticError):
    """A numerical precondition failed or a non-finite value appeared."""


class TrainError(TpoolError, RuntimeError):
    """Training diverged."""


class FormatError(TpoolError, ValueError):
    """A checkpoint file is truncated, corrupt or of an unsupported version."""
