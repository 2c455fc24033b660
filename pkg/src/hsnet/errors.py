"""Exception taxonomy shared by every hsnet module."""


class HsnetError(Exception):
    """Base class for all errors raised by hsnet."""


class ShapeError(HsnetError, ValueError):
    """Operand dimensions are inconsistent with the operation."""


class GeometryError(HsnetError, ValueError):
    """A spatial output size would be smaller than one pixel."""


class CapacityError(HsnetError, ValueError):
    """Requested tensor exceeds the addressable element budget."""


class GraphError(HsnetError, RuntimeError):
    """The gradient tape and the requested backward pass disagree."""


class NumericsError(HsnetError, ArithmeticError):
    """An operation produced NaN or Inf values."""


class ConfigError(HsnetError, ValueError):
    """A block or network configuration violates its invariants."""


class DegenerateStatsError(HsnetError, ValueError):
    """Batch statistics are requested over a single element."""


class FormatError(HsnetError, ValueError):
    """A file does not match its documented binary layout."""


class CorruptionError(FormatError):
    """Checksum mismatch: the file content cannot be trusted."""


class IncompatibilityError(HsnetError, ValueError):
    """A checkpoint does not match the network it is loaded into."""
