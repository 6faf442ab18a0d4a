"""Exception hierarchy shared by every module."""


class DualSparseError(Exception):
    """Base class for all library errors."""


class DimensionError(DualSparseError, ValueError):
    """Array shapes or sizes do not agree."""


class CoverageError(DualSparseError):
    """Aggregation left pixels without any contributing patch."""


class ContractError(DualSparseError, ValueError):
    """An input violates a documented precondition (e.g. non-unit atoms)."""


class TerminationError(DualSparseError):
    """A pursuit exhausted its support without meeting the error target."""


class DegenerateDataError(DualSparseError, ValueError):
    """Data carries no usable signal (all zero, constant, too small)."""


class FormatError(DualSparseError, ValueError):
    """A file header or payload is malformed or unsupported."""
