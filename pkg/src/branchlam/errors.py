"""Exception types used across the library.

All errors derive from BranchlamError so callers can catch library failures
uniformly; the CLI maps them to exit code 2.
"""


class BranchlamError(Exception):
    """Base class for all library errors."""


class ConfigurationError(BranchlamError):
    """Invalid preset / dimension / parameter-count combination."""


class DomainError(BranchlamError):
    """A numeric argument lies outside its admissible domain."""


class GeometryError(BranchlamError):
    """Invalid geometric arguments (e.g. aspect-ratio preconditions)."""


class ParameterError(BranchlamError):
    """Construction parameters violate an ordering or size precondition."""


class StructureError(BranchlamError):
    """Input matrices violate a rank or compatibility condition."""


class UnsupportedStructureError(BranchlamError):
    """Well set whose lamination hull is not a union of segments."""


class NotRepresentableError(BranchlamError):
    """Boundary datum does not lie on the lamination hull."""


class InconsistencyError(BranchlamError):
    """An exact evaluator met data violating a construction invariant."""


class AlignmentError(BranchlamError):
    """A phase field does not align with the cell complex it annotates."""


class UnsupportedError(BranchlamError):
    """Requested mode is outside the exact-geometry support range."""
