"""Exception and warning types shared across the package."""


class MpsflowError(Exception):
    """Base class for all library errors."""


class DimensionError(MpsflowError, ValueError):
    """Shapes or bond dimensions are inconsistent."""


class ResourceError(MpsflowError):
    """A dense representation would exceed the configured size cap."""


class PreconditionError(MpsflowError, ValueError):
    """An input violates a documented precondition (e.g. not left-canonical)."""


class NumericalConsistencyError(MpsflowError, ArithmeticError):
    """A computed quantity failed an internal consistency check."""


class IllConditionedEnvironment(MpsflowError):
    """A right environment is too close to singular to be inverted."""


class ConditioningWarning(UserWarning):
    """Environment eigenvalues were floored before inversion."""
