"""Exception types raised by the simulator."""


class CizfError(Exception):
    """Base class for all simulator errors."""


class DimensionError(CizfError, ValueError):
    """Array shapes are invalid or inconsistent."""


class SelectionIndexError(CizfError, IndexError):
    """User indices are duplicated or out of range."""


class ConditioningError(CizfError, ArithmeticError):
    """The Gram matrix is singular or too ill-conditioned to invert."""


class MaskError(CizfError, ValueError):
    """A CI mask retains a position that is not constructive."""


class CapacityError(CizfError):
    """An exhaustive search would exceed its enumeration guard."""


class InfeasibleError(CizfError, ValueError):
    """The optimization problem has no feasible point."""


class OutOfRangeError(CizfError, ValueError):
    """A requested value lies outside the range covered by a curve."""


class DominanceError(CizfError, AssertionError):
    """An in-run dominance check between schemes failed."""


class ConvergenceError(CizfError):
    """An iterative solver stopped before reaching its tolerance.

    The best iterate found and its optimality residual are kept on the
    exception so callers can inspect or salvage them.
    """

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
