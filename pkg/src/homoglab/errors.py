"""Exception hierarchy shared by all modules."""


class HomogLabError(Exception):
    """Base class for every error raised by homoglab."""


class InvalidInputError(HomogLabError, ValueError):
    """Malformed data: empty phase lists, bad shapes, non-elliptic values."""


class InvalidParameterError(HomogLabError, ValueError):
    """A numerical parameter is incompatible with the grid or domain."""


class OutOfExtentError(HomogLabError, ValueError):
    """A point was queried outside the realized extent of a random field."""


class PreconditionError(HomogLabError, ValueError):
    """An operation was called on data violating its precondition."""


class InfeasibleError(HomogLabError, ValueError):
    """The data admit no solution (no sign change, violated solvability)."""


class InsufficientDataError(HomogLabError, ValueError):
    """An error curve does not cover the range needed and cannot be extrapolated."""


class OracleFailureError(HomogLabError, RuntimeError):
    """Brute-force enumeration found no complementary candidate."""


class SolverError(HomogLabError, RuntimeError):
    """A linear solve broke down."""


class NonConvergenceError(HomogLabError, RuntimeError):
    """An iterative solver exhausted its budget.

    The last residual is kept on the exception so callers can report it.
    """

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
