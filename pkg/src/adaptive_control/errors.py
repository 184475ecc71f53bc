"""Exception types raised across the package."""


class InvalidArgument(ValueError):
    """An input violates the documented preconditions."""


class UnsupportedDimension(InvalidArgument):
    """The operation is only defined for a one-dimensional parameter."""


class NumericOverflow(ArithmeticError):
    """A quantity left the representable floating point range."""


class InfeasibleTarget(ValueError):
    """No information state reproduces the requested posterior moments."""

    def __init__(self, message, achievable=None):
        super().__init__(message)
        self.achievable = achievable


class SolverError(RuntimeError):
    """Backward induction produced a non-finite value."""

    def __init__(self, message, slice_index=None, point=None):
        super().__init__(message)
        self.slice_index = slice_index
        self.point = point
