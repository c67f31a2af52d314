"""Exception and warning types shared across the toolkit."""


class InvalidInputError(ValueError):
    """Malformed data, mismatched dimensions, or a violated precondition."""


class NumericalError(ArithmeticError):
    """Base class for numerical failures."""


class SingularSystemError(NumericalError):
    """A linear system that must be solved is singular (or numerically so)."""


class NumericalBreakdownError(NumericalError):
    """An iterative method produced a non-finite or non-positive quantity."""


class DivergenceError(NumericalError):
    """An iteration blew up past the divergence threshold."""


class SizeError(InvalidInputError):
    """A dense path was requested for a problem above the size cap."""


class ConvergenceWarning(UserWarning):
    """An iterative method stopped before meeting its tolerance."""


class StationarityWarning(UserWarning):
    """Parameters handed to an influence computation are not a stationary point."""
