"""Exception hierarchy.

The CLI maps these onto exit codes: ``InvalidInputError`` -> 2,
``NumericalPreconditionError`` -> 3, ``ResourceCapError`` -> 4.
"""


class InvalidInputError(ValueError):
    """Malformed data, inconsistent shapes or bad configuration."""


class ParameterError(InvalidInputError):
    """A parameter lies outside its admissible set."""


class NumericalPreconditionError(ArithmeticError):
    """A moment or convergence precondition fails (e.g. a divergent integral)."""


class MomentOverflowError(NumericalPreconditionError, OverflowError):
    """An exponential moment exceeds the floating point range."""


class ResourceCapError(RuntimeError):
    """Problem size exceeds a configured cap."""
