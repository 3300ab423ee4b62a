"""Exception hierarchy.

Validation-type errors subclass ``ValueError`` so ordinary callers can catch
them as such; numerical failures derive from :class:`NumericalError`.  The CLI
maps the two families onto different exit codes.
"""


class MyoshapeError(Exception):
    """Base class for all package errors."""


class InvalidInputError(MyoshapeError, ValueError):
    """Malformed, non-finite or inconsistently sized input."""


class ConfigurationError(InvalidInputError):
    """A configuration or weight set that cannot be honoured."""


class AmbiguityError(InvalidInputError):
    """The requested quantity is not uniquely defined (e.g. anti-parallel rays)."""


class TopologyError(InvalidInputError):
    """Contours or masks with the wrong topology (crossing rings, self-intersection)."""


class NonStarShapedError(TopologyError):
    """A ray from the centre crosses a contour zero or several times."""


class UnrealisticShapeError(TopologyError):
    """A segmentation flagged by :func:`myoshape.metrics.classify_shape`."""

    def __init__(self, message, flags=()):
        super().__init__(message)
        self.flags = frozenset(flags)


class UndefinedMetricError(InvalidInputError):
    """A metric that has no value for the given input (empty masks, zero variance)."""


class NumericalError(MyoshapeError, ArithmeticError):
    """Base class for numerical failures."""


class DegenerateError(NumericalError):
    """Singular linear systems and zero-size normalisers."""


class RankError(DegenerateError):
    """Projection onto modes whose eigenvalue is (numerically) zero."""


class DivergenceError(NumericalError):
    """Non-finite loss or gradient during optimisation."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
