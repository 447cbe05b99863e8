"""Exception types shared across gclab."""


class GclabError(Exception):
    """Base class for all gclab errors."""


class InputError(GclabError, ValueError):
    """Invalid or inconsistent input data."""


class DegenerateGapError(GclabError, ArithmeticError):
    """Eigenvalue gap too small for the requested eigen-derivative.

    ``pair`` holds the (sorted, 0-based) indices of the colliding eigenvalues
    and ``gap`` their separation.
    """

    def __init__(self, message, pair=None, gap=None):
        super().__init__(message)
        self.pair = pair
        self.gap = gap


class OutOfDomainError(GclabError, IndexError):
    """A stencil was requested at a node without a full neighbourhood."""


class WeightRangeError(GclabError, ArithmeticError):
    """The exponential weight would overflow double precision."""

    def __init__(self, message, node=None, exponent=None):
        super().__init__(message)
        self.node = node
        self.exponent = exponent


class EmptySigmaError(GclabError):
    """The localisation set contains no grid nodes."""


class StudyError(GclabError):
    """A multi-level study could not be completed."""

    def __init__(self, message, level=None):
        super().__init__(message)
        self.level = level
