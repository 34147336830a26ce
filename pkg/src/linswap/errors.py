"""Exception types raised by the solvers."""


class LinswapError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(LinswapError, ValueError):
    pass


class DegenerateProjection(LinswapError):
    """A point failed membership but its projection is within tolerance."""


class NumericalStall(LinswapError):
    """An iterative solver ran out of iterations before certifying its answer."""


class ShapeDegenerate(LinswapError):
    """The ellipsoid collapsed (its shape matrix lost positive definiteness)."""


class IterationCapExceeded(LinswapError):
    pass


class InconsistentOracle(LinswapError):
    """A constructed cut is not violated by the point it was built to separate."""


class QExceededBound(LinswapError):
    pass


class FixedPointMissing(LinswapError):
    pass


class UnsupportedBody(LinswapError):
    pass


class CompressedPrimalInfeasible(LinswapError):
    pass


class ConfigError(LinswapError):
    pass
