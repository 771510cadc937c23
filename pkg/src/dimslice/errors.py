"""Exception types shared across the package."""


class DimsliceError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(DimsliceError):
    """Bad input: out-of-range argument, precondition violation, malformed file."""


class ShapeError(ValidationError):
    """Operands with incompatible dimensions."""


class NumericalError(DimsliceError):
    """A computation failed numerically (non-convergence, degenerate data)."""
