"""Exception types shared across the kernel engine."""


class DomainError(ValueError):
    """Input lies outside the mathematical domain of an operation."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to reach its tolerance."""


class SingularityError(ArithmeticError):
    """A kernel formula hit a pole (frozen-kernel pathology)."""


class DataFormatError(OSError):
    """A dataset file is missing, truncated or malformed."""
