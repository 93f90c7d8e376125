"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Problem data or configuration violates a documented precondition."""


class NormEstimationError(RuntimeError):
    """Power iteration failed to converge within its iteration cap."""
