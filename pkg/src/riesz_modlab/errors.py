"""Exception types shared across the package."""


class SingularEvaluationError(ValueError):
    """Kernel evaluated at a point where it is infinite (e.g. x = 0)."""


class InvalidSpecError(ValueError):
    """Potential parameters outside the supported range."""


class ToleranceError(RuntimeError):
    """A quadrature or series did not converge to the requested tolerance."""


class UnderResolvedError(RuntimeError):
    """Splitting parameters cannot meet the tail tolerance budget."""


class CollisionError(RuntimeError):
    """Two particles came closer than the collision threshold."""

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}


class CFLViolationError(RuntimeError):
    """Advection time step exceeds the CFL bound."""


class NegativityError(RuntimeError):
    """PDE density dropped below the negativity tolerance."""


class SchemaError(ValueError):
    """Experiment configuration failed validation."""
