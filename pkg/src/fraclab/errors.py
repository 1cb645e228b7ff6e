"""Exception types.  Each carries a stable ``code`` used in diagnostics and exit codes."""


class FraclabError(Exception):
    code = "ERROR"
    exit_code = 1

    def __str__(self):
        msg = super().__str__()
        return f"{self.code}: {msg}" if msg else self.code


class ValidationError(FraclabError, ValueError):
    code = "VALIDATION"
    exit_code = 2


class SpacingTooCoarse(ValidationError):
    code = "SPACING_TOO_COARSE"


class DomainEmpty(ValidationError):
    code = "DOMAIN_EMPTY"


class UnsupportedShape(ValidationError):
    code = "UNSUPPORTED_SHAPE"


class InvalidQ(ValidationError):
    code = "INVALID_Q"


class GeometryError(ValidationError):
    code = "GEOMETRY"


class UnresolvedRadius(ValidationError):
    code = "UNRESOLVED_RADIUS"


class NonPositiveInput(ValidationError):
    code = "NONPOSITIVE_INPUT"


class GridMismatch(ValidationError):
    code = "GRID_MISMATCH"


class ZeroFunction(ValidationError):
    code = "ZERO_FUNCTION"


class KernelBudgetExceeded(ValidationError):
    code = "OUT_OF_MEMORY"


class NoConvergence(FraclabError):
    """Raised by the iterative solvers; ``best`` holds the best iterate reached."""

    code = "NO_CONVERGENCE"
    exit_code = 3

    def __init__(self, msg, best=None, residual=None, iters=None):
        super().__init__(msg)
        self.best = best
        self.residual = residual
        self.iters = iters


class ApproximationWarning(UserWarning):
    """A quantity was computed by a fallback with no closed form (flagged APPROX)."""
