"""Exception types shared across the package."""


class LmalabError(Exception):
    """Base class for all package errors."""


class DegenerateInput(LmalabError):
    """Point set or domain has no interior in the requested dimension."""


class EmptyImage(LmalabError):
    """Affine resampling produced no valid nodes."""


class NoConvergence(LmalabError):
    """Iterative solver exhausted its budget.

    Carries the last residual so callers can decide whether the partial
    answer is usable.
    """

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NonMonotoneStencil(LmalabError):
    """A discrete solution violated positivity that a monotone scheme guarantees."""


class SectionEscapes(LmalabError):
    """Requested section reaches the domain boundary; shrink the height."""


class EmptyFreeBoundary(LmalabError):
    """Contact set is empty, so there is no free boundary to extract."""


class InvalidInitialGuess(LmalabError):
    """Initial iterate is not a discrete supersolution."""


class InsufficientData(LmalabError):
    """Not enough usable samples for a fit."""


class PreconditionViolation(LmalabError):
    """A documented operation precondition failed; names which one."""

    def __init__(self, which, detail=""):
        msg = which if not detail else f"{which}: {detail}"
        super().__init__(msg)
        self.which = which


class SchemaError(LmalabError):
    """Configuration does not match the published schema.

    ``path`` is the dotted field path of the offending entry.
    """

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
