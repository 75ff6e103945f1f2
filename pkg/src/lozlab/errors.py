"""Exception types shared across the package."""


class LozlabError(Exception):
    """Base class for all package errors."""


class DomainError(LozlabError, ValueError):
    """The discrete domain is empty, disconnected or not simply connected."""


class BoundaryError(LozlabError, ValueError):
    """Boundary heights are inconsistent or cannot be extended inside."""


class PreconditionError(LozlabError, ValueError):
    """An operation was called outside its domain of definition."""


class FrozenError(PreconditionError):
    """The point lies outside the liquid region."""


class GuardExceeded(LozlabError, RuntimeError):
    """A size guard refused to run an expensive computation."""


class ConvergenceError(LozlabError, RuntimeError):
    """An iterative solver failed to converge."""

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
