"""Exception hierarchy shared by all solvers."""


class SynapseError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(SynapseError, ValueError):
    """Configuration rejected; ``violations`` lists every problem found."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations) if violations else [message]


class NonPositiveParameter(ValidationError):
    pass


class ReceptorOverflow(ValidationError):
    pass


class EmptySchedule(ValidationError):
    pass


class ParseError(ValidationError):
    pass


class OutOfDomain(SynapseError, ValueError):
    pass


class PlacementInfeasible(SynapseError, ValueError):
    pass


class GridMismatch(SynapseError, ValueError):
    pass


class NoOverlap(SynapseError, ValueError):
    pass


class SolverError(SynapseError, RuntimeError):
    pass


class NonFiniteState(SolverError):
    pass


class Divergence(SolverError):
    pass


class NonMonotoneConvergence(SolverError):
    pass


class ConfigWarning(UserWarning):
    """Non-fatal configuration advisories (grid snapping, stability margin)."""
