"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where an operation is defined."""


class PreconditionError(ValueError):
    """Inputs are well-formed but do not meet an operation's precondition."""


class TruncationBreach(RuntimeError):
    """Total mass reached the abort fraction of the level truncation u_max."""


class NumericalBlowup(RuntimeError):
    """A non-finite value appeared in the state."""


class EnsembleAbort(RuntimeError):
    """Too many replicas of an ensemble aborted."""
