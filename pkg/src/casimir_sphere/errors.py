"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input outside the supported domain (order limits, sign constraints)."""


class BracketingError(RuntimeError):
    """A root search failed to bracket or converge; carries the interval."""


class InvariantError(RuntimeError):
    """A mathematical invariant that should hold by construction was violated."""


class DivergenceError(RuntimeError):
    """Mode amplitudes exceeded the runaway guard during integration."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class StiffnessError(RuntimeError):
    """The adaptive integrator failed (step-size underflow or solver abort)."""


class PreconditionError(ValueError):
    """An operation was called in a state that violates its contract."""


class ConfigError(ValueError):
    """Invalid run configuration; message carries the offending key/line."""
