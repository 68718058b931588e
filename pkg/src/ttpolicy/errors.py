"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input outside the declared domain (bounds, shapes, index ranges)."""


class DataError(RuntimeError):
    """Numerical data is unusable (non-finite oracle values, divergence)."""


class SolverAbort(RuntimeError):
    """A solver gave up (divergence detected, unreachable target)."""


class ConfigError(ValueError):
    """Malformed experiment configuration."""
