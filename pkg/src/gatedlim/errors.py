"""Exception types shared across the package."""


class GatedLimError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GatedLimError, ValueError):
    """A system configuration is malformed or violates a validity bound."""


class SaturationError(GatedLimError):
    """The requested operating point has no stationary regime.

    Raised by the analytic path when the offered load can not be cleared
    by the configured window limit. Simulation does not raise this: a
    saturated scenario simply runs and reports growing queues.
    """


class ModelError(GatedLimError):
    """The analytic model does not apply to the given configuration.

    Typical causes: heterogeneous per-node rates (the closed forms assume
    identical nodes) or a window limit too large for the chain solver.
    """


class ConvergenceError(GatedLimError):
    """A numerical routine failed to converge.

    Carries enough context to diagnose the failure: the last iterate
    trace and the worst residual seen.
    """

    def __init__(self, message, trace=None, residual=None):
        super().__init__(message)
        self.trace = trace
        self.residual = residual
