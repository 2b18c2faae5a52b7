"""Exception types shared across the package."""


class FunnelsimError(Exception):
    """Base class for package-specific failures."""


class ConfigError(FunnelsimError):
    """Invalid configuration or inconsistent problem setup."""


class NumericalError(FunnelsimError):
    """A numerical operation produced an unusable result."""


class SolverError(FunnelsimError):
    """Optimization failed to reach the required tolerances.

    Carries the best iterate found so the caller can inspect how close
    the solver got.
    """

    def __init__(self, message, best=None, report=None):
        super().__init__(message)
        self.best = best
        self.report = report


class EstimationError(FunnelsimError):
    """Funnel estimation could not produce a usable result."""


class IndeterminateError(FunnelsimError):
    """A query has no defined answer for the given inputs."""
