"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class GeoXrayError(Exception):
    """Base class for library errors."""


class DomainError(GeoXrayError, ValueError):
    """A point lies outside the closed unit disk (or the metric's chart)."""


class TrappedRayError(GeoXrayError):
    """A geodesic did not reach the boundary within the step budget."""


class OutOfManifoldError(GeoXrayError):
    """A geodesic left M before the requested time."""

    def __init__(self, message: str, exit_time: float):
        super().__init__(message)
        self.exit_time = exit_time


class InversionFailureError(GeoXrayError):
    """Shooting for the inverse exponential map did not converge."""


class ConjugatePointError(GeoXrayError):
    """The Jacobi solution b vanished away from t = 0."""


class DivergenceRiskError(GeoXrayError):
    """Neumann series requested for an operator whose norm estimate is >= 1."""


class ConfigError(GeoXrayError):
    """Experiment configuration failed validation."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)
