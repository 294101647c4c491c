"""Exception types raised across the package."""

from __future__ import annotations


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class GridError(ValueError):
    """Inconsistent or invalid time grids."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""


class FactorizationError(RuntimeError):
    """A covariance matrix could not be factorized, even after jitter."""


class HypothesisError(ValueError):
    """A model hypothesis (H.1)-(H.5) or the trace-class requirement fails.

    ``hypothesis`` holds the short tag, e.g. ``"H.3"``.
    """

    def __init__(self, hypothesis: str, message: str):
        self.hypothesis = hypothesis
        super().__init__(f"({hypothesis}) {message}")


class GramianConditionError(HypothesisError):
    def __init__(self, message: str, mode: int):
        self.mode = mode
        super().__init__("H.5", message)


class ConvergenceError(RuntimeError):
    """An iteration failed to reach tolerance; carries the residual history."""

    def __init__(self, message: str, residuals):
        self.residuals = list(residuals)
        super().__init__(message)


class PicardDivergenceError(ConvergenceError):
    pass


class SteeringDivergenceError(ConvergenceError):
    pass


class ConfigError(ValueError):
    """Configuration could not be parsed or violates model hypotheses.

    ``violations`` lists every problem found, not just the first.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
