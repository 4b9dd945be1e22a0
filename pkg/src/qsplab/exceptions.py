"""Exception and warning classes raised across the package."""


class QSPError(Exception):
    """Base class for all package errors."""


class GridMismatchError(QSPError, ValueError):
    """A field does not live on the grid it was paired with."""


class ConfigError(QSPError, ValueError):
    """Invalid parameters or configuration file contents."""


class NonFiniteEncountered(QSPError, FloatingPointError):
    """A solver produced NaN or inf values."""


class MaxIterExceeded(QSPError):
    """Iterative solver ran out of iterations; ``result`` holds the best iterate."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class BracketError(QSPError):
    """A 1-D maximizer could not bracket its target."""


class StepCollapse(QSPError):
    """Armijo backtracking was exhausted without an acceptable step."""


class NonConvergence(QSPError):
    """Mountain-pass iteration stopped without meeting its tolerance."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ThresholdViolation(UserWarning):
    """A computed level is not below the compactness/boundedness thresholds."""
