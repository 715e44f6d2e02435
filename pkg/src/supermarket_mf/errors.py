"""Exception and warning types raised across the package."""


class StabilityError(ValueError):
    """Model parameters lie outside the stable region (load >= 1)."""


class InstabilityError(RuntimeError):
    """A forward tail recursion stopped decaying."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap.

    The last iterate and its residuals are kept so callers can inspect how
    far the solver got.
    """

    def __init__(self, message, iterate=None, residuals=None):
        super().__init__(message)
        self.iterate = iterate
        self.residuals = residuals


class IntegrationError(RuntimeError):
    """The ODE integrator could not continue; ``last_state`` is the last accepted state."""

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class SimulationError(RuntimeError):
    pass


class ModelFileError(ValueError):
    pass


class TruncationWarning(UserWarning):
    """Too much mass sits on the truncated boundary levels."""
