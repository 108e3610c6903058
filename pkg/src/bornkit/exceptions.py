class NumericalError(RuntimeError):
    """A numerical routine failed (singular system, divergence, ...)."""


class ConvergenceError(NumericalError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residual, iterations):
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class InversionAborted(NumericalError):
    """An inversion run failed part-way; ``trace`` holds the completed iterations."""

    def __init__(self, trace, iteration, cause):
        super().__init__(f"{trace.method} aborted at iteration {iteration}: {cause}")
        self.trace = trace
        self.iteration = iteration
        self.cause = cause


class RefinerShapeError(ValueError):
    """A refiner mapping returned an array of the wrong shape."""
