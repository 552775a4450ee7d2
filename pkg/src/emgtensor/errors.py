"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class ResourceLimitError(MemoryError):
    pass


class NumericalFailure(ArithmeticError):
    pass


class SolverBreakdown(NumericalFailure):
    """Raised when a CG search direction is not a descent direction."""

    def __init__(self, message, iteration, direction=None):
        super().__init__(message)
        self.iteration = iteration
        self.direction = direction


class MissingArtifact(FileNotFoundError):
    pass


class ConfigError(ValueError):
    pass
