"""Exceptions raised across the lab (model, solvers, pipeline)."""


class LabError(Exception):
    """Base class for every error the lab raises on purpose."""


class InvalidArgumentError(LabError, ValueError):
    pass


class InvalidSpecError(LabError, ValueError):
    pass


class ConfigError(LabError, ValueError):
    pass


class UnsupportedDimensionError(LabError, ValueError):
    pass


class UnsupportedForwardError(LabError, ValueError):
    pass


class GridMismatchError(LabError, ValueError):
    pass


class NumericRangeError(LabError, ArithmeticError):
    def __init__(self, message: str, term: str = ""):
        super().__init__(message)
        self.term = term


class BlowUpError(LabError, RuntimeError):
    """Raised when a backward recursion produces NaN or values above the blow-up cap."""

    def __init__(self, message: str, step: int, node: int):
        super().__init__(f"{message} (first offending step={step}, node={node})")
        self.step = step
        self.node = node


class AveragingFailureError(LabError, RuntimeError):
    """The long-time average did not settle; `residuals` keeps the full trace."""

    def __init__(self, message: str, residuals: list[float]):
        super().__init__(message)
        self.residuals = list(residuals)


class PropertyFailureError(LabError, RuntimeError):
    pass
