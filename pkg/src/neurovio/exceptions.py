import numpy as np
from sklearn.exceptions import NotFittedError  # noqa: F401  re-exported


class NeuroVIOError(Exception):
    """Base class for package errors."""


class DimensionError(NeuroVIOError, ValueError):
    pass


class EmptyInputError(NeuroVIOError, ValueError):
    pass


class DegenerateQuaternionError(NeuroVIOError, ValueError):
    pass


class MalformedDatasetError(NeuroVIOError, ValueError):
    pass


class DegenerateViewError(NeuroVIOError, ValueError):
    pass


class NumericFault(NeuroVIOError, FloatingPointError):
    """Raised when a tensor operation produces NaN or Inf."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class NonConvergenceError(NeuroVIOError, RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SingularMatrixError(NeuroVIOError, np.linalg.LinAlgError):
    pass

