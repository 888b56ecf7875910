"""Exception types raised by async-dual-qp."""

import numpy as np


class DualQPError(Exception):
    """Base class for all async-dual-qp errors."""


class SingularMatrixError(DualQPError, np.linalg.LinAlgError):
    """A matrix that must be inverted is singular or too badly conditioned."""


class ConvergenceError(DualQPError, ArithmeticError):
    """A numerical routine did not converge within its iteration cap."""


class ModelError(DualQPError, ValueError):
    """An input violates the invariants of a problem, delay model or system."""


class ProblemFileError(DualQPError, ValueError):
    """A problem or delay file is malformed or has an unsupported version."""


class GenerationError(DualQPError, RuntimeError):
    """Random problem generation failed after the allowed retries."""
