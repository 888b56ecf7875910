"""Dense small-matrix kernels shared by the solver and the analysis."""

import logging
import math

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg as sla
from scipy.sparse.linalg import ArpackNoConvergence, eigs

from .errors import ConvergenceError, ModelError, SingularMatrixError

logger = logging.getLogger(__name__)

Matrix = NDArray[np.float64]

DENSE_EIG_LIMIT = 256
RCOND_THRESHOLD = 1e-12
ARPACK_MAXITER = 10_000
_RESCALE_ABOVE = 1e100


def as_matrix(m: ArrayLike) -> Matrix:
    """Return ``m`` as a finite 2-D float64 array."""
    try:
        arr = np.asarray_chkfinite(m, dtype=np.float64)
    except ValueError as e:
        raise ModelError(f"matrix has non-finite entries: {e}") from e
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.size == 0:
        raise ModelError(f"expected a nonempty 2-D matrix, got shape {arr.shape}")
    return arr


def _square(m: ArrayLike) -> Matrix:
    arr = as_matrix(m)
    if arr.shape[0] != arr.shape[1]:
        raise ModelError(f"expected a square matrix, got shape {arr.shape}")
    return arr


def kron(a: ArrayLike, b: ArrayLike) -> Matrix:
    """Kronecker product; block (i, j) of the result is ``a[i, j] * b``."""
    return np.kron(as_matrix(a), as_matrix(b))


def spectral_radius(m: ArrayLike, tol: float = 1e-10) -> float:
    """Largest eigenvalue modulus of a square matrix.

    Matrices up to ``DENSE_EIG_LIMIT`` rows use a dense eigenvalue
    computation. Larger ones fall back to ARPACK, where ``tol`` is the
    relative accuracy requested for the dominant eigenvalue.
    """
    if tol <= 0:
        raise ModelError(f"tol must be positive, got {tol}")
    arr = _square(m)
    n = arr.shape[0]
    if n <= DENSE_EIG_LIMIT:
        try:
            values = sla.eigvals(arr)
        except np.linalg.LinAlgError as e:
            raise ConvergenceError(f"dense eigenvalue solver failed: {e}") from e
        return float(np.max(np.abs(values)))

    logger.debug("spectral radius of %dx%d matrix via ARPACK", n, n)
    try:
        values = eigs(arr, k=1, which="LM", tol=tol, maxiter=ARPACK_MAXITER,
                      return_eigenvectors=False)
    except ArpackNoConvergence as e:
        raise ConvergenceError(
            f"dominant eigenvalue did not converge within {ARPACK_MAXITER} iterations"
        ) from e
    return float(np.max(np.abs(values)))


def inverse(m: ArrayLike) -> Matrix:
    """Inverse of a square matrix; raises SingularMatrixError when ill-conditioned."""
    arr = _square(m)
    cond = np.linalg.cond(arr)
    if not np.isfinite(cond) or 1.0 / cond < RCOND_THRESHOLD:
        raise SingularMatrixError(
            f"matrix is singular to working precision (condition number {cond:.3e})"
        )
    return np.linalg.inv(arr)


def inf_norm(m: ArrayLike) -> float:
    """Maximum absolute row sum."""
    return float(np.linalg.norm(as_matrix(m), np.inf))


def power_inf_norms(m: ArrayLike, k_max: int) -> list[float]:
    """Return ``[‖M^0‖∞, ‖M^1‖∞, ..., ‖M^k_max‖∞]`` by repeated multiplication.

    The running power is rescaled whenever it grows past 1e100 so unstable
    matrices yield large (possibly infinite) norms instead of NaN.
    """
    arr = _square(m)
    if k_max < 0:
        raise ModelError(f"k_max must be nonnegative, got {k_max}")
    power = np.eye(arr.shape[0])
    log_scale = 0.0
    norms = [1.0]
    for _ in range(k_max):
        power = power @ arr
        norm = inf_norm(power)
        if norm > _RESCALE_ABOVE:
            power /= norm
            log_scale += math.log(norm)
            norm = 1.0
        if norm == 0.0:
            norms.append(0.0)
            continue
        exponent = math.log(norm) + log_scale
        norms.append(math.exp(exponent) if exponent < 709.0 else math.inf)
    return norms
