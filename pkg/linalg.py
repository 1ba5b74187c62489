"""Small dense linear-algebra kernel shared by the model, storage and condition checkers.

Vectors and matrices are plain float ``numpy`` arrays; the helpers here only add the
validation (shape, finiteness) and error reporting the rest of the package relies on.
"""
import logging
import warnings
from typing import Callable, NamedTuple, Optional

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from errors import DiffPassError

logger = logging.getLogger(__name__)

Vec = np.ndarray
Mat = np.ndarray

MAX_EIG_DIMENSION = 64


class LinalgError(DiffPassError):
    """Base class for exceptions in this module."""
    pass


class ShapeError(LinalgError):
    """Raised when an operand has the wrong shape."""
    pass


class NonFiniteError(LinalgError):
    """Raised when an operand or an evaluated sample contains NaN or Inf."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class SingularMatrix(LinalgError):
    """Raised when a pivot falls below the singularity tolerance."""

    def __init__(self, message, pivot=None, point=None):
        super().__init__(message)
        self.pivot = pivot
        self.point = point


class EigenBounds(NamedTuple):
    lambda_min: float
    lambda_max: float
    asymmetry: float  # Frobenius norm of M - M^T before symmetrization


class LinearSolution(NamedTuple):
    x: np.ndarray
    condition: Optional[float]


def as_vec(values, name="vector") -> Vec:
    """Returns a finite 1-D float array."""
    vec = np.atleast_1d(np.asarray(values, dtype=float))
    if vec.ndim != 1:
        raise ShapeError(f"{name} must be one-dimensional, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise NonFiniteError(f"{name} contains NaN/Inf entries: {vec}")
    return vec


def as_mat(values, name="matrix") -> Mat:
    """Returns a finite 2-D float array (scalars become 1x1)."""
    mat = np.asarray(values, dtype=float)
    if mat.ndim == 0:
        mat = mat.reshape(1, 1)
    if mat.ndim != 2:
        raise ShapeError(f"{name} must be two-dimensional, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise NonFiniteError(f"{name} contains NaN/Inf entries")
    return mat


def sym(M: Mat) -> Mat:
    return 0.5 * (M + M.T)


def sym_eig_bounds(M, tol: float = 1e-9) -> EigenBounds:
    """Extremal eigenvalues of the symmetric part (M + M^T)/2.

    ``tol`` is the accuracy the caller certifies against; LAPACK's symmetric solver is
    accurate to machine precision relative to ||M||, so it is only used to flag matrices
    whose asymmetry exceeds it.
    """
    mat = as_mat(M)
    rows, cols = mat.shape
    if rows != cols:
        raise ShapeError(f"sym_eig_bounds needs a square matrix, got {mat.shape}")
    if rows > MAX_EIG_DIMENSION:
        raise ShapeError(f"sym_eig_bounds supports dimension <= {MAX_EIG_DIMENSION}, got {rows}")

    asymmetry = float(np.linalg.norm(mat - mat.T))
    if asymmetry > tol:
        logger.debug(f"Symmetrizing matrix with asymmetry {asymmetry:.3e}")

    eigenvalues = scipy.linalg.eigh(sym(mat), eigvals_only=True, check_finite=False)
    return EigenBounds(float(eigenvalues[0]), float(eigenvalues[-1]), asymmetry)


def solve_linear(A, b, pivot_tolerance: float = 1e-12, estimate_condition: bool = False) -> LinearSolution:
    """Solves A x = b by partial-pivot LU; ``b`` may be a vector or a matrix of right-hand sides.

    The 1-norm condition number is estimated only when ``estimate_condition`` is set;
    otherwise ``condition`` is None.
    """
    mat = as_mat(A, "A")
    rows, cols = mat.shape
    if rows != cols:
        raise ShapeError(f"solve_linear needs a square matrix, got {mat.shape}")
    rhs = np.asarray(b, dtype=float)
    if rhs.shape[0] != rows:
        raise ShapeError(f"Right-hand side with {rhs.shape[0]} rows does not match A of size {rows}")
    if not np.all(np.isfinite(rhs)):
        raise NonFiniteError("Right-hand side contains NaN/Inf entries")

    if rows == 1:
        pivot = mat[0, 0]
        if pivot == 0.0:
            raise SingularMatrix("Scalar matrix is zero", pivot=0.0)
        return LinearSolution(rhs / pivot, 1.0 if estimate_condition else None)

    scale = float(np.abs(mat).sum(axis=1).max())
    with warnings.catch_warnings():
        # exact zero pivots are reported below as SingularMatrix
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(mat, check_finite=False)

    smallest = float(np.abs(np.diag(lu)).min())
    if smallest <= pivot_tolerance * scale:
        raise SingularMatrix(
            f"Matrix is singular within pivot tolerance (|pivot| = {smallest:.3e}, ||A|| = {scale:.3e})",
            pivot=smallest)

    x = scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
    condition = None
    if estimate_condition:
        rcond, _ = lapack.dgecon(lu, float(np.abs(mat).sum(axis=0).max()), norm='1')
        condition = float(np.inf) if rcond == 0.0 else float(1.0 / rcond)
    return LinearSolution(x, condition)


def finite_diff_jacobian(fn: Callable[[Vec], Vec], x, h_scale: float = 1e-5) -> Mat:
    """Central-difference Jacobian with per-coordinate step h_i = h_scale * (1 + |x_i|)."""
    x = as_vec(x, "x")
    columns = []
    for i in range(x.size):
        h = h_scale * (1.0 + abs(x[i]))
        forward = x.copy()
        backward = x.copy()
        forward[i] += h
        backward[i] -= h
        f_plus = np.atleast_1d(np.asarray(fn(forward), dtype=float))
        f_minus = np.atleast_1d(np.asarray(fn(backward), dtype=float))
        if not (np.all(np.isfinite(f_plus)) and np.all(np.isfinite(f_minus))):
            bad = forward if not np.all(np.isfinite(f_plus)) else backward
            raise NonFiniteError(f"Function returned NaN/Inf at sample point {bad}", point=bad)
        columns.append((f_plus - f_minus) / (2.0 * h))
    return np.column_stack(columns) if columns else np.zeros((0, 0))
