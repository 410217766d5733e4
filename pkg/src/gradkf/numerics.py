"""Small dense linear-algebra kernel and a central-difference gradient oracle.

Matrices and vectors are plain ``numpy.ndarray`` values (2-D and 1-D
float64).  Every entry point checks shapes and finiteness so that a bad
value is reported where it enters rather than several steps later.
"""
from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.linalg import cho_solve

__all__ = [
    "DimensionError",
    "NonFiniteError",
    "NotPositiveDefiniteError",
    "as_matrix",
    "as_vector",
    "matmul",
    "solve_spd",
    "spd_inverse",
    "is_psd",
    "symmetrize",
    "power_iteration",
    "finite_diff_grad",
    "finite_diff_matrix_grad",
    "DEFAULT_EPS",
]

DEFAULT_EPS = 1e-5


class DimensionError(ValueError):
    """Raised when operand shapes do not conform."""

    def __init__(self, message, *shapes):
        self.shapes = shapes
        super().__init__(message)


class NonFiniteError(ValueError):
    """Raised when a NaN or infinity reaches an operation."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a weighting matrix is singular, indefinite or asymmetric."""


def _check_finite(a, name):
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{name} contains NaN or infinite entries")


def as_matrix(a, name="matrix") -> np.ndarray:
    """Coerce ``a`` to a finite 2-D float array with no empty axis."""
    m = np.asarray(a, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}", m.shape)
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionError(f"{name} must be non-empty, got shape {m.shape}", m.shape)
    _check_finite(m, name)
    return m


def as_vector(v, name="vector") -> np.ndarray:
    """Coerce ``v`` to a finite 1-D float array of length >= 1."""
    x = np.asarray(v, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {x.shape}", x.shape)
    if x.shape[0] < 1:
        raise DimensionError(f"{name} must be non-empty", x.shape)
    _check_finite(x, name)
    return x


def matmul(a, b) -> np.ndarray:
    """Matrix product with shape checking.

    ``b`` may be a matrix or a vector; the result has the matching rank.

    Raises
    ------
    DimensionError
        If ``a.cols != b.rows``; the message names both shapes.
    """
    a = as_matrix(a, "left operand")
    b_arr = np.asarray(b, dtype=float)
    b_arr = as_vector(b_arr, "right operand") if b_arr.ndim == 1 else as_matrix(b_arr, "right operand")
    if a.shape[1] != b_arr.shape[0]:
        raise DimensionError(
            f"cannot multiply shapes {a.shape} and {b_arr.shape}", a.shape, b_arr.shape
        )
    return a @ b_arr


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _cholesky(m: np.ndarray, sym_rtol: float) -> np.ndarray:
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {m.shape}", m.shape)
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.T)) > sym_rtol * scale:
        raise NotPositiveDefiniteError("matrix is not symmetric")
    try:
        return np.linalg.cholesky(symmetrize(m))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(
            "Cholesky factorization failed: weighting matrix is singular or indefinite"
        ) from exc


def _cho_solve(L: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    return cho_solve((L, True), rhs, check_finite=False)


def solve_spd(m, rhs, sym_rtol: float = 1e-10) -> np.ndarray:
    """Solve ``m @ v = rhs`` for symmetric positive-definite ``m``.

    Parameters
    ----------
    m : (n, n) array_like
        Symmetric positive-definite matrix.  Symmetry is checked to
        ``sym_rtol`` relative to the largest entry.
    rhs : (n,) or (n, k) array_like
        Right-hand side(s).

    Returns
    -------
    numpy.ndarray
        Solution with the same shape as ``rhs``.

    Raises
    ------
    NotPositiveDefiniteError
        If ``m`` is asymmetric or the Cholesky factorization fails.
    """
    m = as_matrix(m, "system matrix")
    r = np.asarray(rhs, dtype=float)
    r = as_vector(r, "rhs") if r.ndim <= 1 else as_matrix(r, "rhs")
    if r.shape[0] != m.shape[0]:
        raise DimensionError(
            f"system matrix {m.shape} does not match rhs {r.shape}", m.shape, r.shape
        )
    L = _cholesky(m, sym_rtol)
    return _cho_solve(L, r)


def spd_inverse(m, sym_rtol: float = 1e-10) -> np.ndarray:
    """Inverse of an SPD matrix through its Cholesky factor, re-symmetrized."""
    m = as_matrix(m, "matrix")
    L = _cholesky(m, sym_rtol)
    return symmetrize(_cho_solve(L, np.eye(m.shape[0])))


def is_psd(m, tol: float = 1e-10) -> bool:
    """True iff ``m`` is symmetric within ``tol`` and no eigenvalue is below ``-tol``."""
    m = as_matrix(m, "matrix")
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"is_psd needs a square matrix, got shape {m.shape}", m.shape)
    if np.max(np.abs(m - m.T)) > tol:
        return False
    return bool(np.linalg.eigvalsh(symmetrize(m))[0] >= -tol)


def power_iteration(m, n_iter: int = 20, v0=None) -> float:
    """Estimate the largest eigenvalue of a symmetric PSD matrix.

    Returns the Rayleigh quotient after ``n_iter`` multiplications, which
    never exceeds the true largest eigenvalue.
    """
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    if v0 is None:
        # fixed, generic start vector so results are reproducible
        v = 1.0 + 0.1 * np.arange(n, dtype=float)
    else:
        v = np.asarray(v0, dtype=float).copy()
    v /= np.linalg.norm(v)
    for _ in range(n_iter):
        w = m @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
    return float(v @ (m @ v))


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    Each coordinate is ``(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)``.

    Raises
    ------
    ValueError
        If ``eps`` is not positive.
    NonFiniteError
        If ``f`` returns a non-finite value at any probe point.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = as_vector(x, "x")
    grad = np.empty_like(x)
    for i in range(x.shape[0]):
        step = np.zeros_like(x)
        step[i] = eps
        hi = f(x + step)
        lo = f(x - step)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NonFiniteError(f"function is not finite near coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad


def finite_diff_matrix_grad(f: Callable[[np.ndarray], float], m, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Central-difference gradient with respect to a matrix argument.

    The matrix is flattened row-major, differentiated with
    :func:`finite_diff_grad`, and reshaped back.
    """
    m = as_matrix(m, "matrix")
    shape = m.shape
    flat = finite_diff_grad(lambda v: f(v.reshape(shape)), m.ravel(), eps)
    return flat.reshape(shape)
