#!/usr/bin/env python3
"""
Small dense linear algebra kernel

Matrices are numpy arrays (row-major, real or complex). Everything here works
on the s x s coefficient matrices of the Peer methods, so sizes are tiny and
eigenvalues for n <= 3 come from the characteristic polynomial in closed form.
"""

import logging
from typing import Union

import numpy as np
import scipy.linalg

from errors import DimensionMismatch, NonFiniteValue, SingularMatrix

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, list, tuple]

PIVOT_TOL = 1e-14
EIGEN_RESIDUAL_TOL = 1e-9


def as_matrix(values: ArrayLike, name: str = "matrix") -> np.ndarray:
    """
    Validate and convert to a 2-D array

    Args:
        values: nested sequence or array
        name: label used in error messages

    Returns:
        np.ndarray with ndim == 2, real dtype float64 or complex128
    """
    matrix = np.asarray(values)
    if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 1:
        raise DimensionMismatch(f"{name} must be a non-empty 2-D matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise NonFiniteValue(f"{name} has NaN or Inf entries")
    if np.iscomplexobj(matrix):
        return matrix.astype(np.complex128)
    return matrix.astype(np.float64)


def _require_square(matrix: np.ndarray, name: str) -> None:
    if matrix.shape[-1] != matrix.shape[-2]:
        raise DimensionMismatch(f"{name} must be square, got shape {matrix.shape}")


def matrix_inf_norm(matrix: ArrayLike) -> float:
    """Maximum absolute row sum"""
    matrix = np.atleast_2d(np.asarray(matrix))
    return float(np.max(np.sum(np.abs(matrix), axis=-1)))


def solve_dense(a: ArrayLike, rhs: ArrayLike) -> np.ndarray:
    """
    Solve A X = RHS by LU with partial pivoting

    Raises SingularMatrix when a pivot falls below 1e-14 * ||A||_inf.
    A 1-D right-hand side gives a 1-D solution.
    """
    a = as_matrix(a, "A")
    _require_square(a, "A")
    rhs = np.asarray(rhs)
    vector_rhs = rhs.ndim == 1
    rhs2 = rhs.reshape(-1, 1) if vector_rhs else rhs
    if rhs2.shape[0] != a.shape[0]:
        raise DimensionMismatch(f"RHS has {rhs2.shape[0]} rows, A has {a.shape[0]}")

    scale = matrix_inf_norm(a)
    lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    smallest_pivot = float(np.min(np.abs(np.diag(lu))))
    if scale == 0.0 or smallest_pivot < PIVOT_TOL * scale:
        raise SingularMatrix(f"pivot {smallest_pivot:.3e} below {PIVOT_TOL:.0e} * ||A|| = {scale:.3e}")

    solution = scipy.linalg.lu_solve((lu, piv), rhs2, check_finite=False)
    return solution.ravel() if vector_rhs else solution


def inverse(a: ArrayLike) -> np.ndarray:
    a = as_matrix(a, "A")
    return solve_dense(a, np.eye(a.shape[0], dtype=a.dtype))


def characteristic_polynomial(matrices: np.ndarray) -> np.ndarray:
    """
    Monic characteristic polynomial coefficients, highest degree first

    Works on a stack (..., n, n) and returns (..., n + 1).
    """
    matrices = np.asarray(matrices)
    n = matrices.shape[-1]
    batch = matrices.shape[:-2]
    coefficients = np.zeros(batch + (n + 1,), dtype=np.complex128)
    coefficients[..., 0] = 1.0
    trace = np.trace(matrices, axis1=-2, axis2=-1)
    if n == 1:
        coefficients[..., 1] = -matrices[..., 0, 0]
    elif n == 2:
        coefficients[..., 1] = -trace
        coefficients[..., 2] = np.linalg.det(matrices)
    elif n == 3:
        trace_sq = np.trace(matrices @ matrices, axis1=-2, axis2=-1)
        coefficients[..., 1] = -trace
        coefficients[..., 2] = 0.5 * (trace * trace - trace_sq)
        coefficients[..., 3] = -np.linalg.det(matrices)
    else:
        flat = matrices.reshape((-1, n, n))
        coefficients = np.array([np.poly(m) for m in flat], dtype=np.complex128).reshape(batch + (n + 1,))
    return coefficients


def _polish_roots(coefficients: np.ndarray, roots: np.ndarray, steps: int = 2) -> np.ndarray:
    """Newton steps on the polynomial, kept only where they reduce |p|"""
    degree = coefficients.shape[-1] - 1
    derivative = coefficients[..., :-1] * np.arange(degree, 0, -1)
    for _ in range(steps):
        value = _horner(coefficients, roots)
        slope = _horner(derivative, roots)
        safe = np.abs(slope) > 0
        step = np.where(safe, value / np.where(safe, slope, 1.0), 0.0)
        candidate = roots - step
        better = np.abs(_horner(coefficients, candidate)) < np.abs(value)
        roots = np.where(better, candidate, roots)
    return roots


def _horner(coefficients: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate polynomials (..., d+1) at points (..., k) broadcasting over the batch"""
    result = np.zeros(points.shape, dtype=np.complex128)
    for j in range(coefficients.shape[-1]):
        result = result * points + coefficients[..., j:j + 1]
    return result


def _quadratic_roots(b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Roots of x^2 + b x + c without cancellation"""
    disc = np.sqrt(b * b - 4.0 * c + 0j)
    plus = -b + disc
    minus = -b - disc
    big = np.where(np.abs(plus) >= np.abs(minus), plus, minus) / 2.0
    nonzero = np.abs(big) > 0
    small = np.where(nonzero, c / np.where(nonzero, big, 1.0), 0.0)
    return np.stack([big, small], axis=-1)


def _cubic_roots(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Roots of x^3 + a x^2 + b x + c (Cardano, branch chosen by the larger radicand)"""
    delta0 = a * a - 3.0 * b
    delta1 = 2.0 * a ** 3 - 9.0 * a * b + 27.0 * c
    root_term = np.sqrt(delta1 * delta1 - 4.0 * delta0 ** 3 + 0j)
    first = (delta1 + root_term) / 2.0
    second = (delta1 - root_term) / 2.0
    radicand = np.where(np.abs(first) >= np.abs(second), first, second)
    cube = np.power(radicand + 0j, 1.0 / 3.0)

    xi = np.exp(2j * np.pi / 3.0)
    roots = []
    for k in range(3):
        ck = cube * xi ** k
        nonzero = np.abs(ck) > 0
        correction = np.where(nonzero, delta0 / np.where(nonzero, ck, 1.0), 0.0)
        roots.append(-(a + ck + correction) / 3.0)
    return np.stack(roots, axis=-1)


def eig_small_batch(matrices: ArrayLike) -> np.ndarray:
    """
    Eigenvalues of a stack of small square matrices (..., n, n), n <= 4

    n <= 3 uses the closed-form roots of the characteristic polynomial,
    n = 4 numpy's eigvals; both get two Newton polishing steps.
    Order inside each matrix is unspecified.
    """
    matrices = np.asarray(matrices)
    if matrices.ndim < 2:
        raise DimensionMismatch(f"expected a matrix stack, got shape {matrices.shape}")
    _require_square(matrices, "M")
    n = matrices.shape[-1]
    if n > 4:
        raise DimensionMismatch(f"eig_small supports n <= 4, got n = {n}")

    coefficients = characteristic_polynomial(matrices)
    if n == 1:
        roots = -coefficients[..., 1:2]
    elif n == 2:
        roots = _quadratic_roots(coefficients[..., 1], coefficients[..., 2])
    elif n == 3:
        roots = _cubic_roots(coefficients[..., 1], coefficients[..., 2], coefficients[..., 3])
    else:
        roots = np.linalg.eigvals(matrices).astype(np.complex128)
    return _polish_roots(coefficients, roots)


def eigen_residual(matrix: ArrayLike, eigenvalues: ArrayLike) -> np.ndarray:
    """|det(M - lambda I)| via Horner on the characteristic polynomial"""
    coefficients = characteristic_polynomial(np.asarray(matrix))
    return np.abs(_horner(coefficients, np.asarray(eigenvalues, dtype=np.complex128)))


def eig_small(matrix: ArrayLike) -> np.ndarray:
    """
    Eigenvalues of one small matrix

    Returns:
        complex array sorted by descending modulus, ties by ascending argument
    """
    matrix = as_matrix(matrix, "M")
    _require_square(matrix, "M")
    n = matrix.shape[0]
    values = eig_small_batch(matrix[np.newaxis])[0]

    bound = EIGEN_RESIDUAL_TOL * (1.0 + matrix_inf_norm(matrix)) ** n
    worst = float(np.max(eigen_residual(matrix, values)))
    if worst > bound:
        logger.warning(f"⚠️ Eigenvalue residual {worst:.3e} exceeds {bound:.3e}")

    order = sorted(range(n), key=lambda i: (-round(abs(values[i]), 12), float(np.angle(values[i]))))
    return values[order]


def spectral_radius(matrix: ArrayLike) -> float:
    return float(np.max(np.abs(eig_small(matrix))))


def numeric_rank(matrix: ArrayLike, tol: float) -> int:
    """Number of singular values above tol * ||M||_inf"""
    if tol <= 0:
        raise ValueError("tol must be positive")
    matrix = as_matrix(matrix, "M")
    scale = matrix_inf_norm(matrix)
    if scale == 0.0:
        return 0
    singular_values = scipy.linalg.svdvals(matrix)
    return int(np.sum(singular_values > tol * scale))
