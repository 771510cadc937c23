"""Dense linear algebra primitives used by every other module.

Matrices are 2-D float64 numpy arrays in row-major order. Public operations
validate their inputs (shape, finiteness) and return finite results; they are
pure functions and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import NumericalError, ShapeError, ValidationError

Matrix = np.ndarray

JACOBI_MAX_SWEEPS = 100
JACOBI_OFF_TOL = 1e-12
SYMMETRY_TOL = 1e-10


def as_matrix(x, name: str = "matrix") -> Matrix:
    """Coerce to a 2-D float64 array with finite entries, or raise."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={a.ndim}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"{name} must have at least one row and one column, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} contains non-finite entries")
    return a


def as_vector(x, name: str = "vector") -> np.ndarray:
    """Coerce to a 1-D float64 array with finite entries, or raise."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got ndim={v.ndim}")
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} contains non-finite entries")
    return v


class SeededRng:
    """Deterministic random source; equal seeds yield identical streams."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, rows: int, cols: int, scale: float = 1.0) -> Matrix:
        """Seeded Gaussian matrix with standard deviation `scale`."""
        return scale * self._gen.standard_normal((rows, cols))

    def normal_vector(self, n: int, scale: float = 1.0) -> np.ndarray:
        return scale * self._gen.standard_normal(n)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product A @ B."""
    a = as_matrix(a, "A")
    b = as_matrix(b, "B")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}: inner dimensions differ")
    return a @ b


def row_softmax(a: Matrix) -> Matrix:
    """Row-wise softmax, stabilised by per-row max subtraction."""
    a = as_matrix(a, "A")
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def hadamard(a: Matrix, b: Matrix) -> Matrix:
    """Elementwise product of two same-shape matrices."""
    a = as_matrix(a, "A")
    b = as_matrix(b, "B")
    if a.shape != b.shape:
        raise ShapeError(f"hadamard requires identical shapes, got {a.shape} and {b.shape}")
    return a * b


def silu(a: Matrix) -> Matrix:
    """Elementwise x * sigmoid(x)."""
    a = as_matrix(a, "A")
    return a * expit(a)


def second_moment(x: Matrix) -> Matrix:
    """Unnormalised second moment X.T @ X, symmetrised exactly."""
    x = as_matrix(x, "X")
    m = x.T @ x
    # average with the transpose so the result equals its own transpose bit-for-bit
    return (m + m.T) / 2.0


@dataclass
class SymmetricEigen:
    """Eigendecomposition of a symmetric matrix.

    `eigenvalues` are sorted descending; the columns of `eigenvectors` are the
    matching unit eigenvectors, sign-fixed so the largest-magnitude entry of
    each column is positive.
    """

    eigenvalues: np.ndarray
    eigenvectors: Matrix


def _fix_column_signs(u: Matrix) -> Matrix:
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def _off_diagonal_norm(a: Matrix) -> float:
    off = a.copy()
    np.fill_diagonal(off, 0.0)
    return float(np.linalg.norm(off))


def symmetric_eig(c: Matrix) -> SymmetricEigen:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps run until the off-diagonal Frobenius norm drops below 1e-12 (or
    below the float64 floor 1e-15 * ||C||_F for large-norm inputs), capped at
    100 sweeps. Raises NumericalError with the residual if the cap is hit
    while the residual is still significant.
    """
    c = as_matrix(c, "C")
    n, m = c.shape
    if n != m:
        raise ShapeError(f"eigendecomposition requires a square matrix, got {c.shape}")
    if np.max(np.abs(c - c.T)) > SYMMETRY_TOL:
        raise ValidationError(f"matrix is not symmetric within {SYMMETRY_TOL}")
    if n == 1:
        return SymmetricEigen(eigenvalues=c[0].copy(), eigenvectors=np.ones((1, 1)))

    a = (c + c.T) / 2.0
    u = np.eye(n)
    scale = float(np.linalg.norm(c))
    tol = max(JACOBI_OFF_TOL, 1e-15 * scale)
    skip = tol / (2.0 * n)

    for _ in range(JACOBI_MAX_SWEEPS):
        off = _off_diagonal_norm(a)
        if off <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= skip:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                cs = 1.0 / np.sqrt(1.0 + t * t)
                sn = t * cs
                # A <- J.T A J with the rotation acting on rows/columns p, q
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = cs * col_p - sn * col_q
                a[:, q] = sn * col_p + cs * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = cs * row_p - sn * row_q
                a[q, :] = sn * row_p + cs * row_q
                u_p, u_q = u[:, p].copy(), u[:, q].copy()
                u[:, p] = cs * u_p - sn * u_q
                u[:, q] = sn * u_p + cs * u_q

    off = _off_diagonal_norm(a)
    if off > 1e-8 * max(1.0, scale):
        raise NumericalError(
            f"Jacobi eigensolve did not converge in {JACOBI_MAX_SWEEPS} sweeps, "
            f"off-diagonal residual {off:.3e}"
        )

    eigenvalues = np.diag(a).copy()
    order = np.argsort(-eigenvalues, kind="stable")
    return SymmetricEigen(
        eigenvalues=eigenvalues[order],
        eigenvectors=_fix_column_signs(u[:, order]),
    )


def random_orthogonal(n: int, rng: SeededRng) -> Matrix:
    """Orthogonal matrix built by orthonormalising a seeded Gaussian matrix."""
    if n < 1:
        raise ValidationError(f"orthogonal matrix size must be >= 1, got {n}")
    g = rng.normal(n, n)
    q, r = np.linalg.qr(g)
    # fixing column signs by R's diagonal makes the construction deterministic
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d
