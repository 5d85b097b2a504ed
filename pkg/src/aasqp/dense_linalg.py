"""Small dense linear-algebra layer.

Vectors and matrices are plain float64 numpy arrays. Every routine here is a
pure function of its inputs.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .exceptions import NoConvergence, NotPositiveDefinite, NotSymmetric

# relative pivot drop tolerance for rank-revealing QR
QR_DROP_TOL = 1e-12


def as_vec(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).reshape(-1)


def as_mat(a, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        m = m.reshape(rows if rows is not None else -1, cols if cols is not None else -1)
    return m


def _check_symmetric(m: np.ndarray, rtol: float) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotSymmetric(f"expected a square matrix, got shape {m.shape}")
    scale = 1.0 + np.max(np.abs(m), initial=0.0)
    if np.max(np.abs(m - m.T), initial=0.0) > rtol * scale:
        raise NotSymmetric("matrix is not symmetric within tolerance")


def cholesky(m) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == m``.

    Raises :class:`NotPositiveDefinite` when a pivot is not strictly positive.
    """
    m = as_mat(m)
    _check_symmetric(m, 1e-12)
    try:
        return np.linalg.cholesky(0.5 * (m + m.T))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None


def qr_least_squares(a, b, drop_tol: float = QR_DROP_TOL) -> np.ndarray:
    """Minimize ``||b - a @ x||_2`` with a column-pivoted Householder QR.

    Columns whose pivot falls below ``drop_tol`` times the largest pivot are
    dropped (their coefficient is set to zero), which keeps nearly collinear
    columns from blowing up the solution.
    """
    a = as_mat(a)
    b = as_vec(b)
    rows, cols = a.shape
    if rows < cols:
        raise ValueError("qr_least_squares needs rows >= cols")
    x = np.zeros(cols)
    if cols == 0:
        return x
    q, r, perm = scipy.linalg.qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag[0] == 0.0:
        return x
    rank = int(np.sum(diag > drop_tol * diag[0]))
    y = scipy.linalg.solve_triangular(r[:rank, :rank], q[:, :rank].T @ b)
    x[perm[:rank]] = y
    return x


def sym_eig(m) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix."""
    m = as_mat(m)
    _check_symmetric(m, 1e-10)
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    return w, v


def spectral_radius(m, max_iter: int = 10_000) -> float:
    """Largest eigenvalue modulus of a general square matrix.

    Uses the Hessenberg/real-Schur QR iteration from LAPACK; ``max_iter`` is kept
    for interface compatibility and only bounds the fallback power iteration.
    """
    m = as_mat(m)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"spectral_radius needs a square matrix, got {m.shape}")
    if m.size == 0:
        return 0.0
    try:
        return float(np.max(np.abs(np.linalg.eigvals(m))))
    except np.linalg.LinAlgError:
        pass
    rng = np.random.default_rng(0)
    x = rng.standard_normal(m.shape[0])
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(max_iter):
        y = m @ (m @ x)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        new = np.sqrt(ny)
        x = y / ny
        if abs(new - est) <= 1e-12 * max(new, 1.0):
            return float(new)
        est = new
    raise NoConvergence("power iteration did not converge")


def nullspace_basis(a, tol: float = 1e-12) -> np.ndarray:
    """Orthonormal basis of ``{d : a.T @ d = 0}`` for an ``n x k`` matrix ``a``."""
    a = as_mat(a)
    n = a.shape[0]
    if a.shape[1] == 0:
        return np.eye(n)
    q, r = np.linalg.qr(a, mode="complete")
    k = a.shape[1]
    return q[:, k:]
