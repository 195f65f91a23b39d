"""Dense complex linear algebra used by the sensing pipeline.

Matrices are plain ``numpy`` complex arrays. Every routine accepts a single
matrix of shape ``(n, m)`` or a stack of shape ``(..., n, m)`` and operates on
the trailing two axes, so whole datasets of 4x4 covariances can be processed
in one call.

The Hermitian eigensolver is a cyclic Jacobi iteration written here rather
than delegated to LAPACK; the matrices involved are tiny and the rotation
sequence is easy to audit.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

HERMITIAN_TOL = 1e-10
MAX_SWEEPS = 100


class NumericalError(RuntimeError):
    """Raised when an iterative kernel fails to converge."""


class EigenResult(NamedTuple):
    eigenvalues: np.ndarray  # (..., n) real, descending
    eigenvectors: np.ndarray  # (..., n, n) unitary, column i pairs with eigenvalue i


def _as_matrix_stack(a) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim < 2:
        raise ValueError(f"expected a matrix or stack of matrices, got shape {a.shape}")
    return a


def conj_t(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose over the trailing two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def is_hermitian(a, tol: float = HERMITIAN_TOL) -> bool:
    a = _as_matrix_stack(a)
    if a.shape[-1] != a.shape[-2]:
        return False
    return bool(np.all(np.abs(a - conj_t(a)) <= tol))


def scm(y, l: int | None = None) -> np.ndarray:
    """Sample covariance ``(1/L) Y Y^H`` of an ``N x L`` observation block.

    Args:
        y: Observations, shape ``(..., N, L)``; columns are samples.
        l: Sample count. Must equal the number of columns when given.

    Returns:
        Hermitian PSD array of shape ``(..., N, N)``.
    """
    y = _as_matrix_stack(y)
    n_cols = y.shape[-1]
    if l is None:
        l = n_cols
    if l < 1 or l != n_cols:
        raise ValueError(f"sample count {l} does not match {n_cols} columns")
    r = (y @ conj_t(y)) / l
    # exact Hermitian symmetry; BLAS accumulation order can differ per triangle
    return 0.5 * (r + conj_t(r))


def frobenius_norm(a) -> np.ndarray | float:
    a = _as_matrix_stack(a)
    out = np.sqrt(np.sum(np.abs(a) ** 2, axis=(-2, -1)))
    return float(out) if out.ndim == 0 else out


def _off_norm_sq(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    mask = ~np.eye(n, dtype=bool)
    return np.sum(np.abs(a[..., mask]) ** 2, axis=-1)


def _jacobi(a: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi on a stack ``(B, n, n)`` of Hermitian matrices (in place)."""
    b, n, _ = a.shape
    v = np.broadcast_to(np.eye(n, dtype=complex), (b, n, n)).copy()
    scale = np.maximum(np.sum(np.abs(a) ** 2, axis=(-2, -1)), np.finfo(float).tiny)
    for _ in range(MAX_SWEEPS):
        off = _off_norm_sq(a)
        if np.all(off <= (tol**2) * scale):
            return np.real(np.diagonal(a, axis1=-2, axis2=-1)).copy(), v
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[:, p, q]
                mag = np.abs(apq)
                active = mag > 1e-300
                phase = np.where(active, apq / np.where(active, mag, 1.0), 1.0)
                app = np.real(a[:, p, p])
                aqq = np.real(a[:, q, q])
                theta = np.where(active, 0.5 * np.arctan2(2.0 * mag, aqq - app), 0.0)
                c = np.cos(theta)
                s = np.sin(theta)
                # G restricted to (p, q) is diag(1, conj(phase)) @ [[c, s], [-s, c]]
                g = np.empty((b, 2, 2), dtype=complex)
                g[:, 0, 0] = c
                g[:, 0, 1] = s
                g[:, 1, 0] = -s * np.conj(phase)
                g[:, 1, 1] = c * np.conj(phase)
                idx = [p, q]
                a[:, :, idx] = a[:, :, idx] @ g
                a[:, idx, :] = conj_t(g) @ a[:, idx, :]
                a[:, p, q] = 0.0
                a[:, q, p] = 0.0
                v[:, :, idx] = v[:, :, idx] @ g
    raise NumericalError(f"Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps")


def hermitian_eig(a, tol: float = 1e-14) -> EigenResult:
    """Eigendecomposition of a Hermitian matrix (or stack of them).

    The input is validated against ``HERMITIAN_TOL`` and then symmetrized as
    ``(A + A^H)/2``. Eigenvalues come back sorted descending, ties kept in
    their original diagonal order.

    Raises:
        ValueError: the input is not square Hermitian.
        NumericalError: no convergence within ``MAX_SWEEPS`` sweeps.
    """
    a = _as_matrix_stack(a)
    if a.shape[-1] != a.shape[-2]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    if not is_hermitian(a):
        raise ValueError("matrix is not Hermitian within tolerance")
    lead = a.shape[:-2]
    n = a.shape[-1]
    work = (0.5 * (a + conj_t(a))).astype(complex).reshape(-1, n, n)
    w, v = _jacobi(work, tol)
    order = np.argsort(-w, axis=-1, kind="stable")
    w = np.take_along_axis(w, order, axis=-1)
    v = np.take_along_axis(v, order[:, None, :], axis=-1)
    return EigenResult(w.reshape(*lead, n), v.reshape(*lead, n, n))


def singular_values_hermitian(a) -> np.ndarray:
    """Singular values of a Hermitian matrix, i.e. ``|eigenvalues|`` descending."""
    w = np.abs(hermitian_eig(a).eigenvalues)
    order = np.argsort(-w, axis=-1, kind="stable")
    return np.take_along_axis(w, order, axis=-1)
