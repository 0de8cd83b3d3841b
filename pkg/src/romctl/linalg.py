"""Dense linear-algebra kernels used across the workbench.

Everything here operates on plain float64 numpy arrays. Matrices are small
(at most a few hundred rows/columns), so robustness and tight tolerances
matter more than scalability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LinalgError(RuntimeError):
    """Raised when an iterative decomposition or solver fails to converge."""


@dataclass
class SvdResult:
    """Singular value decomposition m = u @ diag(s) @ vt.

    u has orthonormal columns, vt orthonormal rows, s non-negative and
    non-increasing.
    """

    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray


@dataclass
class EigResult:
    """Eigendecomposition with unit-norm eigenvectors as columns of
    ``vectors``, sorted by descending eigenvalue magnitude."""

    values: np.ndarray
    vectors: np.ndarray


def _as_matrix(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    return m


def svd(m) -> SvdResult:
    """Full (thin) SVD of a dense matrix."""
    m = _as_matrix(m)
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise LinalgError(f"SVD did not converge: {exc}") from exc
    return SvdResult(u=u, s=s, vt=vt)


def truncated_svd(m, r: int) -> SvdResult:
    """Leading ``r`` singular triplets of ``m``."""
    m = _as_matrix(m)
    if not 1 <= r <= min(m.shape):
        raise ValueError(f"truncation rank r={r} out of range for shape {m.shape}")
    full = svd(m)
    return SvdResult(u=full.u[:, :r], s=full.s[:r], vt=full.vt[:r, :])


def pinv(m, tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD.

    Singular values below ``tol * s_max`` are treated as zero. The default
    tolerance follows the usual numerical-rank convention.
    """
    m = _as_matrix(m)
    if tol is None:
        tol = 1e-12 * max(m.shape)
    if tol < 0:
        raise ValueError("tol must be non-negative")
    res = svd(m)
    cutoff = tol * (res.s[0] if res.s.size else 0.0)
    inv_s = np.where(res.s > cutoff, 1.0 / np.where(res.s > 0, res.s, 1.0), 0.0)
    return (res.vt.T * inv_s) @ res.u.T


def eig(m) -> EigResult:
    """Eigendecomposition of a small real square matrix.

    Eigenpairs are sorted by descending |eigenvalue| and eigenvectors are
    normalized to unit 2-norm.
    """
    m = _as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"eig requires a square matrix, got {m.shape}")
    if m.shape[0] > 64:
        raise ValueError("eig is restricted to matrices of dimension <= 64")
    try:
        values, vectors = np.linalg.eig(m)
    except np.linalg.LinAlgError as exc:
        raise LinalgError(f"eigendecomposition did not converge: {exc}") from exc
    order = np.argsort(-np.abs(values), kind="stable")
    values = values[order]
    vectors = vectors[:, order]
    vectors = vectors / np.linalg.norm(vectors, axis=0, keepdims=True)
    return EigResult(values=values, vectors=vectors)


def lstsq(a, b) -> np.ndarray:
    """Minimum-norm least-squares solution of a @ x = b."""
    a = _as_matrix(a)
    b = np.asarray(b, dtype=np.float64)
    x, _, _, _ = np.linalg.lstsq(a, b, rcond=None)
    return x


def solve_dare(a, b, q, r, max_iter: int = 10_000, tol: float = 1e-12) -> np.ndarray:
    """Discrete algebraic Riccati equation solved by fixed-point iteration.

    Iterates P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA from P0 = Q until the
    update is below ``tol`` in max-norm. Adequate for the reduced dimensions
    used here (r_x <= 5).
    """
    a = _as_matrix(a)
    b = _as_matrix(b)
    q = _as_matrix(q)
    r = _as_matrix(r)
    p = q.copy()
    for _ in range(max_iter):
        btp = b.T @ p
        gain_term = np.linalg.solve(r + btp @ b, btp @ a)
        p_next = q + a.T @ p @ a - a.T @ p @ b @ gain_term
        p_next = 0.5 * (p_next + p_next.T)
        delta = np.max(np.abs(p_next - p))
        p = p_next
        if delta <= tol:
            return p
    raise LinalgError(
        f"DARE fixed-point iteration did not converge in {max_iter} steps "
        f"(last update {delta:.3e})"
    )


def dare_gain(a, b, q, r, p: np.ndarray | None = None) -> np.ndarray:
    """LQR feedback gain K = (R + B'PB)^-1 B'PA from the DARE solution."""
    if p is None:
        p = solve_dare(a, b, q, r)
    btp = np.asarray(b).T @ p
    return np.linalg.solve(np.asarray(r) + btp @ b, btp @ a)
