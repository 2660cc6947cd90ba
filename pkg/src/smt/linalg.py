"""Dense symmetric-matrix utilities used by every solver in the package.

All functions are pure; nothing here keeps state between calls.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyBatch, NonFinite, NonSymmetric, NotPositiveDefinite


@dataclass(frozen=True)
class SymEigResult:
    """Eigendecomposition of a symmetric matrix.

    eigenvalues are sorted ascending; column i of ``eigenvectors`` pairs with
    ``eigenvalues[i]``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        Q = self.eigenvectors
        return (Q * self.eigenvalues) @ Q.T


@dataclass(frozen=True)
class MomentMatrix:
    """Second moment (or covariance) of a coefficient stream, plus the ridge
    that was added to its diagonal."""

    matrix: np.ndarray
    sample_count: int
    ridge: float


def sym_eig(M: np.ndarray, rel_tol: float = 1e-9) -> SymEigResult:
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending.

    Raises NonFinite on NaN/Inf entries and NonSymmetric when the asymmetry
    exceeds ``rel_tol`` relative to the matrix norm.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NonSymmetric(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NonFinite("matrix contains NaN or Inf entries")
    scale = np.linalg.norm(M)
    asym = np.linalg.norm(M - M.T)
    if asym > rel_tol * max(scale, 1.0):
        raise NonSymmetric(f"asymmetry {asym:.3e} exceeds tolerance")
    w, Q = np.linalg.eigh(0.5 * (M + M.T))
    return SymEigResult(eigenvalues=w, eigenvectors=Q)


def inv_sqrt(M: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Inverse square root of a symmetric PSD matrix.

    Returns S with S @ (M + ridge*I) @ S ~= I.  Raises NotPositiveDefinite
    when the ridged matrix has a non-positive eigenvalue.
    """
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    M = np.asarray(M, dtype=float)
    res = sym_eig(M + ridge * np.eye(M.shape[0]))
    if res.eigenvalues[0] <= 0:
        raise NotPositiveDefinite(
            f"smallest eigenvalue {res.eigenvalues[0]:.3e} is not positive"
        )
    Q = res.eigenvectors
    S = (Q / np.sqrt(res.eigenvalues)) @ Q.T
    return 0.5 * (S + S.T)


def inv_psd(M: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix via eigendecomposition."""
    M = np.asarray(M, dtype=float)
    res = sym_eig(M + ridge * np.eye(M.shape[0]))
    if res.eigenvalues[0] <= 0:
        raise NotPositiveDefinite(
            f"smallest eigenvalue {res.eigenvalues[0]:.3e} is not positive"
        )
    Q = res.eigenvectors
    Minv = (Q / res.eigenvalues) @ Q.T
    return 0.5 * (Minv + Minv.T)


def default_ridge(M: np.ndarray) -> float:
    """Default diagonal regularization: 1e-6 * trace / dim.

    Sparse non-negative codes make the coefficient second moment
    rank-deficient, so some ridge is almost always needed downstream.
    """
    n = M.shape[0]
    return 1e-6 * float(np.trace(M)) / n if n else 0.0


def second_moment(A: np.ndarray, ridge: float = 0.0, center: bool = False) -> MomentMatrix:
    """Second moment (1/T) A A^T (+ ridge*I) of a coefficient matrix.

    ``A`` has one coefficient vector per column.  When ``center`` is set the
    row means are subtracted first, yielding the covariance proper.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise EmptyBatch(f"expected a 2-D coefficient matrix, got ndim={A.ndim}")
    T = A.shape[1]
    if T == 0:
        raise EmptyBatch("coefficient matrix has no columns")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    if center:
        A = A - A.mean(axis=1, keepdims=True)
    V = (A @ A.T) / T
    V = 0.5 * (V + V.T)
    if ridge:
        V = V + ridge * np.eye(A.shape[0])
    return MomentMatrix(matrix=V, sample_count=T, ridge=float(ridge))
