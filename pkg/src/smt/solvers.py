"""Non-negative sparse inference.

Variants:

* ``nn_lasso``: min 1/2 ||x - Phi a||^2 + lam ||a||_1, a >= 0
* ``weighted_nn_lasso``: min ||b - P a||^2 + lam z^T a, a >= 0
  (squared error without the 1/2 factor, as used for embedding inversion)
* ``temporal_regularized_infer``: nn_lasso plus a quadratic penalty pulling
  P a toward the linear prediction from the previous two timesteps
* ``knn_interpolate``: non-negative least squares on the K nearest landmarks

All solvers are accelerated proximal gradient (FISTA) with a non-negative
soft-threshold prox and a monotone fallback: an iterate that would increase
the objective is replaced by a plain proximal step, which cannot.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.optimize import nnls as _scipy_nnls

from .errors import DegenerateNeighborhood, DimensionMismatch


@dataclass
class SolverOptions:
    kkt_tol: float = 1e-6
    max_iters: int = 2000
    activation_floor: float = 1e-8
    # Precomputed Lipschitz constant of the smooth gradient; estimated by
    # power iteration when absent.
    lipschitz: Optional[float] = None
    check_every: int = 10


@dataclass
class SparseCode:
    """Non-negative coefficient vector plus its support set."""

    values: np.ndarray
    support: np.ndarray

    @classmethod
    def from_values(cls, values: np.ndarray, floor: float = 1e-8) -> "SparseCode":
        values = np.asarray(values, dtype=float)
        return cls(values=values, support=np.flatnonzero(values > floor))


@dataclass
class SolveReport:
    iterations: int
    final_objective: float
    kkt_violation: float
    converged: bool


def gram_lipschitz(M: np.ndarray, iters: int = 50) -> float:
    """Largest eigenvalue of M^T M, estimated by power iteration."""
    m = M.shape[1]
    v = np.ones(m) / np.sqrt(m)
    lam = 0.0
    for _ in range(iters):
        w = M.T @ (M @ v)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return lam


def _atoms(dictionary) -> np.ndarray:
    # Accepts a Dictionary or a plain array of atom columns.
    return np.asarray(getattr(dictionary, "atoms", dictionary), dtype=float)


def _fista_nn(
    grad: Callable[[np.ndarray], np.ndarray],
    smooth_obj: Callable[[np.ndarray], np.ndarray],
    penalty: np.ndarray,
    L: float,
    shape: tuple,
    opts: SolverOptions,
    alpha0: Optional[np.ndarray] = None,
):
    """FISTA for min smooth(a) + penalty . a over a >= 0, column-wise.

    ``penalty`` is a per-coordinate linear cost (the L1 term restricted to
    the non-negative orthant).  Works on a matrix of columns at once.
    Returns (alpha, iterations, kkt_violation, converged).
    """
    m, B = shape
    L = max(L, 1e-30)
    step = 1.0 / L
    alpha = np.zeros(shape) if alpha0 is None else np.array(alpha0, dtype=float)
    pen = penalty.reshape(-1, 1)

    def total_obj(a):
        return smooth_obj(a) + (pen * a).sum(axis=0)

    def kkt(a):
        g = grad(a) + pen
        on = a > opts.activation_floor
        viol = np.where(on, np.abs(g), np.maximum(-g, 0.0))
        return float(viol.max()) if viol.size else 0.0

    obj = total_obj(alpha)
    v0 = kkt(alpha)
    if v0 <= opts.kkt_tol:
        return alpha, 0, v0, True

    y = alpha.copy()
    t = 1.0
    it = 0
    viol = v0
    for it in range(1, opts.max_iters + 1):
        cand = np.maximum(y - step * (grad(y) + pen), 0.0)
        cand_obj = total_obj(cand)
        worse = cand_obj > obj
        if np.any(worse):
            # Monotone fallback: a plain proximal step from the current
            # iterate, which cannot increase the objective at step 1/L.
            ista = np.maximum(alpha - step * (grad(alpha) + pen), 0.0)
            ista_obj = total_obj(ista)
            if cand.ndim == 2 and cand.shape[1] > 1:
                cand = np.where(worse.reshape(1, -1), ista, cand)
                cand_obj = np.where(worse, ista_obj, cand_obj)
            else:
                cand, cand_obj = ista, ista_obj
            t = 1.0  # restart momentum after an objective increase
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = cand + ((t - 1.0) / t_next) * (cand - alpha)
        alpha, obj, t = cand, cand_obj, t_next
        if it % opts.check_every == 0 or it == opts.max_iters:
            viol = kkt(alpha)
            if viol <= opts.kkt_tol:
                return alpha, it, viol, True
    return alpha, it, kkt(alpha), False


def nn_lasso_batch(
    X: np.ndarray,
    dictionary,
    lam: float,
    opts: Optional[SolverOptions] = None,
) -> tuple[np.ndarray, SolveReport]:
    """Solve the non-negative lasso for every column of X at once."""
    opts = opts or SolverOptions()
    Phi = _atoms(dictionary)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != Phi.shape[0]:
        raise DimensionMismatch(
            f"signal dim {X.shape[0]} != dictionary dim {Phi.shape[0]}"
        )
    if lam <= 0:
        raise ValueError("lambda must be positive")
    m = Phi.shape[1]
    L = opts.lipschitz if opts.lipschitz is not None else gram_lipschitz(Phi)
    G = Phi.T @ Phi
    C = Phi.T @ X

    def grad(a):
        return G @ a - C

    def smooth_obj(a):
        R = X - Phi @ a
        return 0.5 * (R * R).sum(axis=0)

    pen = np.full(m, lam)
    alpha, it, viol, conv = _fista_nn(grad, smooth_obj, pen, L, (m, X.shape[1]), opts)
    obj = float((smooth_obj(alpha) + lam * alpha.sum(axis=0)).sum())
    return alpha, SolveReport(it, obj, viol, conv)


def nn_lasso(
    x: np.ndarray,
    dictionary,
    lam: float,
    opts: Optional[SolverOptions] = None,
) -> tuple[SparseCode, SolveReport]:
    """min 1/2 ||x - Phi a||^2 + lam ||a||_1 subject to a >= 0."""
    opts = opts or SolverOptions()
    A, report = nn_lasso_batch(np.asarray(x, dtype=float).reshape(-1, 1), dictionary, lam, opts)
    return SparseCode.from_values(A[:, 0], opts.activation_floor), report


def weighted_nn_lasso(
    beta: np.ndarray,
    P,
    lam: float,
    weights: np.ndarray,
    opts: Optional[SolverOptions] = None,
) -> tuple[SparseCode, SolveReport]:
    """min ||beta - P a||^2 + lam * weights . a subject to a >= 0.

    Note the squared error carries no 1/2 factor.  ``P`` may be an
    EmbeddingMatrix or a plain f x m array.
    """
    opts = opts or SolverOptions()
    Pm = P.P if hasattr(P, "P") else np.asarray(P, dtype=float)
    beta = np.asarray(beta, dtype=float).ravel()
    z = np.asarray(weights, dtype=float).ravel()
    if beta.shape[0] != Pm.shape[0]:
        raise DimensionMismatch(f"beta dim {beta.shape[0]} != embedding dim {Pm.shape[0]}")
    if z.shape[0] != Pm.shape[1]:
        raise DimensionMismatch("weights length does not match number of elements")
    if np.any(z < 0):
        raise ValueError("weights must be non-negative")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    m = Pm.shape[1]
    L = opts.lipschitz if opts.lipschitz is not None else 2.0 * gram_lipschitz(Pm)
    G = 2.0 * (Pm.T @ Pm)
    c = 2.0 * (Pm.T @ beta)

    def grad(a):
        return G @ a - c[:, None]

    def smooth_obj(a):
        R = beta[:, None] - Pm @ a
        return (R * R).sum(axis=0)

    alpha, it, viol, conv = _fista_nn(grad, smooth_obj, lam * z, L, (m, 1), opts)
    a = alpha[:, 0]
    obj = float(smooth_obj(alpha)[0] + lam * z @ a)
    return SparseCode.from_values(a, opts.activation_floor), SolveReport(it, obj, viol, conv)


def temporal_regularized_infer(
    x_t: np.ndarray,
    dictionary,
    P,
    alpha_prev: SparseCode,
    alpha_prev2: SparseCode,
    lam: float,
    gamma0: float,
    opts: Optional[SolverOptions] = None,
) -> tuple[SparseCode, SolveReport]:
    """Sparse inference with the causal linear-prediction regularizer.

    Minimizes 1/2 ||x - Phi a||^2 + lam ||a||_1 + gamma0 ||P (a - a_pred)||^2
    over a >= 0, with a_pred = 2 a_{t-1} - a_{t-2}.
    """
    opts = opts or SolverOptions()
    Phi = _atoms(dictionary)
    Pm = P.P if hasattr(P, "P") else np.asarray(P, dtype=float)
    x = np.asarray(x_t, dtype=float).ravel()
    if x.shape[0] != Phi.shape[0]:
        raise DimensionMismatch("signal dim does not match dictionary")
    m = Phi.shape[1]
    a1 = np.asarray(alpha_prev.values, dtype=float).ravel()
    a2 = np.asarray(alpha_prev2.values, dtype=float).ravel()
    if a1.shape[0] != m or a2.shape[0] != m:
        raise DimensionMismatch("previous codes do not match dictionary size")
    if gamma0 < 0:
        raise ValueError("gamma0 must be non-negative")
    pred = 2.0 * a1 - a2

    L = gram_lipschitz(Phi) + 2.0 * gamma0 * gram_lipschitz(Pm)
    G = Phi.T @ Phi + 2.0 * gamma0 * (Pm.T @ Pm)
    c = Phi.T @ x + 2.0 * gamma0 * (Pm.T @ (Pm @ pred))

    def grad(a):
        return G @ a - c[:, None]

    def smooth_obj(a):
        R = x[:, None] - Phi @ a
        Dv = Pm @ (a - pred[:, None])
        return 0.5 * (R * R).sum(axis=0) + gamma0 * (Dv * Dv).sum(axis=0)

    pen = np.full(m, lam)
    alpha, it, viol, conv = _fista_nn(grad, smooth_obj, pen, L, (m, 1), opts)
    a = alpha[:, 0]
    obj = float(smooth_obj(alpha)[0] + lam * a.sum())
    return SparseCode.from_values(a, opts.activation_floor), SolveReport(it, obj, viol, conv)


def default_lambda(X: np.ndarray) -> float:
    """Sparsity penalty rule of thumb: 0.1 * mean ||x||_2 / sqrt(n)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    return 0.1 * float(np.linalg.norm(X, axis=0).mean()) / np.sqrt(n)


def knn_interpolate(x: np.ndarray, landmarks, k: int, affine_weight: float = 0.0) -> SparseCode:
    """Local linear interpolation from the K nearest landmarks.

    Support is restricted to the k nearest columns by Euclidean distance;
    the values solve non-negative least squares on that support.  A positive
    ``affine_weight`` appends a homogeneous row pulling the coefficients
    toward sum one, which keeps small-norm landmarks in play (plain NNLS
    systematically starves them).
    """
    Phi = _atoms(landmarks)
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != Phi.shape[0]:
        raise DimensionMismatch("point dimension does not match landmarks")
    m = Phi.shape[1]
    if k < 1 or k > m:
        raise ValueError(f"k={k} out of range for {m} landmarks")
    d2 = ((Phi - x[:, None]) ** 2).sum(axis=0)
    idx = np.argsort(d2, kind="stable")[:k]
    sub = Phi[:, idx]
    if k > 1 and np.allclose(sub, sub[:, :1], atol=0.0, rtol=0.0) and d2[idx[0]] > 0:
        raise DegenerateNeighborhood("all k nearest landmarks are identical")
    if affine_weight > 0:
        sub = np.vstack([sub, affine_weight * np.ones(k)])
        coef, _ = _scipy_nnls(sub, np.concatenate([x, [affine_weight]]))
    else:
        coef, _ = _scipy_nnls(sub, x)
    values = np.zeros(m)
    values[idx] = coef
    return SparseCode.from_values(values)
