"""Learning the functional embedding from temporally ordered sparse codes.

The embedding matrix P (f x num_elements) minimizes the second temporal
difference of the embedded codes, ||P A D||_F^2, subject to P V P^T = I where
V is the second moment (optionally covariance) of the codes.  Two routes are
provided: the analytic trailing-eigenvector solution and an online SGD with
an optional column-wise shrinkage that localizes the functionals.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, TextIO

import numpy as np
import scipy.sparse as sp

from . import linalg
from .errors import ChunkTooShort, InsufficientTimepoints, RankCollapse
from .linalg import MomentMatrix


@dataclass
class SecondDiffOperator:
    """Sparse T x C operator; column c extracts x_t - x_{t-1}/2 - x_{t+1}/2
    for one interior timepoint t of one chunk."""

    matrix: sp.csc_matrix
    chunk_boundaries: list[int]

    @property
    def num_columns(self) -> int:
        return self.matrix.shape[1]


@dataclass
class EmbeddingMatrix:
    P: np.ndarray
    f: int
    metric: MomentMatrix
    method: str
    # Eigenvalues of the whitened difference operator (analytic route only);
    # the first f entries sum to the optimal objective.
    spectrum: Optional[np.ndarray] = None

    @property
    def num_elements(self) -> int:
        return self.P.shape[1]


def chunk_slices(T: int, chunk_boundaries: Sequence[int]) -> list[tuple[int, int]]:
    """Chunk start indices -> [start, stop) pairs covering 0..T."""
    bounds = list(chunk_boundaries) if len(chunk_boundaries) else [0]
    if bounds[0] != 0:
        raise ValueError("first chunk boundary must be 0")
    if any(b >= c for b, c in zip(bounds, bounds[1:])) or bounds[-1] >= T + 1:
        raise ValueError("chunk boundaries must be strictly increasing and within [0, T]")
    stops = bounds[1:] + [T]
    return list(zip(bounds, stops))


def build_second_diff(T: int, chunk_boundaries: Sequence[int]) -> SecondDiffOperator:
    """Second-difference columns (-0.5, 1, -0.5) for every interior timepoint.

    Chunks shorter than 3 contribute no columns (dropped with a warning);
    raises ChunkTooShort when every chunk is too short.
    """
    rows, cols, vals = [], [], []
    col = 0
    for start, stop in chunk_slices(T, chunk_boundaries):
        if stop - start < 3:
            warnings.warn(f"chunk [{start}, {stop}) too short for second differences; dropped")
            continue
        for t in range(start + 1, stop - 1):
            rows.extend((t - 1, t, t + 1))
            cols.extend((col, col, col))
            vals.extend((-0.5, 1.0, -0.5))
            col += 1
    if col == 0:
        raise ChunkTooShort("no chunk has length >= 3")
    D = sp.csc_matrix((vals, (rows, cols)), shape=(T, col))
    return SecondDiffOperator(matrix=D, chunk_boundaries=list(chunk_boundaries))


def _fix_signs(P: np.ndarray) -> np.ndarray:
    # Reproducible sign convention: the largest-magnitude entry of each row
    # is made positive.
    idx = np.argmax(np.abs(P), axis=1)
    signs = np.sign(P[np.arange(P.shape[0]), idx])
    signs[signs == 0] = 1.0
    return P * signs[:, None]


def default_f(num_elements: int, h: int, scale: float = 1.0) -> int:
    """Embedding dimension rule f = ceil(scale * h * log(N))."""
    return max(1, math.ceil(scale * h * math.log(num_elements)))


def solve_embedding_analytic(
    A: np.ndarray,
    D: SecondDiffOperator,
    f: int,
    ridge: Optional[float] = None,
    center: bool = False,
) -> EmbeddingMatrix:
    """Closed-form embedding: f trailing generalized eigenvectors.

    Rows of P are ordered by ascending eigenvalue of the whitened operator
    W (AD)(AD)^T W with W = V^{-1/2}, and satisfy P V P^T = I.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise InsufficientTimepoints("expected a 2-D coefficient matrix")
    N, T = A.shape
    if f > N:
        raise ValueError(f"f={f} exceeds number of elements {N}")
    if T < 3:
        raise InsufficientTimepoints(f"need at least 3 timepoints, got {T}")
    V = linalg.second_moment(A, ridge=0.0, center=center)
    r = ridge if ridge is not None else linalg.default_ridge(V.matrix)
    V = MomentMatrix(V.matrix + r * np.eye(N), V.sample_count, r)
    Y = A @ D.matrix  # N x C
    G = Y @ Y.T
    return _solve_from_moments(G, V, f)


def _solve_from_moments(G: np.ndarray, V: MomentMatrix, f: int) -> EmbeddingMatrix:
    W = linalg.inv_sqrt(V.matrix)
    M = W @ G @ W
    res = linalg.sym_eig(0.5 * (M + M.T))
    U = res.eigenvectors[:, :f]
    P = _fix_signs(U.T @ W)
    return EmbeddingMatrix(P=P, f=f, metric=V, method="analytic", spectrum=res.eigenvalues)


def embedding_objective(P: np.ndarray, A: np.ndarray, D: SecondDiffOperator) -> float:
    """||P A D||_F^2."""
    Y = (P @ A) @ D.matrix
    return float((Y * Y).sum())


def sgd_embedding_step(
    P_emb: EmbeddingMatrix,
    A_batch: np.ndarray,
    D_batch: SecondDiffOperator,
    V: MomentMatrix,
    mean_alpha: np.ndarray,
    gamma0: float,
    gamma1: float,
    eta_P: float,
    V_inv: Optional[np.ndarray] = None,
) -> EmbeddingMatrix:
    """One online update: whitened gradient step, column shrinkage, then
    parallel orthogonalization P <- (P V P^T)^{-1/2} P."""
    P = np.array(P_emb.P, dtype=float)
    if V_inv is None:
        V_inv = linalg.inv_psd(V.matrix)
    Y = np.asarray(A_batch, dtype=float) @ D_batch.matrix
    grad = (P @ Y) @ (Y.T @ V_inv)
    P = P - 2.0 * gamma0 * eta_P * grad
    if gamma1 > 0:
        thresh = gamma1 * np.asarray(mean_alpha, dtype=float).reshape(1, -1)
        P = np.sign(P) * np.maximum(np.abs(P) - thresh, 0.0)
        if not np.any(np.abs(P).sum(axis=1) > 0):
            raise RankCollapse("shrinkage zeroed every row of P")
    try:
        S = linalg.inv_sqrt(P @ V.matrix @ P.T)
    except linalg.NotPositiveDefinite as exc:
        raise RankCollapse("P V P^T became singular") from exc
    return EmbeddingMatrix(P=S @ P, f=P_emb.f, metric=V, method="sgd")


@dataclass
class EmbedConfig:
    f: Optional[int] = None
    method: str = "analytic"            # "analytic" | "sgd"
    h: int = 2                          # used by the default-f rule
    f_scale: float = 1.0
    gamma0: float = 1.0
    gamma1: float = 0.0
    eta_P: float = 0.2
    decay_steps: int = 300              # per-step 1/(1+t/decay) learning rate
    epochs: int = 30
    ridge: Optional[float] = None
    center: bool = False
    seed: int = 0


def train_embedding(
    code_source,
    config: EmbedConfig,
    log_stream: Optional[TextIO] = None,
) -> tuple[EmbeddingMatrix, list[dict]]:
    """Train an embedding from chunked coefficient sequences.

    ``code_source`` is either a SequenceBatch of codes or an iterable of
    (A_chunk) matrices, each a contiguous temporally ordered chunk.  The
    analytic route accumulates V and (AD)(AD)^T over chunks in a streaming
    pass; the SGD route iterates sgd_embedding_step over chunk minibatches.
    """
    chunks = _as_chunks(code_source)
    if not chunks:
        raise InsufficientTimepoints("code source is empty")
    N = chunks[0].shape[0]
    f = config.f if config.f is not None else default_f(N, config.h, config.f_scale)

    # First pass: second moment of all codes and the per-chunk operators.
    total_T = 0
    V_sum = np.zeros((N, N))
    mean_sum = np.zeros(N)
    usable = []
    for A in chunks:
        V_sum += A @ A.T
        mean_sum += A.sum(axis=1)
        total_T += A.shape[1]
        if A.shape[1] >= 3:
            usable.append(A)
    if total_T < f or not usable:
        raise InsufficientTimepoints(f"{total_T} timepoints insufficient for f={f}")
    Vm = V_sum / total_T
    if config.center:
        mu = mean_sum / total_T
        Vm = Vm - np.outer(mu, mu)
    ridge = config.ridge if config.ridge is not None else linalg.default_ridge(Vm)
    V = MomentMatrix(0.5 * (Vm + Vm.T) + ridge * np.eye(N), total_T, ridge)
    mean_alpha = mean_sum / total_T
    ops = [build_second_diff(A.shape[1], [0]) for A in usable]

    log: list[dict] = []
    if log_stream is not None:
        log_stream.write("epoch,objective,orthogonality_error\n")

    if config.method == "analytic":
        G = np.zeros((N, N))
        for A, D in zip(usable, ops):
            Y = A @ D.matrix
            G += Y @ Y.T
        emb = _solve_from_moments(G, V, f)
        obj = float(emb.spectrum[:f].sum())
        err = float(np.linalg.norm(emb.P @ V.matrix @ emb.P.T - np.eye(f)))
        log.append({"epoch": 0, "objective": obj, "orthogonality_error": err})
        if log_stream is not None:
            log_stream.write(f"0,{obj!r},{err!r}\n")
        return emb, log

    if config.method != "sgd":
        raise ValueError(f"unknown method {config.method!r}")

    rng = np.random.default_rng(config.seed)
    P0 = rng.standard_normal((f, N))
    try:
        P0 = linalg.inv_sqrt(P0 @ V.matrix @ P0.T) @ P0
    except linalg.NotPositiveDefinite as exc:
        raise RankCollapse("random initialization is rank deficient") from exc
    emb = EmbeddingMatrix(P=P0, f=f, metric=V, method="sgd")
    V_inv = linalg.inv_psd(V.matrix)
    order = np.arange(len(usable))
    step = 0
    for epoch in range(config.epochs):
        rng.shuffle(order)
        for i in order:
            eta = config.eta_P / (1.0 + step / config.decay_steps)
            emb = sgd_embedding_step(
                emb, usable[i], ops[i], V, mean_alpha,
                config.gamma0, config.gamma1, eta, V_inv=V_inv,
            )
            step += 1
        obj = sum(embedding_objective(emb.P, A, D) for A, D in zip(usable, ops))
        err = float(np.linalg.norm(emb.P @ V.matrix @ emb.P.T - np.eye(f)))
        log.append({"epoch": epoch, "objective": obj, "orthogonality_error": err})
        if log_stream is not None:
            log_stream.write(f"{epoch},{obj!r},{err!r}\n")
    return emb, log


def _as_chunks(code_source) -> list[np.ndarray]:
    # SequenceBatch duck-typing keeps this module independent of data.py.
    if hasattr(code_source, "signals") and hasattr(code_source, "chunk_boundaries"):
        A = np.asarray(code_source.signals, dtype=float)
        return [
            A[:, a:b] for a, b in chunk_slices(A.shape[1], code_source.chunk_boundaries)
        ]
    return [np.asarray(C, dtype=float) for C in code_source]
