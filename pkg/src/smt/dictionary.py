"""Overcomplete dictionary learning by alternating non-negative sparse
inference with stochastic gradient updates on the atoms."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Optional, TextIO

import numpy as np

from .errors import DimensionMismatch, EmptySource, ZeroDimension


@dataclass
class Dictionary:
    """Matrix of unit-norm atom columns."""

    atoms: np.ndarray
    atom_norms: np.ndarray
    trained_steps: int = 0

    @property
    def signal_dim(self) -> int:
        return self.atoms.shape[0]

    @property
    def num_elements(self) -> int:
        return self.atoms.shape[1]


def _normalize_columns(M: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(M, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    return M / safe


def init_dictionary(signal_dim: int, num_elements: int, seed: int) -> Dictionary:
    """Seeded i.i.d. Gaussian atoms, normalized to unit column norm."""
    if signal_dim < 1 or num_elements < 1:
        raise ZeroDimension(f"invalid shape ({signal_dim}, {num_elements})")
    rng = np.random.default_rng(seed)
    atoms = _normalize_columns(rng.standard_normal((signal_dim, num_elements)))
    return Dictionary(atoms=atoms, atom_norms=np.linalg.norm(atoms, axis=0), trained_steps=0)


def dictionary_step(
    dictionary: Dictionary,
    batch_x: np.ndarray,
    batch_alpha: np.ndarray,
    eta: float,
) -> Dictionary:
    """One SGD step on the reconstruction error, then column renormalization.

    Phi <- Phi + eta * (X - Phi A) A^T / batch_size, columns rescaled to unit
    norm afterwards.  Zero columns are left untouched by the rescaling.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    X = np.asarray(batch_x, dtype=float)
    A = np.asarray(batch_alpha, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if A.ndim == 1:
        A = A[:, None]
    Phi = dictionary.atoms
    if X.shape[0] != Phi.shape[0] or A.shape[0] != Phi.shape[1] or X.shape[1] != A.shape[1]:
        raise DimensionMismatch(
            f"batch shapes {X.shape}/{A.shape} do not align with dictionary {Phi.shape}"
        )
    grad = (X - Phi @ A) @ A.T / X.shape[1]
    atoms = _normalize_columns(Phi + eta * grad)
    return Dictionary(
        atoms=atoms,
        atom_norms=np.linalg.norm(atoms, axis=0),
        trained_steps=dictionary.trained_steps + 1,
    )


@dataclass
class DictLearnConfig:
    num_elements: int
    steps: int
    lam: Optional[float] = None         # None -> 0.1 * mean||x|| / sqrt(n)
    eta0: Optional[float] = None        # None -> 0.3 / batch_size
    half_life: Optional[float] = None   # None -> steps / 3
    batch_size: int = 32                # used when data is a plain matrix
    shuffle: bool = True                # patch order for matrix input
    seed: int = 0
    dead_atom_window: int = 500
    solver_max_iters: int = 300
    kkt_tol: float = 1e-5
    log_every: int = 25


@dataclass
class TrainLogRow:
    step: int
    mean_residual: float
    mean_l0: float
    eta: float


def _matrix_batches(X: np.ndarray, cfg: DictLearnConfig) -> Iterable[np.ndarray]:
    rng = np.random.default_rng(cfg.seed + 1)
    T = X.shape[1]
    while True:
        order = rng.permutation(T) if cfg.shuffle else np.arange(T)
        for start in range(0, T, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if idx.size:
                yield X[:, idx]


def train_dictionary(
    data_source,
    config: DictLearnConfig,
    log_stream: Optional[TextIO] = None,
) -> tuple[Dictionary, list[TrainLogRow]]:
    """Alternate sparse inference and dictionary SGD for ``config.steps`` steps.

    ``data_source`` is either a signal matrix (signal_dim x T, batched
    internally) or an iterable of batch matrices, cycled as needed.
    Returns the trained dictionary and the training log; the log is also
    written as CSV to ``log_stream`` when given.
    """
    from . import solvers

    if isinstance(data_source, np.ndarray):
        if data_source.size == 0:
            raise EmptySource("empty data matrix")
        batches = _matrix_batches(np.asarray(data_source, dtype=float), config)
        probe = np.asarray(data_source, dtype=float)[:, : config.batch_size]
    else:
        data_list = list(data_source)
        if not data_list:
            raise EmptySource("no batches in data source")
        batches = itertools.cycle(data_list)
        probe = np.asarray(data_list[0], dtype=float)

    signal_dim = probe.shape[0]
    lam = config.lam if config.lam is not None else solvers.default_lambda(probe)
    dictionary = init_dictionary(signal_dim, config.num_elements, config.seed)

    eta0 = config.eta0 if config.eta0 is not None else 0.3 / config.batch_size
    half_life = config.half_life if config.half_life is not None else max(config.steps / 3, 1)

    opts = solvers.SolverOptions(kkt_tol=config.kkt_tol, max_iters=config.solver_max_iters)
    rng = np.random.default_rng(config.seed + 2)
    dead_for = np.zeros(config.num_elements, dtype=int)
    log: list[TrainLogRow] = []
    if log_stream is not None:
        log_stream.write("step,mean_residual,mean_l0,eta\n")

    lipschitz = None
    for step in range(config.steps):
        X = np.asarray(next(batches), dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if step % 20 == 0:
            lipschitz = solvers.gram_lipschitz(dictionary.atoms)
        # Stale between refreshes; atoms stay unit-norm so drift is small.
        opts.lipschitz = 1.1 * lipschitz
        A, _ = solvers.nn_lasso_batch(X, dictionary, lam, opts)
        eta = eta0 / (1.0 + step / half_life)
        dictionary = dictionary_step(dictionary, X, A, eta)

        # Dead-atom handling: re-seed atoms unused for too many steps.
        peak = A.max(axis=1) if A.size else np.zeros(config.num_elements)
        dead_for = np.where(peak < opts.activation_floor, dead_for + 1, 0)
        stale = np.flatnonzero(dead_for >= config.dead_atom_window)
        if stale.size:
            atoms = dictionary.atoms.copy()
            for j in stale:
                col = X[:, rng.integers(X.shape[1])]
                norm = np.linalg.norm(col)
                atoms[:, j] = col / norm if norm > 0 else atoms[:, j]
                dead_for[j] = 0
            dictionary = Dictionary(atoms, np.linalg.norm(atoms, axis=0), dictionary.trained_steps)
            lipschitz = solvers.gram_lipschitz(dictionary.atoms)

        if step % config.log_every == 0 or step == config.steps - 1:
            resid = float(np.linalg.norm(X - dictionary.atoms @ A, axis=0).mean())
            l0 = float((A > opts.activation_floor).sum(axis=0).mean())
            row = TrainLogRow(step, resid, l0, eta)
            log.append(row)
            if log_stream is not None:
                log_stream.write(f"{row.step},{row.mean_residual!r},{row.mean_l0!r},{row.eta!r}\n")
    return dictionary, log
