"""Inverting the manifold sensing and reconstructing signals through a stack.

The embedded vector beta = P alpha is inverted by weighted positive-only
sparse inference; multi-layer reconstruction alternates dictionary synthesis
with embedding inversion down to the signal space.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import data as data_mod
from .errors import DimensionMismatch, LayerOutOfRange
from .solvers import SolverOptions, SparseCode, weighted_nn_lasso


@dataclass
class RecoveryConfig:
    # None selects the scale-aware default 0.01 * max_j (p_j . beta / z_j)+.
    lam: Optional[float] = None
    opts: SolverOptions = field(default_factory=SolverOptions)
    use_canonical_weights: bool = True

    def __post_init__(self):
        if self.lam is not None and self.lam <= 0:
            raise ValueError("lambda must be positive")


def _weights(P: np.ndarray, cfg: RecoveryConfig) -> np.ndarray:
    if cfg.use_canonical_weights:
        return np.linalg.norm(P, axis=0)
    return np.ones(P.shape[1])


def default_recovery_lambda(beta: np.ndarray, P: np.ndarray, z: np.ndarray) -> float:
    """0.01 times the largest positive weighted correlation, floored > 0."""
    safe = np.where(z > 0, z, 1.0)
    top = float(np.max((P.T @ beta) / safe, initial=0.0))
    return max(0.01 * top, 1e-12)


def invert_embedding(beta: np.ndarray, P_emb, cfg: Optional[RecoveryConfig] = None) -> SparseCode:
    """Recover a non-negative sparse code from its embedded vector."""
    cfg = cfg or RecoveryConfig()
    P = P_emb.P if hasattr(P_emb, "P") else np.asarray(P_emb, dtype=float)
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.shape[0] != P.shape[0]:
        raise DimensionMismatch(f"beta dim {beta.shape[0]} != embedding dim {P.shape[0]}")
    z = _weights(P, cfg)
    lam = cfg.lam if cfg.lam is not None else default_recovery_lambda(beta, P, z)
    # Zero-norm columns carry no signal; give them unit weight so the linear
    # penalty keeps their coefficients at zero.
    z = np.where(z > 0, z, 1.0)
    code, _ = weighted_nn_lasso(beta, P, lam, z, cfg.opts)
    return code


def reconstruct_layer1(alpha: SparseCode, dictionary) -> np.ndarray:
    """Synthesis Phi @ alpha in the (whitened) signal space."""
    Phi = np.asarray(getattr(dictionary, "atoms", dictionary), dtype=float)
    values = np.asarray(alpha.values if isinstance(alpha, SparseCode) else alpha, dtype=float)
    if values.shape[0] != Phi.shape[1]:
        raise DimensionMismatch("code length does not match dictionary size")
    return Phi @ values


def reconstruct_through_stack(alpha_top: SparseCode, model, top_layer: int) -> np.ndarray:
    """Reconstruct a signal from a code at ``top_layer`` (1-based).

    Alternates synthesis through each layer's dictionary with embedding
    inversion at the layer below, undoing the per-layer input normalization,
    and finally unwhitens when the model carries a whitening spec for frames
    of the right size.
    """
    if top_layer < 1 or top_layer > len(model.layers):
        raise LayerOutOfRange(f"layer {top_layer} not in 1..{len(model.layers)}")
    alpha = alpha_top
    for l in range(top_layer, 0, -1):
        layer = model.layers[l - 1]
        v = reconstruct_layer1(alpha, layer.dict)
        v = v * layer.input_scale
        if layer.input_center is not None:
            v = v + layer.input_center
        if l == 1:
            return _maybe_unwhiten(v, model)
        alpha = invert_embedding(v, model.layers[l - 2].embed, model.layers[l - 2].recovery_cfg)
    raise AssertionError("unreachable")


def _maybe_unwhiten(signal: np.ndarray, model) -> np.ndarray:
    spec = getattr(model, "whitening", None)
    if spec is None:
        return signal
    n = spec.frame_size
    if signal.shape[0] != n * n:
        return signal
    frame = signal.reshape(n, n, order="F")
    return data_mod.unwhiten_frame(frame, spec).flatten(order="F")


def interpolate_elements(model, layer: int, j1: int, j2: int, weights=(0.5, 0.5)) -> np.ndarray:
    """Visualization of a two-element blend at ``layer``."""
    if layer < 1 or layer > len(model.layers):
        raise LayerOutOfRange(f"layer {layer} not in 1..{len(model.layers)}")
    if j1 == j2:
        raise ValueError("j1 and j2 must differ")
    m = model.layers[layer - 1].dict.num_elements
    values = np.zeros(m)
    values[j1] = weights[0]
    values[j2] = weights[1]
    return reconstruct_through_stack(SparseCode.from_values(values), model, layer)
