"""Layer composition, training orchestration, and model persistence.

A layer couples a sparse-coding dictionary with a manifold embedding;
stacking feeds each layer's embedded vector (centered and rescaled) into the
next layer's sparse coder.  Models persist to a little-endian binary format
("SMT1") with a trailing 64-bit payload checksum.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import dictionary as dict_mod
from . import embedding as embed_mod
from . import recovery as recov_mod
from . import solvers
from .data import SequenceBatch, WhiteningSpec, whitening_mask
from .dictionary import Dictionary, DictLearnConfig
from .embedding import EmbedConfig, EmbeddingMatrix, chunk_slices
from .errors import (
    BadMagic,
    ChecksumMismatch,
    DimensionMismatch,
    LayerOutOfRange,
    TruncatedFile,
    VersionMismatch,
)
from .recovery import RecoveryConfig
from .solvers import SolverOptions, SparseCode

FORMAT_VERSION = 1
_MAGIC = b"SMT1"


@dataclass
class SmtLayer:
    dict: Dictionary
    embed: EmbeddingMatrix
    recovery_cfg: RecoveryConfig = field(default_factory=RecoveryConfig)
    lambda_inference: float = 0.1
    # Normalization applied to this layer's input before sparse coding;
    # layer 1 usually has none.
    input_center: Optional[np.ndarray] = None
    input_scale: float = 1.0

    def __post_init__(self):
        if self.dict.num_elements != self.embed.num_elements:
            raise DimensionMismatch(
                f"dictionary has {self.dict.num_elements} elements, "
                f"embedding has {self.embed.num_elements}"
            )


@dataclass
class SmtModel:
    layers: list[SmtLayer]
    whitening: Optional[WhiteningSpec] = None
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.dict.signal_dim != prev.embed.f:
                raise DimensionMismatch(
                    f"layer input dim {nxt.dict.signal_dim} != previous embedding dim {prev.embed.f}"
                )

    @property
    def depth(self) -> int:
        return len(self.layers)


def _normalize_input(v: np.ndarray, layer: SmtLayer) -> np.ndarray:
    if layer.input_center is not None:
        v = v - layer.input_center
    return v / layer.input_scale


def encode(
    x: np.ndarray,
    model: SmtModel,
    up_to_layer: Optional[int] = None,
    temporal_context: Optional[Sequence[tuple[SparseCode, SparseCode]]] = None,
    gamma0: float = 0.0,
    opts: Optional[SolverOptions] = None,
) -> list[tuple[SparseCode, np.ndarray]]:
    """Per layer: sparse code of the (normalized) input, then beta = P alpha.

    ``temporal_context`` optionally supplies (alpha_{t-1}, alpha_{t-2}) per
    layer, switching inference to the temporally regularized variant with
    weight ``gamma0``.
    """
    depth = up_to_layer if up_to_layer is not None else model.depth
    if depth < 1 or depth > model.depth:
        raise LayerOutOfRange(f"layer {depth} not in 1..{model.depth}")
    v = np.asarray(x, dtype=float).ravel()
    if v.shape[0] != model.layers[0].dict.signal_dim:
        raise DimensionMismatch(
            f"input dim {v.shape[0]} != layer-1 dictionary dim {model.layers[0].dict.signal_dim}"
        )
    out: list[tuple[SparseCode, np.ndarray]] = []
    for l in range(depth):
        layer = model.layers[l]
        vin = _normalize_input(v, layer)
        if temporal_context is not None and temporal_context[l] is not None and gamma0 > 0:
            prev, prev2 = temporal_context[l]
            alpha, _ = solvers.temporal_regularized_infer(
                vin, layer.dict, layer.embed, prev, prev2,
                layer.lambda_inference, gamma0, opts,
            )
        else:
            alpha, _ = solvers.nn_lasso(vin, layer.dict, layer.lambda_inference, opts)
        beta = layer.embed.P @ alpha.values
        out.append((alpha, beta))
        v = beta
    return out


def decode(beta: np.ndarray, model: SmtModel, from_layer: int) -> np.ndarray:
    """Invert the embedding at ``from_layer`` and reconstruct down the stack."""
    if from_layer < 1 or from_layer > model.depth:
        raise LayerOutOfRange(f"layer {from_layer} not in 1..{model.depth}")
    layer = model.layers[from_layer - 1]
    alpha = recov_mod.invert_embedding(beta, layer.embed, layer.recovery_cfg)
    # The code lives at from_layer; synthesize through its dictionary only
    # when reconstructing from the layer's code, which is what
    # reconstruct_through_stack does.
    return recov_mod.reconstruct_through_stack(alpha, model, from_layer)


def encode_sequence_batch(
    batch: SequenceBatch,
    model: SmtModel,
    up_to_layer: int = 1,
    gamma0: float = 0.0,
    opts: Optional[SolverOptions] = None,
) -> tuple[SequenceBatch, SequenceBatch]:
    """Encode every column of a batch at one layer, preserving chunking.

    Returns (alpha batch, beta batch).  With ``gamma0`` > 0 the temporally
    regularized solver is used within chunks (first two steps fall back to
    plain inference).
    """
    layer = model.layers[up_to_layer - 1]
    m = layer.dict.num_elements
    f = layer.embed.f
    X = batch.signals
    A = np.empty((m, X.shape[1]))
    prev_layers_depth = up_to_layer - 1
    # Map inputs through earlier layers when encoding at depth > 1.
    if prev_layers_depth:
        inner_a, inner_b = encode_sequence_batch(batch, model, prev_layers_depth, gamma0, opts)
        X = inner_b.signals
    solver_opts = opts or SolverOptions()
    for start, stop in chunk_slices(X.shape[1], batch.chunk_boundaries):
        if gamma0 > 0:
            for t in range(start, stop):
                vin = _normalize_input(X[:, t], layer)
                if t - start >= 2:
                    prev = SparseCode.from_values(A[:, t - 1])
                    prev2 = SparseCode.from_values(A[:, t - 2])
                    code, _ = solvers.temporal_regularized_infer(
                        vin, layer.dict, layer.embed, prev, prev2,
                        layer.lambda_inference, gamma0, solver_opts,
                    )
                else:
                    code, _ = solvers.nn_lasso(vin, layer.dict, layer.lambda_inference, solver_opts)
                A[:, t] = code.values
        else:
            Xn = X[:, start:stop]
            if layer.input_center is not None:
                Xn = Xn - layer.input_center[:, None]
            Xn = Xn / layer.input_scale
            A[:, start:stop], _ = solvers.nn_lasso_batch(
                Xn, layer.dict, layer.lambda_inference, solver_opts
            )
    B = layer.embed.P @ A
    alpha_batch = SequenceBatch(A, list(batch.chunk_boundaries), batch.dt)
    beta_batch = SequenceBatch(B, list(batch.chunk_boundaries), batch.dt)
    return alpha_batch, beta_batch


@dataclass
class LayerTrainConfig:
    dict_cfg: Optional[DictLearnConfig] = None
    embed_cfg: EmbedConfig = field(default_factory=EmbedConfig)
    # Fixed dictionary atoms bypass dictionary learning when given.
    fixed_dictionary: Optional[np.ndarray] = None
    lambda_inference: Optional[float] = None  # None -> default rule
    recovery_cfg: RecoveryConfig = field(default_factory=RecoveryConfig)
    solver_opts: SolverOptions = field(default_factory=SolverOptions)


def train_stack(
    batch: SequenceBatch,
    configs: Sequence[LayerTrainConfig],
    whitening: Optional[WhiteningSpec] = None,
) -> SmtModel:
    """Layer-by-layer training: dictionary, codes, embedding, then the next
    layer consumes the embedded stream (centered, rescaled to unit mean norm)."""
    if not configs:
        raise ValueError("need at least one layer config")
    layers: list[SmtLayer] = []
    current = batch
    center: Optional[np.ndarray] = None
    scale = 1.0
    for li, cfg in enumerate(configs):
        X = current.signals
        if center is not None:
            X = (X - center[:, None]) / scale
        if cfg.fixed_dictionary is not None:
            atoms = np.asarray(cfg.fixed_dictionary, dtype=float)
            dct = Dictionary(atoms, np.linalg.norm(atoms, axis=0))
        else:
            if cfg.dict_cfg is None:
                raise ValueError(f"layer {li + 1}: dict_cfg or fixed_dictionary required")
            dct, _ = dict_mod.train_dictionary(X, cfg.dict_cfg)
        lam = (
            cfg.lambda_inference
            if cfg.lambda_inference is not None
            else solvers.default_lambda(X)
        )
        code_opts = SolverOptions(
            kkt_tol=cfg.solver_opts.kkt_tol,
            max_iters=cfg.solver_opts.max_iters,
            lipschitz=1.01 * solvers.gram_lipschitz(dct.atoms),
        )
        A = np.empty((dct.num_elements, X.shape[1]))
        for start, stop in chunk_slices(X.shape[1], current.chunk_boundaries):
            A[:, start:stop], _ = solvers.nn_lasso_batch(X[:, start:stop], dct, lam, code_opts)
        code_batch = SequenceBatch(A, list(current.chunk_boundaries), current.dt)
        emb, _ = embed_mod.train_embedding(code_batch, cfg.embed_cfg)
        layers.append(
            SmtLayer(
                dict=dct,
                embed=emb,
                recovery_cfg=cfg.recovery_cfg,
                lambda_inference=lam,
                input_center=None if center is None else center.copy(),
                input_scale=scale,
            )
        )
        # Prepare the next layer's input stream.
        B = emb.P @ A
        center = B.mean(axis=1)
        norms = np.linalg.norm(B - center[:, None], axis=0)
        scale = float(norms.mean()) or 1.0
        current = SequenceBatch(B, list(current.chunk_boundaries), current.dt)
    return SmtModel(layers=layers, whitening=whitening)


# ----------------------------------------------------------------------------
# Persistence


def _payload(model: SmtModel) -> bytes:
    parts = []
    if model.whitening is not None:
        parts.append(struct.pack("<BId", 1, model.whitening.frame_size, model.whitening.r0))
    else:
        parts.append(struct.pack("<BId", 0, 0, 0.0))
    for layer in model.layers:
        n, m = layer.dict.atoms.shape
        f = layer.embed.f
        parts.append(struct.pack("<III", n, m, f))
        parts.append(np.ascontiguousarray(layer.dict.atoms, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.embed.P, dtype="<f8").tobytes())
        has_center = layer.input_center is not None
        parts.append(struct.pack("<B", int(has_center)))
        if has_center:
            parts.append(np.ascontiguousarray(layer.input_center, dtype="<f8").tobytes())
        rec_lam = layer.recovery_cfg.lam if layer.recovery_cfg.lam is not None else float("nan")
        parts.append(
            struct.pack(
                "<dddB",
                layer.input_scale,
                layer.lambda_inference,
                rec_lam,
                int(layer.recovery_cfg.use_canonical_weights),
            )
        )
    return b"".join(parts)


def _checksum(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def save_model(model: SmtModel, path) -> None:
    payload = _payload(model)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", model.format_version, model.depth))
        fh.write(payload)
        fh.write(struct.pack("<Q", _checksum(payload)))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.buf):
            raise TruncatedFile(
                f"needed {count} bytes at offset {self.pos}, file has {len(self.buf)}"
            )
        out = self.buf[self.pos : self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(float)


def load_model(path) -> SmtModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise TruncatedFile("file shorter than header")
    if blob[:4] != _MAGIC:
        raise BadMagic(f"bad magic {blob[:4]!r}")
    version, depth = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"format version {version}, expected {FORMAT_VERSION}")
    if len(blob) < 20:
        raise TruncatedFile("missing checksum")
    payload, stored = blob[12:-8], struct.unpack("<Q", blob[-8:])[0]
    if _checksum(payload) != stored:
        raise ChecksumMismatch("payload checksum does not match")

    rd = _Reader(payload)
    has_whitening, frame_size, r0 = rd.unpack("<BId")
    whitening = whitening_mask(frame_size, r0) if has_whitening else None
    layers = []
    for _ in range(depth):
        n, m, f = rd.unpack("<III")
        atoms = rd.array(n * m).reshape(n, m)
        P = rd.array(f * m).reshape(f, m)
        (has_center,) = rd.unpack("<B")
        centerv = rd.array(n) if has_center else None
        scale, lam_inf, rec_lam, canonical = rd.unpack("<dddB")
        from .linalg import MomentMatrix

        # The metric is not persisted; store an identity placeholder of the
        # right size (inference and recovery never need it).
        metric = MomentMatrix(np.eye(m), 0, 0.0)
        emb = EmbeddingMatrix(P=P, f=f, metric=metric, method="loaded")
        layers.append(
            SmtLayer(
                dict=Dictionary(atoms, np.linalg.norm(atoms, axis=0)),
                embed=emb,
                recovery_cfg=RecoveryConfig(
                    lam=None if np.isnan(rec_lam) else rec_lam,
                    use_canonical_weights=bool(canonical),
                ),
                lambda_inference=lam_inf,
                input_center=centerv,
                input_scale=scale,
            )
        )
    return SmtModel(layers=layers, whitening=whitening, format_version=version)
