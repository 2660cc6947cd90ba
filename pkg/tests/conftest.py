"""Shared fixtures: the unit-disc world and a moving-blob patch pipeline.

Both are expensive to build, so they are session scoped and shared between
the unit tests and the acceptance suite.
"""
import numpy as np
import pytest

from smt import data, solvers
from smt.data import MovingFeatureConfig, SequenceBatch, make_moving_feature_sequences
from smt.dictionary import DictLearnConfig, Dictionary
from smt.embedding import EmbedConfig, chunk_slices, train_embedding
from smt.model import LayerTrainConfig, SmtLayer, SmtModel, train_stack

DISC_F = 21
BLOB_PATCH = 12
BLOB_SIGMA = 2.0
BLOB_SPEED = (0.2, 0.5)


@pytest.fixture(scope="session")
def disc_setup():
    """300-landmark disc world, 2000-trajectory codes, f=21 embedding."""
    world = data.make_disc_world(300, seed=0)
    codes = data.disc_trajectory_codes(world, k=4, num_traj=2000,
                                       steps_per_traj=12, seed=1)
    emb, _ = train_embedding(codes, EmbedConfig(f=DISC_F, method="analytic"))
    return world, codes, emb


def blob_dictionary(patch=BLOB_PATCH, sigma=BLOB_SIGMA):
    """Unit-norm whitened Gaussian bumps on a 1px grid inside the patch."""
    spec = data.whitening_mask(patch)
    grid = np.arange(1.5, patch - 1.0, 1.0)
    atoms = []
    for cy in grid:
        for cx in grid:
            fr = data._render_feature("blob", patch, cx, cy, sigma, 0.0, 0.0)
            atoms.append(data.whiten_frame(fr, spec).flatten(order="F"))
    Phi = np.array(atoms).T
    return Phi / np.linalg.norm(Phi, axis=0)


def blob_batch(num_seq, seed, seq_len=9):
    cfg = MovingFeatureConfig(patch=BLOB_PATCH, num_seq=num_seq, seq_len=seq_len,
                              speed_range=BLOB_SPEED,
                              sigma_range=(BLOB_SIGMA, BLOB_SIGMA),
                              features=("blob",))
    batch, _ = make_moving_feature_sequences(cfg, seed=seed)
    return batch


@pytest.fixture(scope="session")
def blob_setup():
    """Single-layer model over moving-blob sequences plus its training codes.

    Returns (Phi, train_batch, code_batch, model_f6).  The f=6 embedding is
    used by the straightening and stacking tests.
    """
    Phi = blob_dictionary()
    train = blob_batch(200, seed=0)
    model = train_stack(
        train,
        [LayerTrainConfig(fixed_dictionary=Phi, embed_cfg=EmbedConfig(f=6))],
    )
    layer = model.layers[0]
    A = np.empty((Phi.shape[1], train.T))
    opts = solvers.SolverOptions(lipschitz=1.01 * solvers.gram_lipschitz(Phi))
    for start, stop in chunk_slices(train.T, train.chunk_boundaries):
        A[:, start:stop], _ = solvers.nn_lasso_batch(
            train.signals[:, start:stop], Phi, layer.lambda_inference, opts
        )
    codes = SequenceBatch(A, list(train.chunk_boundaries))
    return Phi, train, codes, model


@pytest.fixture(scope="session")
def blob_model_f30(blob_setup):
    """Same dictionary and codes, wider (f=30) embedding; used by the
    temporal-regularization tests where the penalty needs enough rank."""
    Phi, _train, codes, model_f6 = blob_setup
    emb, _ = train_embedding(codes, EmbedConfig(f=30))
    layer = SmtLayer(dict=model_f6.layers[0].dict, embed=emb,
                     lambda_inference=model_f6.layers[0].lambda_inference)
    return SmtModel(layers=[layer])


@pytest.fixture(scope="session")
def two_layer_model(blob_setup):
    Phi, train, _codes, _model = blob_setup
    cfgs = [
        LayerTrainConfig(fixed_dictionary=Phi, embed_cfg=EmbedConfig(f=6)),
        LayerTrainConfig(dict_cfg=DictLearnConfig(num_elements=32, steps=300, seed=0),
                         embed_cfg=EmbedConfig(f=6)),
    ]
    return train_stack(train, cfgs)


def ring_bump_batch(seed, N=10, chunks=20, chunk_len=12):
    """Smooth bumps translating on a ring of N landmarks; every chunk is one
    constant-velocity trajectory.  Small enough for eigensolver oracles."""
    rng = np.random.default_rng(seed)
    blocks = []
    for _ in range(chunks):
        pos0 = rng.uniform(0, N)
        vel = rng.uniform(0.1, 0.5) * rng.choice([-1, 1])
        block = np.empty((N, chunk_len))
        for t in range(chunk_len):
            c = (pos0 + vel * t) % N
            d = np.minimum(np.abs(np.arange(N) - c), N - np.abs(np.arange(N) - c))
            block[:, t] = np.exp(-(d * d) / 2.0)
        blocks.append(block)
    starts = list(np.arange(chunks) * chunk_len)
    return SequenceBatch(np.concatenate(blocks, axis=1), starts)
