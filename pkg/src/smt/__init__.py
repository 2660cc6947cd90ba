"""Sparse manifold transform: non-negative sparse coding plus a learned
temporal manifold embedding, stackable into a hierarchy."""

from .linalg import MomentMatrix, SymEigResult, inv_sqrt, second_moment, sym_eig
from .solvers import (
    SolveReport,
    SolverOptions,
    SparseCode,
    knn_interpolate,
    nn_lasso,
    nn_lasso_batch,
    temporal_regularized_infer,
    weighted_nn_lasso,
)
from .dictionary import (
    DictLearnConfig,
    Dictionary,
    dictionary_step,
    init_dictionary,
    train_dictionary,
)
from .embedding import (
    EmbedConfig,
    EmbeddingMatrix,
    SecondDiffOperator,
    build_second_diff,
    sgd_embedding_step,
    solve_embedding_analytic,
    train_embedding,
)
from .recovery import (
    RecoveryConfig,
    interpolate_elements,
    invert_embedding,
    reconstruct_layer1,
    reconstruct_through_stack,
)
from .model import (
    LayerTrainConfig,
    SmtLayer,
    SmtModel,
    decode,
    encode,
    encode_sequence_batch,
    load_model,
    save_model,
    train_stack,
)
from .data import (
    DiscWorld,
    MovingFeatureConfig,
    SequenceBatch,
    WhiteningSpec,
    disc_trajectory_codes,
    extract_patch_sequences,
    make_disc_world,
    make_moving_feature_sequences,
    unwhiten_frame,
    whiten_frame,
    whitening_mask,
)
from .analysis import (
    AffinityGroup,
    NeedleParams,
    affinity_group,
    needle_fit,
    neighbor_similarity_stats,
    smoothness_ratio,
)

__version__ = "0.1.0"
