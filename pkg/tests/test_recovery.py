"""Embedding inversion and stack reconstruction tests."""
import numpy as np
import pytest

from smt.dictionary import Dictionary
from smt.embedding import EmbeddingMatrix
from smt.errors import DimensionMismatch, LayerOutOfRange
from smt.linalg import MomentMatrix
from smt.model import SmtLayer, SmtModel
from smt.recovery import (
    RecoveryConfig,
    default_recovery_lambda,
    interpolate_elements,
    invert_embedding,
    reconstruct_layer1,
    reconstruct_through_stack,
)
from smt.solvers import SolverOptions, SparseCode

TIGHT = SolverOptions(kkt_tol=1e-9, max_iters=20000)


def make_embedding(P):
    m = P.shape[1]
    return EmbeddingMatrix(P=P, f=P.shape[0], method="analytic",
                           metric=MomentMatrix(np.eye(m), 1, 0.0))


class TestInvertEmbedding:
    def test_recovers_sparse_code_with_incoherent_rows(self):
        rng = np.random.default_rng(0)
        P = rng.standard_normal((20, 40))
        a = np.zeros(40)
        a[[3, 17, 29]] = [1.0, 0.5, 2.0]
        code = invert_embedding(P @ a, make_embedding(P),
                                RecoveryConfig(lam=0.01, opts=TIGHT))
        assert set(code.support) == {3, 17, 29}
        assert np.allclose(code.values, a, atol=0.01)

    def test_weighted_penalty_uses_column_norms(self):
        # two columns aligned with beta; the smaller-norm one has the
        # cheaper per-unit-signal cost only under canonical weights
        P = np.array([[2.0, 1.0], [0.0, 0.0]])
        beta = np.array([1.0, 0.0])
        code = invert_embedding(beta, make_embedding(P),
                                RecoveryConfig(lam=0.05, opts=TIGHT))
        # canonical z = (2, 1): per unit of reconstructed signal both cost
        # the same, so the better-conditioned (larger) column dominates
        assert code.values[0] > 0.0

    def test_default_lambda_scale(self):
        P = np.eye(3)
        beta = np.array([5.0, 1.0, 0.0])
        lam = default_recovery_lambda(beta, P, np.ones(3))
        assert lam == pytest.approx(0.05)
        assert default_recovery_lambda(np.zeros(3), P, np.ones(3)) > 0.0

    def test_dimension_check(self):
        with pytest.raises(DimensionMismatch):
            invert_embedding(np.ones(3), make_embedding(np.eye(2)))

    def test_accepts_plain_array(self):
        P = np.eye(4)
        code = invert_embedding(np.array([0.0, 1.0, 0.0, 0.0]), P,
                                RecoveryConfig(lam=0.01, opts=TIGHT))
        assert np.argmax(code.values) == 1


class TestReconstruct:
    def _toy_model(self):
        # orthonormal dictionary and identity-like embedding: every step of
        # the stack is exactly invertible
        n = 6
        Phi = np.eye(n)
        d = Dictionary(Phi, np.ones(n))
        emb = make_embedding(np.eye(n))
        layer = SmtLayer(dict=d, embed=emb,
                         recovery_cfg=RecoveryConfig(lam=1e-8, opts=TIGHT))
        return SmtModel(layers=[layer])

    def test_layer1_synthesis(self):
        rng = np.random.default_rng(1)
        Phi = rng.standard_normal((5, 9))
        a = np.abs(rng.standard_normal(9))
        got = reconstruct_layer1(SparseCode.from_values(a), Phi)
        assert np.allclose(got, Phi @ a)
        with pytest.raises(DimensionMismatch):
            reconstruct_layer1(SparseCode.from_values(np.ones(3)), Phi)

    def test_single_layer_stack_round_trip(self):
        model = self._toy_model()
        a = np.array([0.0, 2.0, 0.0, 1.0, 0.0, 0.0])
        x = reconstruct_through_stack(SparseCode.from_values(a), model, 1)
        assert np.allclose(x, a, atol=1e-8)

    def test_layer_bounds_checked(self):
        model = self._toy_model()
        with pytest.raises(LayerOutOfRange):
            reconstruct_through_stack(SparseCode.from_values(np.ones(6)), model, 2)
        with pytest.raises(LayerOutOfRange):
            reconstruct_through_stack(SparseCode.from_values(np.ones(6)), model, 0)

    def test_interpolate_elements(self):
        model = self._toy_model()
        x = interpolate_elements(model, 1, 0, 2)
        assert np.allclose(x, [0.5, 0.0, 0.5, 0.0, 0.0, 0.0], atol=1e-8)
        with pytest.raises(ValueError):
            interpolate_elements(model, 1, 1, 1)

    def test_two_layer_identity_stack(self):
        # both layers identity: recovering through the stack is exact
        n = 4
        eye_layer = lambda: SmtLayer(
            dict=Dictionary(np.eye(n), np.ones(n)),
            embed=make_embedding(np.eye(n)),
            recovery_cfg=RecoveryConfig(lam=1e-8, opts=TIGHT),
        )
        model = SmtModel(layers=[eye_layer(), eye_layer()])
        a2 = np.array([1.0, 0.0, 0.0, 0.5])
        x = reconstruct_through_stack(SparseCode.from_values(a2), model, 2)
        assert np.allclose(x, a2, atol=1e-6)
