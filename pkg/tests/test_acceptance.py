"""End-to-end acceptance suite.

Each test exercises one headline capability at a fixed tolerance and prints
a single PASS/FAIL line (run pytest with -s to see them).  Shared expensive
fixtures live in conftest.py.
"""
import time

import numpy as np
import pytest
from scipy.linalg import subspace_angles

from smt import analysis, data, recovery
from smt.cli import EXIT_OK, _separated_landmarks, main, match_clusters
from smt.dictionary import DictLearnConfig
from smt.embedding import (
    EmbedConfig,
    build_second_diff,
    chunk_slices,
    embedding_objective,
    solve_embedding_analytic,
    train_embedding,
)
from smt.errors import BadMagic, ChecksumMismatch, TruncatedFile, VersionMismatch
from smt.model import (
    LayerTrainConfig,
    decode,
    encode_sequence_batch,
    load_model,
    save_model,
    train_stack,
)
from smt.recovery import reconstruct_through_stack
from smt.solvers import SolverOptions, SparseCode, nn_lasso

from .conftest import blob_batch, ring_bump_batch
from .oracles import kkt_violation_oracle, nn_lasso_objective, nn_lasso_oracle, random_lasso_instance
from .test_embedding import max_principal_angle_deg, random_v_orthonormal


def report(name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    print("\n" + line)
    return ok


def recovered_center(landmarks, emb, beta):
    code = recovery.invert_embedding(beta, emb)
    w = code.values
    if w.sum() <= 0:
        return np.full(2, np.nan)
    return (landmarks * w).sum(axis=1) / w.sum()


class TestDiscEmbedding:
    def test_criterion_1_disc_embedding(self, disc_setup):
        t0 = time.time()
        world, codes, emb = disc_setup
        L = world.landmarks
        f = emb.f

        orth = float(np.linalg.norm(emb.P @ emb.metric.matrix @ emb.P.T - np.eye(f)))
        ok_a = orth <= 1e-6 * f

        design = np.c_[np.ones(L.shape[1]), L.T]
        corrs = []
        for r in (1, 2):
            fit = design @ np.linalg.lstsq(design, emb.P[r], rcond=None)[0]
            corrs.append(float(np.corrcoef(emb.P[r], fit)[0, 1]))
        ok_b = min(corrs) >= 0.9

        rng = np.random.default_rng(7)
        hits = 0
        for _ in range(100):
            j = int(rng.integers(L.shape[1]))
            c = recovered_center(L, emb, emb.P[:, j])
            hits += float(np.linalg.norm(c - L[:, j])) <= 0.15
        ok_c = hits >= 95
        elapsed = time.time() - t0

        ok = ok_a and ok_b and ok_c
        assert report(
            "criterion 1 (disc embedding)", ok,
            f"orth={orth:.2e} (tol {1e-6 * f:.1e}), affine corr={min(corrs):.3f} "
            f"(>=0.9), 1-sparse hits={hits}/100 (>=95), {elapsed:.0f}s",
        )

    def test_criterion_2_four_sparse_recovery(self, disc_setup):
        t0 = time.time()
        world, _codes, emb = disc_setup
        L = world.landmarks
        rng = np.random.default_rng(11)
        good = 0
        for _ in range(200):
            planted = _separated_landmarks(rng, L, 4, 0.55)
            v = np.zeros(L.shape[1])
            v[planted] = 1.0
            code = recovery.invert_embedding(emb.P @ v, emb)
            good += match_clusters(L, code.values, L[:, planted], 0.2) == 4
        elapsed = time.time() - t0
        ok = good >= 160 and elapsed <= 120
        assert report(
            "criterion 2 (4-sparse recovery)", ok,
            f"all-4 matched in {good}/200 trials (>=160), {elapsed:.0f}s (<=120)",
        )


class TestEmbeddingOptimality:
    def test_criterion_3_analytic_optimality(self):
        rng = np.random.default_rng(0)
        worst_rel = 0.0
        frames_beaten = True
        for inst in range(20):
            batch = ring_bump_batch(100 + inst, N=10, chunks=4, chunk_len=10)
            D = build_second_diff(batch.T, batch.chunk_boundaries)
            emb = solve_embedding_analytic(batch.signals, D, f=3)
            obj = embedding_objective(emb.P, batch.signals, D)
            target = float(emb.spectrum[:3].sum())
            worst_rel = max(worst_rel, abs(obj - target) / max(abs(target), 1e-30))
            for _ in range(50):
                Q = random_v_orthonormal(rng, 3, 10, emb.metric.matrix)
                if embedding_objective(Q, batch.signals, D) < obj - 1e-9:
                    frames_beaten = False
        ok = worst_rel <= 1e-7 and frames_beaten
        assert report(
            "criterion 3 (analytic optimality)", ok,
            f"max rel gap to trailing-eigenvalue sum {worst_rel:.2e} (<=1e-7), "
            f"never beaten by 1000 random orthonormal frames: {frames_beaten}",
        )

    def test_criterion_4_sgd_vs_analytic(self):
        angle_ok = True
        worst_angle = 0.0
        for seed in range(5):
            batch = ring_bump_batch(seed)
            ana, _ = train_embedding(batch, EmbedConfig(f=4, method="analytic"))
            gap = float(ana.spectrum[4] - ana.spectrum[3])
            assert gap >= 0.1, f"instance {seed} has eigen-gap {gap:.3f}"
            # 250 epochs x 20 chunks = 5000 online steps
            sgd, _ = train_embedding(batch, EmbedConfig(f=4, method="sgd", epochs=250))
            ang = max_principal_angle_deg(ana, sgd)
            worst_angle = max(worst_angle, ang)
            angle_ok &= ang <= 5.0

        sparsity_ok = True
        fracs = []
        frac = lambda P: float((np.abs(P) < 1e-4).mean())
        for seed in range(5):
            batch = ring_bump_batch(seed, N=16)
            ana, _ = train_embedding(batch, EmbedConfig(f=4, method="analytic"))
            shrunk, _ = train_embedding(
                batch, EmbedConfig(f=4, method="sgd", epochs=250, gamma1=1.5))
            fracs.append((frac(ana.P), frac(shrunk.P)))
            sparsity_ok &= frac(shrunk.P) > frac(ana.P)

        ok = angle_ok and sparsity_ok
        assert report(
            "criterion 4 (online SGD embedding)", ok,
            f"max principal angle {worst_angle:.2f} deg (<=5) over 5 instances "
            f"within 5000 steps; shrinkage sparsity {fracs} strictly above "
            f"analytic in all instances: {sparsity_ok}",
        )


class TestSolverAcceptance:
    def test_criterion_5_nn_lasso_oracle(self):
        rng = np.random.default_rng(42)
        opts = SolverOptions(kkt_tol=1e-8, max_iters=20000)
        worst_gap = 0.0
        worst_kkt = 0.0
        all_converged = True
        for _ in range(50):
            x, Phi, lam = random_lasso_instance(rng, n=8, m=12, support=3)
            code, rep = nn_lasso(x, Phi, lam, opts)
            all_converged &= rep.converged
            _, obj_star = nn_lasso_oracle(x, Phi, lam)
            gap = nn_lasso_objective(x, Phi, lam, code.values) - obj_star
            worst_gap = max(worst_gap, gap)
            worst_kkt = max(worst_kkt, kkt_violation_oracle(x, Phi, lam, code.values))
        ok = worst_gap <= 1e-6 and worst_kkt <= 1e-6 and all_converged
        assert report(
            "criterion 5 (solver vs enumeration oracle)", ok,
            f"worst objective gap {worst_gap:.2e} (<=1e-6), worst KKT violation "
            f"{worst_kkt:.2e} (<=1e-6) over 50 instances, converged={all_converged}",
        )


class TestStraightening:
    def test_criterion_6_straightening(self, blob_setup):
        _Phi, _train, _codes, model = blob_setup
        held = blob_batch(30, seed=99)
        a, b = encode_sequence_batch(held, model, 1)
        ra = analysis.smoothness_ratio(a.signals, a.chunk_boundaries)
        rb = analysis.smoothness_ratio(b.signals, b.chunk_boundaries)
        ok_ratio = rb <= 0.1 * ra

        X = held.signals
        R = np.stack([decode(b.signals[:, t], model, 1) for t in range(held.T)], axis=1)
        err = float(np.linalg.norm(X - R) / np.linalg.norm(X))
        ok_dec = err <= 0.3
        ok = ok_ratio and ok_dec
        assert report(
            "criterion 6 (straightening, held out)", ok,
            f"ratio(beta)={rb:.4f} <= 0.1*ratio(alpha)={0.1 * ra:.4f}; "
            f"decode round-trip rel error {err:.3f} (<=0.3)",
        )

    def test_criterion_7_temporal_regularization(self, blob_model_f30):
        model = blob_model_f30
        wins_a = wins_b = 0
        runs = 20
        for run in range(runs):
            held = blob_batch(10, seed=1000 + run)
            a0, b0 = encode_sequence_batch(held, model, 1, gamma0=0.0)
            a1, b1 = encode_sequence_batch(held, model, 1, gamma0=2.0)
            ra0 = analysis.smoothness_ratio(a0.signals, a0.chunk_boundaries)
            ra1 = analysis.smoothness_ratio(a1.signals, a1.chunk_boundaries)
            rb0 = analysis.smoothness_ratio(b0.signals, b0.chunk_boundaries)
            rb1 = analysis.smoothness_ratio(b1.signals, b1.chunk_boundaries)
            wins_a += ra1 < ra0
            wins_b += rb1 < rb0
        ok = wins_a == runs and wins_b == runs
        assert report(
            "criterion 7 (temporal regularization)", ok,
            f"gamma0=2 strictly lowered ratio(alpha) in {wins_a}/{runs} and "
            f"ratio(beta) in {wins_b}/{runs} paired runs (need all)",
        )


class TestWhiteningAcceptance:
    def test_criterion_8_whitening(self):
        spec = data.whitening_mask(128)
        exact = spec.mask[48, 0] == 48.0 * np.exp(-1.0)

        size = 64
        spec64 = data.whitening_mask(size)
        y, x = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        worst = 0.0
        for u, v in [(4, 0), (7, 3), (0, 9), (11, 11)]:
            frame = np.sin(2 * np.pi * (u * y + v * x) / size + 0.4)
            out = data.whiten_frame(frame, spec64)
            worst = max(worst, float(np.max(np.abs(out - spec64.mask[u, v] * frame))))
        ok_sin = worst < 1e-6

        rng = np.random.default_rng(0)
        F = np.zeros((size, size), dtype=complex)
        for u, v in [(3, 2), (6, 9), (10, 1), (8, 8), (2, 12)]:
            c = rng.standard_normal() + 1j * rng.standard_normal()
            F[u, v] = c
            F[-u % size, -v % size] = np.conj(c)
        frame = np.real(np.fft.ifft2(F))
        back = data.unwhiten_frame(data.whiten_frame(frame, spec64), spec64)
        rt = float(np.linalg.norm(back - frame) / np.linalg.norm(frame))
        ok_rt = rt <= 0.05

        ok = exact and ok_sin and ok_rt
        assert report(
            "criterion 8 (whitening)", ok,
            f"mask(48)=48/e exactly: {exact}; sinusoid scaling err {worst:.1e} "
            f"(<1e-6); band-limited round trip {rt:.3f} (<=0.05)",
        )


class TestOperatorStructure:
    def test_criterion_9_second_difference(self):
        # integer data: X @ D involves only sums of halves, exact in floats
        T, bounds = 40, [0, 13, 26, 33]
        t = np.arange(T, dtype=float)
        X = np.vstack([3.0 * t - 7.0, np.full(T, 5.0), -2.0 * t])
        D = build_second_diff(T, bounds)
        bitexact = bool(np.all((X @ D.matrix) == 0.0))

        slices = chunk_slices(T, bounds)
        Dd = D.matrix.toarray()
        structural = True
        for c in range(Dd.shape[1]):
            rows = np.flatnonzero(Dd[:, c])
            inside = any(s <= rows[0] and rows[-1] < e for s, e in slices)
            structural &= rows.size == 3 and inside
        ok = bitexact and structural
        assert report(
            "criterion 9 (second-difference operator)", ok,
            f"X@D == 0 bit-exact for affine X: {bitexact}; every column inside "
            f"one chunk: {structural}",
        )


class TestHierarchy:
    def test_criterion_10_two_layer_stack(self, two_layer_model):
        t0 = time.time()
        model = two_layer_model
        assert model.depth == 2
        assert model.layers[1].dict.signal_dim == model.layers[0].embed.f

        m2 = model.layers[1].dict.num_elements
        finite_ok = True
        for j in (0, m2 // 2, m2 - 1):
            onehot = np.zeros(m2)
            onehot[j] = 1.0
            img = reconstruct_through_stack(SparseCode.from_values(onehot), model, 2)
            finite_ok &= bool(np.all(np.isfinite(img)) and np.linalg.norm(img) > 0)

        held = blob_batch(20, seed=99)
        _a2, b2 = encode_sequence_batch(held, model, 2)
        R = np.stack([decode(b2.signals[:, t], model, 2) for t in range(held.T)], axis=1)
        err = float(np.linalg.norm(held.signals - R) / np.linalg.norm(held.signals))
        elapsed = time.time() - t0
        ok = finite_ok and err <= 0.5
        assert report(
            "criterion 10 (two-layer stack)", ok,
            f"one-hot top-layer reconstructions finite and non-zero: {finite_ok}; "
            f"layer-2 encode->decode rel error {err:.3f} (<=0.5); {elapsed:.0f}s",
        )


class TestPersistenceAcceptance:
    def test_criterion_11_persistence(self, tmp_path):
        batch = ring_bump_batch(0)
        model = train_stack(batch, [
            LayerTrainConfig(fixed_dictionary=np.eye(10), embed_cfg=EmbedConfig(f=3)),
            LayerTrainConfig(dict_cfg=DictLearnConfig(num_elements=6, steps=20, seed=0),
                             embed_cfg=EmbedConfig(f=2)),
        ])
        p1, p2 = tmp_path / "m1.bin", tmp_path / "m2.bin"
        save_model(model, p1)
        save_model(load_model(p1), p2)
        identical = p1.read_bytes() == p2.read_bytes()

        blob = bytearray(p1.read_bytes())
        errors_ok = True
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"ZZZZ" + bytes(blob[4:]))
        errors_ok &= _raises(BadMagic, bad)
        vers = bytearray(blob)
        vers[4:8] = (99).to_bytes(4, "little")
        bad.write_bytes(bytes(vers))
        errors_ok &= _raises(VersionMismatch, bad)
        bad.write_bytes(bytes(blob[: len(blob) - 9]))
        errors_ok &= _raises((TruncatedFile, ChecksumMismatch), bad)
        corrupt = bytearray(blob)
        corrupt[30] ^= 0x55
        bad.write_bytes(bytes(corrupt))
        errors_ok &= _raises(ChecksumMismatch, bad)

        ok = identical and errors_ok
        assert report(
            "criterion 11 (persistence)", ok,
            f"save->load->save bit-identical: {identical}; corrupted/truncated "
            f"inputs rejected with the documented errors: {errors_ok}",
        )


def _raises(exc, path):
    try:
        load_model(path)
    except exc:
        return True
    except Exception:
        return False
    return False


class TestCliDeterminism:
    def test_criterion_12_cli_determinism(self, tmp_path):
        train_out = tmp_path / "train"
        args = ["train", "--out", str(train_out), "--seed", "2",
                "--sequences", "15", "--dict-steps", "20",
                "--elements", "20", "--f", "5"]
        assert main(args) == EXIT_OK
        snap_model = (train_out / "model.smt").read_bytes()
        snap_meta = (train_out / "meta.json").read_bytes()
        assert main(args) == EXIT_OK
        same_train = ((train_out / "model.smt").read_bytes() == snap_model
                      and (train_out / "meta.json").read_bytes() == snap_meta)

        enc_out = tmp_path / "enc"
        eargs = ["encode", "--out", str(enc_out), "--model",
                 str(train_out / "model.smt"), "--sequences", "2", "--seed", "8"]
        assert main(eargs) == EXIT_OK
        snaps = {p.name: p.read_bytes() for p in enc_out.iterdir() if p.name != "run.log"}
        assert main(eargs) == EXIT_OK
        same_enc = all(p.read_bytes() == snaps[p.name]
                       for p in enc_out.iterdir() if p.name != "run.log")

        ok = same_train and same_enc
        assert report(
            "criterion 12 (CLI determinism)", ok,
            f"train rerun byte-identical: {same_train}; encode rerun "
            f"byte-identical: {same_enc}",
        )
