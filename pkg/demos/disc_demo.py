"""Disc-world walkthrough: learn a 2-D geometry from sparse co-activation.

A point wanders inside the unit disc.  At every time step it is encoded as a
sparse convex combination of its 4 nearest landmarks, so the raw code lives
on a 300-dimensional simplex and carries no explicit coordinates.  The
embedding is trained only on temporal smoothness, yet two of its rows come
out as near-affine functions of the true (x, y) landmark positions, and
sparse inversion of an embedded one-hot recovers the landmark location.

Run:
    python3 demos/disc_demo.py [--plot]
"""
import argparse

import numpy as np

from smt import data, recovery
from smt.embedding import EmbedConfig, train_embedding


def recovered_center(landmarks, emb, beta):
    code = recovery.invert_embedding(beta, emb)
    w = code.values
    return (landmarks * w).sum(axis=1) / w.sum()


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--plot", action="store_true", help="show matplotlib figures")
    args = ap.parse_args()

    print("1. Sampling a 300-landmark disc world and 2000 random walks ...")
    world = data.make_disc_world(300, seed=0)
    codes = data.disc_trajectory_codes(world, k=4, num_traj=2000,
                                       steps_per_traj=12, seed=1)
    L = world.landmarks

    print("2. Solving the smoothness-optimal embedding (f=21, analytic) ...")
    emb, _ = train_embedding(codes, EmbedConfig(f=21, method="analytic"))
    orth = np.linalg.norm(emb.P @ emb.metric.matrix @ emb.P.T - np.eye(emb.f))
    print(f"   orthonormality residual |P V P' - I| = {orth:.2e}")

    print("3. Rows 1 and 2 of P against an affine fit of (x, y):")
    design = np.c_[np.ones(L.shape[1]), L.T]
    for r in (1, 2):
        coef, *_ = np.linalg.lstsq(design, emb.P[r], rcond=None)
        corr = np.corrcoef(emb.P[r], design @ coef)[0, 1]
        print(f"   row {r}: corr = {corr:.3f}   affine coef = {np.round(coef, 3)}")

    print("4. One-sparse recovery: embed a one-hot code, invert, compare ...")
    rng = np.random.default_rng(7)
    errs = []
    for _ in range(100):
        j = int(rng.integers(L.shape[1]))
        c = recovered_center(L, emb, emb.P[:, j])
        errs.append(np.linalg.norm(c - L[:, j]))
    errs = np.array(errs)
    print(f"   median position error {np.median(errs):.4f}, "
          f"{(errs <= 0.15).sum()}/100 within 0.15")

    if args.plot:
        import matplotlib.pyplot as plt

        fig, axes = plt.subplots(1, 2, figsize=(9, 4))
        sc = axes[0].scatter(L[0], L[1], c=emb.P[1], cmap="coolwarm")
        axes[0].set_title("row 1 of P over landmark positions")
        fig.colorbar(sc, ax=axes[0])
        axes[1].scatter(emb.P[1], emb.P[2], s=8)
        axes[1].set_title("landmarks in embedding rows (1, 2)")
        plt.tight_layout()
        plt.show()


if __name__ == "__main__":
    main()
