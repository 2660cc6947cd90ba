"""Quantitative analyses of trained representations.

Temporal smoothness of code time-series, affinity groups under embedding
cosine similarity, needle-parameter fits of patch-shaped dictionary
elements, and embedding-vs-pixel neighbor similarity statistics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .embedding import chunk_slices
from .errors import ChunkTooShort, InsufficientWellFit, ZeroColumn, ZeroElement


@dataclass
class NeedleParams:
    center: tuple[float, float]
    orientation: float  # radians in [0, pi)
    length: float
    fit_ok: bool
    aspect: float = 1.0
    envelope_ev: float = 0.0  # variance of the envelope explained by the fit


@dataclass
class AffinityGroup:
    anchor: int
    neighbors: list[tuple[int, float]]


def smoothness_ratio(series: np.ndarray, chunk_boundaries: Sequence[int]) -> float:
    """Scale-invariant second-difference ratio of a time-series matrix.

    mean_t ||y_t - y_{t-1}/2 - y_{t+1}/2|| over interior timepoints, divided
    by mean_t ||y_t|| over all timepoints.
    """
    Y = np.asarray(series, dtype=float)
    if Y.ndim == 1:
        Y = Y[None, :]
    diffs = []
    for start, stop in chunk_slices(Y.shape[1], chunk_boundaries):
        if stop - start < 3:
            continue
        block = Y[:, start:stop]
        d = block[:, 1:-1] - 0.5 * block[:, :-2] - 0.5 * block[:, 2:]
        diffs.append(np.linalg.norm(d, axis=0))
    if not diffs:
        raise ChunkTooShort("no chunk has length >= 3")
    num = float(np.concatenate(diffs).mean())
    den = float(np.linalg.norm(Y, axis=0).mean())
    return num / den if den > 0 else 0.0


def affinity_group(P_emb, anchor: int, top_n: int) -> AffinityGroup:
    """Top-n neighbors of an element by cosine similarity of embedding columns."""
    P = P_emb.P if hasattr(P_emb, "P") else np.asarray(P_emb, dtype=float)
    norms = np.linalg.norm(P, axis=0)
    if anchor < 0 or anchor >= P.shape[1]:
        raise IndexError(f"anchor {anchor} out of range")
    if norms[anchor] == 0:
        raise ZeroColumn(f"element {anchor} has zero embedding norm")
    valid = np.flatnonzero(norms > 0)
    sims = (P[:, valid].T @ P[:, anchor]) / (norms[valid] * norms[anchor])
    order = np.argsort(-sims, kind="stable")
    neighbors = []
    for i in order:
        j = int(valid[i])
        if j == anchor:
            continue
        neighbors.append((j, float(sims[i])))
        if len(neighbors) == top_n:
            break
    return AffinityGroup(anchor=anchor, neighbors=neighbors)


def _envelope(element: np.ndarray) -> np.ndarray:
    # Stand-in for the analytic-signal envelope: smoothed magnitude.
    return gaussian_filter(np.abs(element), sigma=1.5, mode="constant")


def needle_fit(element: np.ndarray) -> NeedleParams:
    """Summarize a patch-shaped element by center, orientation, and length.

    Center and length come from intensity-weighted moments of the envelope;
    orientation from the peak of the Fourier amplitude map (DC excluded).
    ``fit_ok`` is cleared when the envelope mass is spread like noise rather
    than concentrated like a Gaussian bump, or when the second-moment matrix
    is degenerate.
    """
    el = np.asarray(element, dtype=float)
    if el.ndim != 2:
        raise ZeroElement("expected a 2-D patch")
    if not np.any(el):
        raise ZeroElement("element is identically zero")
    env = _envelope(el)
    w = env / env.sum()
    ys, xs = np.mgrid[0 : el.shape[0], 0 : el.shape[1]]
    cx = float((w * xs).sum())
    cy = float((w * ys).sum())
    dx, dy = xs - cx, ys - cy
    cov = np.array(
        [
            [(w * dx * dx).sum(), (w * dx * dy).sum()],
            [(w * dx * dy).sum(), (w * dy * dy).sum()],
        ]
    )
    evals, _ = np.linalg.eigh(cov)
    lam_min, lam_max = float(evals[0]), float(evals[1])
    length = 2.0 * math.sqrt(max(lam_max, 0.0))
    aspect = math.sqrt(lam_max / lam_min) if lam_min > 1e-12 else float("inf")

    # Orientation from the dominant Fourier component; the element is
    # elongated perpendicular to its wave vector.
    F = np.abs(np.fft.fft2(el))
    F[0, 0] = 0.0
    iy, ix = np.unravel_index(np.argmax(F), F.shape)
    # Sub-bin refinement: amplitude-weighted centroid over the 3x3 peak
    # neighborhood (wrapped); the raw argmax quantizes the angle too hard.
    fy = fx = wsum = 0.0
    for oy in (-1, 0, 1):
        for ox in (-1, 0, 1):
            a = float(F[(iy + oy) % el.shape[0], (ix + ox) % el.shape[1]])
            fy += a * (np.fft.fftfreq(el.shape[0])[iy] + oy / el.shape[0])
            fx += a * (np.fft.fftfreq(el.shape[1])[ix] + ox / el.shape[1])
            wsum += a
    fy, fx = fy / wsum, fx / wsum
    orientation = (math.atan2(fy, fx) + 0.5 * math.pi) % math.pi

    # Gaussian-likeness: the normalized fourth moment of the Mahalanobis
    # radius is ~2 for a Gaussian envelope and ~1.4 for noise spread over
    # the whole patch.
    kurt = 0.0
    ok = lam_min > 1e-9 and aspect < 100.0
    if ok:
        cinv = np.linalg.inv(cov)
        d2 = cinv[0, 0] * dx * dx + 2 * cinv[0, 1] * dx * dy + cinv[1, 1] * dy * dy
        m2 = float((w * d2).sum())
        m4 = float((w * d2 * d2).sum())
        kurt = m4 / (m2 * m2) if m2 > 0 else 0.0
        ok = kurt >= 1.7
    ev = _envelope_ev(env, cx, cy, cov) if lam_min > 1e-9 else 0.0
    inside = 0 <= cx <= el.shape[1] - 1 and 0 <= cy <= el.shape[0] - 1
    return NeedleParams(
        center=(cx, cy),
        orientation=orientation,
        length=length,
        fit_ok=bool(ok and inside),
        aspect=aspect,
        envelope_ev=ev,
    )


def _envelope_ev(env: np.ndarray, cx: float, cy: float, cov: np.ndarray) -> float:
    ys, xs = np.mgrid[0 : env.shape[0], 0 : env.shape[1]]
    dx, dy = xs - cx, ys - cy
    cinv = np.linalg.inv(cov)
    d2 = cinv[0, 0] * dx * dx + 2 * cinv[0, 1] * dx * dy + cinv[1, 1] * dy * dy
    g = np.exp(-0.5 * d2)
    a = env - env.mean()
    b = g - g.mean()
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    return float((a * b).sum() / denom) ** 2 if denom > 0 else 0.0


def angular_distance(t1: float, t2: float) -> float:
    d = abs(t1 - t2) % math.pi
    return min(d, math.pi - d)


def neighbor_similarity_stats(
    dictionary,
    P_emb,
    top_m: int = 500,
    top_k: int = 9,
    patch_shape: Optional[tuple[int, int]] = None,
) -> tuple[list[dict], dict]:
    """Length/orientation similarity of embedding- vs pixel-space neighbors.

    Fits every atom, keeps the ``top_m`` best-fit ones (fit_ok and envelope
    explained variance >= 0.6, ranked by that variance), and for each
    compares its ``top_k`` nearest neighbors in embedding space (cosine of
    embedding columns) against pixel space (Euclidean distance on atoms).
    Returns (per-element rows, aggregate row).
    """
    Phi = np.asarray(getattr(dictionary, "atoms", dictionary), dtype=float)
    P = P_emb.P if hasattr(P_emb, "P") else np.asarray(P_emb, dtype=float)
    n, m = Phi.shape
    if patch_shape is None:
        side = int(round(math.sqrt(n)))
        if side * side != n:
            raise ValueError("patch_shape required for non-square signal dims")
        patch_shape = (side, side)

    fits = []
    for j in range(m):
        el = Phi[:, j].reshape(patch_shape, order="F")
        try:
            fits.append(needle_fit(el))
        except ZeroElement:
            fits.append(None)
    well = [
        j
        for j, fit in enumerate(fits)
        if fit is not None and fit.fit_ok and fit.envelope_ev >= 0.6
    ]
    if len(well) < top_m:
        raise InsufficientWellFit(f"only {len(well)} well-fit elements, need {top_m}")
    well = sorted(well, key=lambda j: -fits[j].envelope_ev)[:top_m]

    norms = np.linalg.norm(P, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    Pn = P / safe
    rows = []
    for j in well:
        sims = Pn.T @ Pn[:, j]
        sims[j] = -np.inf
        sims[norms == 0] = -np.inf
        emb_nbrs = np.argsort(-sims, kind="stable")[:top_k]
        d2 = ((Phi - Phi[:, j : j + 1]) ** 2).sum(axis=0)
        d2[j] = np.inf
        pix_nbrs = np.argsort(d2, kind="stable")[:top_k]
        row = {"element": j}
        for tag, nbrs in (("embedding", emb_nbrs), ("pixel", pix_nbrs)):
            usable = [i for i in nbrs if fits[i] is not None]
            dlen = [abs(fits[i].length - fits[j].length) for i in usable]
            dang = [angular_distance(fits[i].orientation, fits[j].orientation) for i in usable]
            row[f"{tag}_dlength"] = float(np.mean(dlen)) if dlen else float("nan")
            row[f"{tag}_dangle"] = float(np.mean(dang)) if dang else float("nan")
        rows.append(row)
    aggregate = {
        "embedding_dlength": float(np.nanmean([r["embedding_dlength"] for r in rows])),
        "embedding_dangle": float(np.nanmean([r["embedding_dangle"] for r in rows])),
        "pixel_dlength": float(np.nanmean([r["pixel_dlength"] for r in rows])),
        "pixel_dangle": float(np.nanmean([r["pixel_dangle"] for r in rows])),
    }
    return rows, aggregate
