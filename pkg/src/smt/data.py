"""Data ingestion and synthetic datasets.

Covers Fourier-domain whitening of square frames, patch-sequence extraction,
the unit-disc landmark world with straight-line trajectories, and a
moving-feature patch-sequence generator used as a desk-scale stand-in for
natural video.  Frame I/O supports PGM (8/16-bit) and a raw float32 planar
format ("SMTF").
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import BadMagic, EmptyStream, SizeMismatch, TruncatedFile


@dataclass
class WhiteningSpec:
    frame_size: int
    r0: float
    mask: np.ndarray


@dataclass
class SequenceBatch:
    """Temporally ordered signal columns with chunk start indices."""

    signals: np.ndarray
    chunk_boundaries: list[int]
    dt: float = 1.0

    @property
    def T(self) -> int:
        return self.signals.shape[1]


@dataclass
class DiscWorld:
    landmarks: np.ndarray  # 2 x num_landmarks, all radii <= 1
    trajectories: list = field(default_factory=list)


def whitening_mask(frame_size: int, r0: Optional[float] = None) -> WhiteningSpec:
    """Amplitude mask w(r) = r * exp(-(r/r0)^4) on the FFT frequency grid.

    ``r0`` defaults to 48 scaled by frame_size/128.
    """
    if frame_size % 2 != 0:
        raise ValueError("frame_size must be even")
    if r0 is None:
        r0 = 48.0 * frame_size / 128.0
    if r0 <= 0:
        raise ValueError("r0 must be positive")
    freqs = np.fft.fftfreq(frame_size) * frame_size  # integer cycles per frame
    u, v = np.meshgrid(freqs, freqs, indexing="ij")
    r = np.hypot(u, v)
    mask = r * np.exp(-((r / r0) ** 4))
    return WhiteningSpec(frame_size=frame_size, r0=float(r0), mask=mask)


def whiten_frame(frame: np.ndarray, spec: WhiteningSpec) -> np.ndarray:
    """FFT -> multiply amplitude by the mask -> inverse FFT (real part)."""
    frame = np.asarray(frame, dtype=float)
    if frame.shape != (spec.frame_size, spec.frame_size):
        raise SizeMismatch(f"frame shape {frame.shape} != spec size {spec.frame_size}")
    return np.real(np.fft.ifft2(np.fft.fft2(frame) * spec.mask))


def unwhiten_frame(frame: np.ndarray, spec: WhiteningSpec, floor: float = 1e-3) -> np.ndarray:
    """Inverse of whiten_frame with the mask floored at floor * max(mask)."""
    frame = np.asarray(frame, dtype=float)
    if frame.shape != (spec.frame_size, spec.frame_size):
        raise SizeMismatch(f"frame shape {frame.shape} != spec size {spec.frame_size}")
    denom = np.maximum(spec.mask, floor * spec.mask.max())
    return np.real(np.fft.ifft2(np.fft.fft2(frame) / denom))


def extract_patch_sequences(
    frames,
    patch: int = 20,
    stride: Optional[int] = None,
    chunk_len: Optional[int] = None,
) -> SequenceBatch:
    """Track fixed spatial windows across consecutive frames.

    Each window's track is split into non-overlapping chunks of length
    ``chunk_len`` (the whole track when None); remainders shorter than 3 are
    dropped.  Patches are flattened column-major, signal_dim = patch**2.
    """
    frames = np.asarray(list(frames) if not isinstance(frames, np.ndarray) else frames, dtype=float)
    if frames.ndim != 3 or frames.shape[0] == 0:
        raise EmptyStream("expected a non-empty (T, H, W) frame stream")
    T, H, W = frames.shape
    stride = stride or patch
    if chunk_len is not None and chunk_len < 3:
        raise ValueError("chunk_len must be at least 3")
    rows = range(0, H - patch + 1, stride)
    cols = range(0, W - patch + 1, stride)
    chunk_len = chunk_len or T

    signals = []
    boundaries = []
    pos = 0
    for i in rows:
        for j in cols:
            track = frames[:, i : i + patch, j : j + patch]
            for start in range(0, T, chunk_len):
                sub = track[start : start + chunk_len]
                if sub.shape[0] < 3:
                    continue
                # column-major flattening of each patch
                block = sub.transpose(0, 2, 1).reshape(sub.shape[0], -1)
                boundaries.append(pos)
                signals.append(block.T)
                pos += sub.shape[0]
    if not signals:
        raise EmptyStream("no chunk of length >= 3 could be extracted")
    return SequenceBatch(signals=np.concatenate(signals, axis=1), chunk_boundaries=boundaries)


def make_disc_world(num_landmarks: int = 300, seed: int = 0) -> DiscWorld:
    """Landmarks sampled uniformly over the unit disc by rejection."""
    rng = np.random.default_rng(seed)
    pts = []
    while len(pts) < num_landmarks:
        cand = rng.uniform(-1.0, 1.0, size=2)
        if cand @ cand <= 1.0:
            pts.append(cand)
    return DiscWorld(landmarks=np.array(pts).T)


def mean_landmark_spacing(world: DiscWorld) -> float:
    """Mean nearest-neighbor distance among the landmarks."""
    L = world.landmarks
    d2 = ((L[:, :, None] - L[:, None, :]) ** 2).sum(axis=0)
    np.fill_diagonal(d2, np.inf)
    return float(np.sqrt(d2.min(axis=0)).mean())


def disc_trajectory_codes(
    world: DiscWorld,
    k: int = 4,
    num_traj: int = 200,
    steps_per_traj: int = 12,
    seed: int = 0,
    speed_range: tuple[float, float] = (0.02, 0.08),
    affine_weight: float = 1.0,
) -> SequenceBatch:
    """Straight-line trajectories on the disc, coded by KNN interpolation.

    Each trajectory starts at a uniform point with a uniform direction and a
    constant speed, and ends when it leaves the disc; trajectories shorter
    than 3 steps are skipped.  Columns are the non-negative interpolation
    codes; chunk boundaries separate trajectories.  The homogeneous row
    (``affine_weight``) keeps coefficient mass near one across the disc.
    """
    from .solvers import knn_interpolate

    rng = np.random.default_rng(seed)
    N = world.landmarks.shape[1]
    codes = []
    boundaries = []
    pos = 0
    made = 0
    while made < num_traj:
        start = rng.uniform(-1.0, 1.0, size=2)
        if start @ start > 1.0:
            continue
        theta = rng.uniform(0.0, 2.0 * np.pi)
        speed = rng.uniform(*speed_range)
        vel = speed * np.array([np.cos(theta), np.sin(theta)])
        points = []
        p = start
        for _ in range(steps_per_traj):
            if p @ p > 1.0:
                break
            points.append(p)
            p = p + vel
        if len(points) < 3:
            continue
        block = np.empty((N, len(points)))
        for t, q in enumerate(points):
            block[:, t] = knn_interpolate(q, world.landmarks, k, affine_weight).values
        codes.append(block)
        boundaries.append(pos)
        pos += len(points)
        world.trajectories.append((start, vel, len(points)))
        made += 1
    return SequenceBatch(signals=np.concatenate(codes, axis=1), chunk_boundaries=boundaries)


@dataclass
class MovingFeatureConfig:
    patch: int = 12
    num_seq: int = 200
    seq_len: int = 9
    features: tuple[str, ...] = ("blob",)   # "blob" and/or "gabor"
    speed_range: tuple[float, float] = (0.3, 1.0)
    sigma_range: tuple[float, float] = (1.2, 2.2)
    whiten: bool = True


def _render_feature(kind, patch, cx, cy, sigma, theta, freq):
    y, x = np.meshgrid(np.arange(patch), np.arange(patch), indexing="ij")
    dx, dy = x - cx, y - cy
    env = np.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))
    if kind == "blob":
        return env
    # Gabor: carrier along the wave direction theta, stripes perpendicular.
    u = dx * np.cos(theta) + dy * np.sin(theta)
    return env * np.cos(2.0 * np.pi * freq * u)


def make_moving_feature_sequences(
    config: MovingFeatureConfig, seed: int = 0
) -> tuple[SequenceBatch, np.ndarray]:
    """Gabor/blob features translating at constant velocity across patches.

    Returns the (optionally whitened) flattened patch sequences plus the
    ground-truth tracks, one row (seq, t, x, y, orientation) per frame.
    """
    rng = np.random.default_rng(seed)
    p = config.patch
    spec = whitening_mask(p) if config.whiten else None
    n = p * p
    signals = np.empty((n, config.num_seq * config.seq_len))
    boundaries = []
    tracks = []
    col = 0
    for s in range(config.num_seq):
        kind = config.features[rng.integers(len(config.features))]
        sigma = rng.uniform(*config.sigma_range)
        theta = rng.uniform(0.0, np.pi)
        freq = rng.uniform(0.15, 0.3)
        # Start and velocity chosen so the feature stays mostly inside.
        margin = 2.0
        cx = rng.uniform(margin, p - margin)
        cy = rng.uniform(margin, p - margin)
        ang = rng.uniform(0.0, 2.0 * np.pi)
        speed = rng.uniform(*config.speed_range)
        vx, vy = speed * np.cos(ang), speed * np.sin(ang)
        boundaries.append(col)
        for t in range(config.seq_len):
            fx, fy = cx + vx * t, cy + vy * t
            frame = _render_feature(kind, p, fx, fy, sigma, theta, freq)
            if spec is not None:
                frame = whiten_frame(frame, spec)
            signals[:, col] = frame.flatten(order="F")
            tracks.append((s, t, fx, fy, theta))
            col += 1
    batch = SequenceBatch(signals=signals, chunk_boundaries=boundaries)
    return batch, np.array(tracks)


# ----------------------------------------------------------------------------
# Frame file formats

_SMTF_MAGIC = b"SMTF"


def write_smtf(path, frames: np.ndarray) -> None:
    """Raw little-endian float32 planar frames with a 16-byte header."""
    frames = np.asarray(frames, dtype="<f4")
    if frames.ndim != 3:
        raise SizeMismatch("expected (count, height, width) frames")
    count, height, width = frames.shape
    with open(path, "wb") as fh:
        fh.write(_SMTF_MAGIC)
        fh.write(struct.pack("<III", width, height, count))
        fh.write(frames.tobytes())


def read_smtf(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise TruncatedFile("SMTF header truncated")
        if header[:4] != _SMTF_MAGIC:
            raise BadMagic(f"not an SMTF file: magic {header[:4]!r}")
        width, height, count = struct.unpack("<III", header[4:])
        payload = fh.read()
    expected = 4 * width * height * count
    if len(payload) < expected:
        raise TruncatedFile(f"expected {expected} payload bytes, got {len(payload)}")
    data = np.frombuffer(payload[:expected], dtype="<f4")
    return data.reshape(count, height, width).astype(float)


def read_pgm(path) -> np.ndarray:
    """Binary (P5) or ASCII (P2) PGM, 8 or 16 bit."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    i = 0
    while len(tokens) < 4 and i < len(data):
        # Skip whitespace and comments token by token.
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(data) and not data[i : i + 1].isspace():
            i += 1
        tokens.append(data[start:i])
    if len(tokens) < 4:
        raise TruncatedFile("PGM header truncated")
    magic = tokens[0]
    if magic not in (b"P5", b"P2"):
        raise BadMagic(f"not a PGM file: magic {magic!r}")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == b"P2":
        values = np.array(data[i:].split(), dtype=float)
        if values.size < width * height:
            raise TruncatedFile("PGM pixel data truncated")
        return values[: width * height].reshape(height, width)
    i += 1  # single whitespace byte after maxval
    dtype = ">u2" if maxval > 255 else "u1"
    pixels = np.frombuffer(data[i:], dtype=dtype)
    if pixels.size < width * height:
        raise TruncatedFile("PGM pixel data truncated")
    return pixels[: width * height].reshape(height, width).astype(float)


def write_pgm(path, image: np.ndarray, maxval: int = 255) -> None:
    image = np.asarray(image)
    lo, hi = float(image.min()), float(image.max())
    scale = (maxval / (hi - lo)) if hi > lo else 0.0
    quant = np.round((image - lo) * scale).astype(">u2" if maxval > 255 else "u1")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n{maxval}\n".encode())
        fh.write(quant.tobytes())


def load_frames(path) -> np.ndarray:
    """Dispatch on extension: .smtf raw stream or a single .pgm frame."""
    path = str(path)
    if path.endswith(".smtf"):
        return read_smtf(path)
    if path.endswith(".pgm"):
        return read_pgm(path)[None, :, :]
    raise BadMagic(f"unsupported frame file extension: {path}")
