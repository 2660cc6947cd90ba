"""Command-line front end.

Subcommands: disc-demo, train, encode, decode, analyze.  Every command
writes CSV data files plus a sidecar JSON with the resolved config, its
hash, and the package version; reruns with the same seed and config are
byte-identical (timestamps go to the log file only).

Exit codes: 0 success, 2 validation/config error, 3 numerical failure,
4 I/O error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, analysis, data, embedding, model as model_mod, recovery, solvers
from .dictionary import DictLearnConfig
from .embedding import EmbedConfig
from .errors import SmtError
from .model import LayerTrainConfig, SmtModel, load_model, save_model, train_stack

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


class ConfigError(Exception):
    pass


def _read_config_file(path: str) -> dict:
    """key=value lines, '#' comments."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _apply_config_file(args: argparse.Namespace, parser_dests: set) -> None:
    if not getattr(args, "config", None):
        return
    overrides = _read_config_file(args.config)
    for key, value in overrides.items():
        if key not in parser_dests:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(args, key)
        if isinstance(current, bool):
            setattr(args, key, value.lower() in ("1", "true", "yes"))
        elif isinstance(current, int):
            setattr(args, key, int(value))
        elif isinstance(current, float):
            setattr(args, key, float(value))
        else:
            setattr(args, key, value)


def _resolved_config(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    return cfg


def _write_meta(outdir: Path, command: str, cfg: dict) -> None:
    blob = json.dumps(cfg, sort_keys=True, default=str)
    meta = {
        "command": command,
        "config": cfg,
        "config_hash": hashlib.sha256(blob.encode()).hexdigest(),
        "version": __version__,
    }
    (outdir / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2, default=str) + "\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    return str(v)


def _log(outdir: Path, message: str) -> None:
    with open(outdir / "run.log", "a") as fh:
        fh.write(f"[{time.strftime('%Y-%m-%dT%H:%M:%S')}] {message}\n")


def _threads(args) -> int:
    if getattr(args, "threads", 0):
        return args.threads
    env = os.environ.get("SMT_THREADS")
    if env:
        return int(env)
    return os.cpu_count() or 1


# ----------------------------------------------------------------------------
# disc-demo


def cmd_disc_demo(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = _resolved_config(args)
    _write_meta(outdir, "disc-demo", cfg)
    _log(outdir, f"disc-demo start: {cfg}")

    world = data.make_disc_world(args.landmarks, seed=args.seed)
    codes = data.disc_trajectory_codes(
        world, k=args.k, num_traj=args.trajectories,
        steps_per_traj=args.steps_per_traj, seed=args.seed + 1,
    )
    emb, _ = embedding.train_embedding(codes, EmbedConfig(f=args.f, method="analytic"))
    L = world.landmarks
    f = emb.f

    _write_csv(
        outdir / "p_rows.csv",
        ["landmark", "x", "y"] + [f"p{r + 1}" for r in range(f)],
        ([j, L[0, j], L[1, j]] + [emb.P[r, j] for r in range(f)] for j in range(L.shape[1])),
    )
    if f >= 3:
        _write_csv(
            outdir / "embedding_2d.csv",
            ["landmark", "beta2", "beta3"],
            ([j, emb.P[1, j], emb.P[2, j]] for j in range(L.shape[1])),
        )

    checks = []
    V = emb.metric.matrix
    orth = float(np.linalg.norm(emb.P @ V @ emb.P.T - np.eye(f)))
    checks.append(("orthonormality", orth, 1e-6 * f, orth <= 1e-6 * f))

    design = np.c_[np.ones(L.shape[1]), L.T]
    min_corr = 1.0
    if f >= 3:
        for r in (1, 2):
            fit = design @ np.linalg.lstsq(design, emb.P[r], rcond=None)[0]
            min_corr = min(min_corr, float(np.corrcoef(emb.P[r], fit)[0, 1]))
    checks.append(("affine_rows_2_3", min_corr, 0.9, min_corr >= 0.9))

    rng = np.random.default_rng(args.seed + 2)
    rows = []
    hits = 0
    for trial in range(args.recovery_trials):
        j = int(rng.integers(L.shape[1]))
        code = recovery.invert_embedding(emb.P[:, j], emb)
        mass = code.values
        center = (L * mass).sum(axis=1) / mass.sum() if mass.sum() > 0 else np.full(2, np.nan)
        dist = float(np.linalg.norm(center - L[:, j]))
        hit = dist <= 0.15
        hits += hit
        rows.append([trial, L[0, j], L[1, j], center[0], center[1], dist, int(hit)])
    _write_csv(
        outdir / "recovery_1sparse.csv",
        ["trial", "planted_x", "planted_y", "rec_x", "rec_y", "dist", "hit"],
        rows,
    )
    rate = hits / max(args.recovery_trials, 1)
    checks.append(("recovery_1sparse_rate", rate, 0.95, rate >= 0.95))

    rows4, rate4 = _four_sparse_trials(world, emb, args.seed + 3, args.recovery_trials)
    _write_csv(
        outdir / "recovery_4sparse.csv",
        ["trial", "matched", "success"],
        rows4,
    )
    checks.append(("recovery_4sparse_rate", rate4, 0.8, rate4 >= 0.8))

    _write_csv(
        outdir / "summary.csv",
        ["check", "value", "threshold", "passed"],
        ([name, value, thr, int(ok)] for name, value, thr, ok in checks),
    )
    failed = [c for c in checks if not c[3]]
    _log(outdir, f"disc-demo done; {len(failed)} failed checks")
    return EXIT_OK if not failed else EXIT_NUMERIC


def _four_sparse_trials(world, emb, seed, trials, radius=0.2, min_sep=0.55):
    rng = np.random.default_rng(seed)
    L = world.landmarks
    rows = []
    good = 0
    for trial in range(trials):
        planted = _separated_landmarks(rng, L, 4, min_sep)
        values = np.zeros(L.shape[1])
        values[planted] = 1.0
        beta = emb.P @ values
        code = recovery.invert_embedding(beta, emb)
        matched = match_clusters(L, code.values, L[:, planted], radius)
        rows.append([trial, matched, int(matched == 4)])
        good += matched == 4
    return rows, good / max(trials, 1)


def _separated_landmarks(rng, L, count, min_sep):
    while True:
        idx = rng.choice(L.shape[1], size=count, replace=False)
        pts = L[:, idx]
        d = np.linalg.norm(pts[:, :, None] - pts[:, None, :], axis=0)
        if d[np.triu_indices(count, 1)].min() >= min_sep:
            return idx


def match_clusters(landmarks, mass, targets, radius):
    """Greedy cluster matching of recovered mass against planted locations.

    Extracts up to targets.shape[1] clusters (largest remaining mass, plus
    mass within ``radius``), then counts targets within ``radius`` of a
    distinct cluster centroid.
    """
    mass = mass.copy()
    centers = []
    for _ in range(targets.shape[1]):
        if mass.max() <= 0:
            break
        j = int(np.argmax(mass))
        near = np.linalg.norm(landmarks - landmarks[:, j : j + 1], axis=0) <= radius
        w = mass * near
        centers.append((landmarks * w).sum(axis=1) / w.sum())
        mass[near] = 0.0
    matched = 0
    used = set()
    for t in range(targets.shape[1]):
        best, best_d = None, radius
        for ci, c in enumerate(centers):
            if ci in used:
                continue
            d = float(np.linalg.norm(c - targets[:, t]))
            if d <= best_d:
                best, best_d = ci, d
        if best is not None:
            used.add(best)
            matched += 1
    return matched


# ----------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = _resolved_config(args)
    _write_meta(outdir, "train", cfg)
    _log(outdir, f"train start: {cfg}")

    batch, whitening = _load_training_batch(args)
    configs = []
    for layer in range(args.depth):
        num_elements = args.elements if layer == 0 else args.elements2
        f = args.f if layer == 0 else args.f2
        configs.append(
            LayerTrainConfig(
                dict_cfg=DictLearnConfig(
                    num_elements=num_elements,
                    steps=args.dict_steps,
                    seed=args.seed + layer,
                    eta0=args.eta,
                ),
                embed_cfg=EmbedConfig(f=f, method=args.method, seed=args.seed + layer),
            )
        )
    mdl = train_stack(batch, configs, whitening=whitening)
    save_model(mdl, outdir / "model.smt")
    _log(outdir, "train done")
    return EXIT_OK


def _load_training_batch(args):
    if args.frames:
        frames = data.load_frames(args.frames)
        size = frames.shape[1]
        spec = data.whitening_mask(size)
        white = np.stack([data.whiten_frame(fr, spec) for fr in frames])
        batch = data.extract_patch_sequences(
            white, patch=args.patch, stride=args.patch, chunk_len=args.chunk_len
        )
        return batch, data.whitening_mask(args.patch)
    cfg = data.MovingFeatureConfig(
        patch=args.patch, num_seq=args.sequences, seq_len=args.seq_len
    )
    batch, _tracks = data.make_moving_feature_sequences(cfg, seed=args.seed)
    return batch, data.whitening_mask(args.patch)


# ----------------------------------------------------------------------------
# encode / decode / analyze


def _load_input_batch(args, mdl: SmtModel):
    n = mdl.layers[0].dict.signal_dim
    if args.frames:
        frames = data.load_frames(args.frames)
        patch = int(round(np.sqrt(n)))
        if frames.shape[1] == patch and frames.shape[2] == patch:
            # Pre-sized patch frames: one chunk, whiten per frame.
            spec = mdl.whitening or data.whitening_mask(patch)
            sig = np.stack(
                [data.whiten_frame(fr, spec).flatten(order="F") for fr in frames]
            ).T
            return data.SequenceBatch(sig, [0])
        spec = data.whitening_mask(frames.shape[1])
        white = np.stack([data.whiten_frame(fr, spec) for fr in frames])
        return data.extract_patch_sequences(white, patch=patch, stride=patch)
    cfg = data.MovingFeatureConfig(
        patch=int(round(np.sqrt(n))), num_seq=args.sequences, seq_len=args.seq_len
    )
    batch, _ = data.make_moving_feature_sequences(cfg, seed=args.seed)
    return batch


def _write_series(path: Path, name: str, batch: data.SequenceBatch) -> None:
    dim = batch.signals.shape[0]
    starts = set(batch.chunk_boundaries)
    _write_csv(
        path,
        ["t", "chunk_start"] + [f"{name}{i}" for i in range(dim)],
        (
            [t, int(t in starts)] + list(batch.signals[:, t])
            for t in range(batch.T)
        ),
    )


def cmd_encode(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = _resolved_config(args)
    _write_meta(outdir, "encode", cfg)
    mdl = load_model(args.model)
    batch = _load_input_batch(args, mdl)
    layer = args.layer or mdl.depth
    alphas, betas = model_mod.encode_sequence_batch(batch, mdl, layer, gamma0=args.gamma0)
    _write_series(outdir / "alpha.csv", "a", alphas)
    _write_series(outdir / "beta.csv", "b", betas)
    _log(outdir, f"encode done: {batch.T} timesteps at layer {layer}")
    return EXIT_OK


def cmd_decode(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = _resolved_config(args)
    _write_meta(outdir, "decode", cfg)
    mdl = load_model(args.model)
    layer = args.layer or mdl.depth
    batch = _load_input_batch(args, mdl)
    _, betas = model_mod.encode_sequence_batch(batch, mdl, layer)
    errors = []
    recons = np.empty_like(batch.signals)
    for t in range(batch.T):
        rec = model_mod.decode(betas.signals[:, t], mdl, layer)
        recons[:, t] = rec[: batch.signals.shape[0]]
        x = batch.signals[:, t]
        denom = np.linalg.norm(x)
        errors.append([t, float(np.linalg.norm(x - recons[:, t]) / denom) if denom > 0 else 0.0])
    _write_csv(outdir / "roundtrip_error.csv", ["t", "relative_error"], errors)
    n = batch.signals.shape[0]
    side = int(round(np.sqrt(n)))
    if side * side == n:
        frames = recons.T.reshape(-1, side, side).transpose(0, 2, 1)
        data.write_smtf(outdir / "reconstruction.smtf", frames)
    _log(outdir, "decode done")
    return EXIT_OK


def cmd_analyze(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = _resolved_config(args)
    _write_meta(outdir, "analyze", cfg)
    mdl = load_model(args.model)
    batch = _load_input_batch(args, mdl)
    alphas, betas = model_mod.encode_sequence_batch(batch, mdl, 1)
    ra = analysis.smoothness_ratio(alphas.signals, alphas.chunk_boundaries)
    rb = analysis.smoothness_ratio(betas.signals, betas.chunk_boundaries)
    _write_csv(
        outdir / "smoothness.csv",
        ["series", "second_difference_ratio"],
        [["alpha", ra], ["beta", rb]],
    )

    emb = mdl.layers[0].embed
    norms = np.linalg.norm(emb.P, axis=0)
    anchors = [int(j) for j in np.argsort(-norms)[: args.groups]]
    rows = []
    for anchor in anchors:
        group = analysis.affinity_group(emb, anchor, args.top_n)
        for rank, (j, sim) in enumerate(group.neighbors):
            rows.append([anchor, rank, j, sim])
    _write_csv(outdir / "affinity.csv", ["anchor", "rank", "neighbor", "cosine"], rows)

    dct = mdl.layers[0].dict
    n = dct.signal_dim
    side = int(round(np.sqrt(n)))
    if side * side == n:
        needle_rows = []
        fits = []
        for j in range(dct.num_elements):
            el = dct.atoms[:, j].reshape(side, side, order="F")
            try:
                fit = analysis.needle_fit(el)
            except SmtError:
                fit = None
            fits.append(fit)
            if fit is not None:
                needle_rows.append(
                    [j, fit.center[0], fit.center[1], fit.orientation, fit.length,
                     int(fit.fit_ok), fit.envelope_ev]
                )
        _write_csv(
            outdir / "needles.csv",
            ["element", "cx", "cy", "orientation", "length", "fit_ok", "envelope_ev"],
            needle_rows,
        )
        well = sum(1 for f in fits if f is not None and f.fit_ok and f.envelope_ev >= 0.6)
        top_m = min(args.top_m, well)
        if top_m > 0:
            per_elem, agg = analysis.neighbor_similarity_stats(
                dct, emb, top_m=top_m, top_k=args.top_k, patch_shape=(side, side)
            )
            rows = [
                [r["element"], r["embedding_dlength"], r["embedding_dangle"],
                 r["pixel_dlength"], r["pixel_dangle"]]
                for r in per_elem
            ]
            rows.append(
                ["aggregate", agg["embedding_dlength"], agg["embedding_dangle"],
                 agg["pixel_dlength"], agg["pixel_dangle"]]
            )
            _write_csv(
                outdir / "neighbor_stats.csv",
                ["element", "emb_dlength", "emb_dangle", "pix_dlength", "pix_dangle"],
                rows,
            )
    _log(outdir, "analyze done")
    return EXIT_OK


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="smt-out", help="output directory")
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--threads", type=int, default=0,
                       help="parallelism for batch solves (0 = all cores / SMT_THREADS)")

    p = sub.add_parser("disc-demo", help="unit-disc functional embedding demonstration")
    common(p)
    p.add_argument("--landmarks", type=int, default=300)
    p.add_argument("--f", type=int, default=21)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--trajectories", type=int, default=2000)
    p.add_argument("--steps-per-traj", dest="steps_per_traj", type=int, default=12)
    p.add_argument("--recovery-trials", dest="recovery_trials", type=int, default=100)
    p.set_defaults(func=cmd_disc_demo)

    p = sub.add_parser("train", help="train a model on frames or synthetic sequences")
    common(p)
    p.add_argument("--frames", default=None, help=".smtf or .pgm input; synthetic when absent")
    p.add_argument("--depth", type=int, default=1)
    p.add_argument("--patch", type=int, default=12)
    p.add_argument("--chunk-len", dest="chunk_len", type=int, default=9)
    p.add_argument("--sequences", type=int, default=300)
    p.add_argument("--seq-len", dest="seq_len", type=int, default=9)
    p.add_argument("--elements", type=int, default=120)
    p.add_argument("--elements2", type=int, default=60)
    p.add_argument("--f", type=int, default=24)
    p.add_argument("--f2", type=int, default=12)
    p.add_argument("--dict-steps", dest="dict_steps", type=int, default=400)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--method", choices=("analytic", "sgd"), default="analytic")
    p.set_defaults(func=cmd_train)

    for name, fn in (("encode", cmd_encode), ("decode", cmd_decode)):
        p = sub.add_parser(name)
        common(p)
        p.add_argument("--model", required=True)
        p.add_argument("--frames", default=None)
        p.add_argument("--layer", type=int, default=0, help="0 = model depth")
        p.add_argument("--sequences", type=int, default=20)
        p.add_argument("--seq-len", dest="seq_len", type=int, default=9)
        if name == "encode":
            p.add_argument("--gamma0", type=float, default=0.0)
        p.set_defaults(func=fn)

    p = sub.add_parser("analyze")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--frames", default=None)
    p.add_argument("--sequences", type=int, default=20)
    p.add_argument("--seq-len", dest="seq_len", type=int, default=9)
    p.add_argument("--groups", type=int, default=8)
    p.add_argument("--top-n", dest="top_n", type=int, default=40)
    p.add_argument("--top-m", dest="top_m", type=int, default=500)
    p.add_argument("--top-k", dest="top_k", type=int, default=9)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    try:
        dests = set(vars(args))
        _apply_config_file(args, dests)
        np.random.seed(args.seed)  # legacy generators, if any slip in
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SmtError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
