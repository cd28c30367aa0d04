"""Command-line entry point: ``otvm datagen | train | infer | eval``.

Exit codes: 0 success, 1 computation failure, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import shutil
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import io
from .clipsim import EVAL_KERNELS, ClipSample, make_trimap, sample_trimap_kernel
from .config import STAGE_NAMES, get_config, load_config
from .engine import run_sequence
from .metrics import REGIONS, evaluate_sequence, write_csv, write_json
from .model import CheckpointError, build_model, load_checkpoint, save_checkpoint
from .synthetic import make_sources
from .trainer import FixedClips, SimulatedClips, run_stage, simulate_video_clips, stage_config
from .validation import check_sequence

log = logging.getLogger("otvm")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- datagen -------------------------------------------------------------------


def cmd_datagen(args):
    cfg = load_config(args.config) if args.config else get_config("toy")
    fgs = io.load_fg_sources(args.fg_dir, args.alpha_dir)
    bgs = io.load_bg_sources(args.bg_dir)
    if args.count < 1 or args.frames < 1:
        raise UsageError("--count and --frames must be positive")
    out = Path(args.out)
    existed = out.exists()
    try:
        names = io.generate_clip_set(out, fgs, bgs, args.count, args.frames, args.seed, cfg.sim)
    except BaseException:
        if not existed:
            shutil.rmtree(out, ignore_errors=True)
        raise
    print(f"wrote {len(names)} clips to {out}")
    return EXIT_OK


# -- train ---------------------------------------------------------------------


def _video_clips_from_windows(windows, sim_cfg, seed):
    rng = np.random.default_rng(seed)
    clips = []
    for w in windows:
        k = sample_trimap_kernel(rng, sim_cfg.trimap_kernel)
        tris = [make_trimap(a, k) for a in w["alphas"]]
        clips.append(ClipSample(w["frames"], w["alphas"], tris, w["fg"], w["bg"], {"trimap_kernel": k}))
    return clips


def load_training_data(path, stage_dataset, cfg, n_video_clips=3):
    """Pick a data source for a stage from what ``path`` holds.

    * a ``datagen`` clip set -> those fixed clips
    * ``fg/`` + ``bg/`` (+ ``alpha/``) stills -> simulated clips (fixed ones for video stages)
    * sequences with ``fg/alpha/bg`` folders -> fixed windows of real frames
    * nothing -> procedural synthetic stills
    """
    t, bs, seed = cfg.train.frames, cfg.train.batch_size, cfg.train.seed
    if path is None:
        sources = make_sources(3, max(cfg.sim.crop_sizes), seed)
    else:
        p = Path(path)
        if (p / io.MANIFEST).is_file():
            return FixedClips(io.read_clip_set(p), bs)
        if (p / "fg").is_dir() and (p / "bg").is_dir():
            sources = io.load_source_dir(p)
        elif p.is_dir():
            windows = io.load_video_triplets(p, T=t)
            return FixedClips(_video_clips_from_windows(windows, cfg.sim, seed), bs)
        else:
            raise io.DataError(f"no training data at {p}")
    if stage_dataset == "video":
        return FixedClips(simulate_video_clips(sources, n_video_clips, t, seed, cfg.sim), bs)
    return SimulatedClips(sources, cfg.sim, t, bs, seed)


def cmd_train(args):
    cfg = load_config(args.config) if args.config else get_config(args.preset)
    if args.iterations is not None:
        cfg.train.iterations[args.stage] = args.iterations
    if args.batch_size is not None:
        cfg.train.batch_size = args.batch_size
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.resume:
        try:
            model, _ = load_checkpoint(args.resume, expected_preset=cfg.preset)
        except CheckpointError as exc:
            raise UsageError(str(exc)) from exc
    else:
        model = build_model(cfg.model, seed=cfg.train.seed)
    torch.manual_seed(cfg.train.seed)
    sc = stage_config(args.stage, train_cfg=cfg.train)
    data = load_training_data(args.data, sc.dataset, cfg)
    start = time.perf_counter()
    result = run_stage(model, sc, data, cfg.train, log_path=args.log, checkpoint_path=args.out)
    finite = [x for x in result.losses if np.isfinite(x)]
    if not finite:
        print(f"stage {args.stage}: every step produced a non-finite loss", file=sys.stderr)
        return EXIT_FAIL
    save_checkpoint(args.out, model)
    print(
        f"stage {args.stage}: {sc.iterations} steps in {time.perf_counter() - start:.1f}s, "
        f"loss {finite[0]:.4f} -> {finite[-1]:.4f} ({result.skipped} skipped); wrote {args.out}"
    )
    return EXIT_OK


# -- infer ---------------------------------------------------------------------


def cmd_infer(args):
    if not Path(args.weights).is_file():
        raise io.DataError(f"weights file not found: {args.weights}")
    model, header = load_checkpoint(args.weights)
    frames, paths = io.read_frames(args.frames)
    first = io.read_trimap(args.trimap)
    try:
        frames, first = check_sequence(frames, first)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    results = run_sequence(frames, first, model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for t, (r, p) in enumerate(zip(results, paths)):
        names = {"source": p.name, "alpha": f"alpha_{t:05d}.png", "trimap": f"trimap_{t:05d}.png"}
        io.write_alpha(out / names["alpha"], r.alpha, bits=args.bits)
        io.write_trimap(out / names["trimap"], r.trimap)
        if args.save_fgbg:
            names["fg"], names["bg"] = f"fg_{t:05d}.png", f"bg_{t:05d}.png"
            io.write_image(out / names["fg"], r.fg)
            io.write_image(out / names["bg"], r.bg)
        records.append(names)
    io.write_json(
        out / io.MANIFEST,
        {
            "kind": "inference",
            "weights": str(args.weights),
            "preset": header["preset"],
            "frames": records,
            "bits": args.bits,
            "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        },
    )
    if args.timing:
        with open(args.timing, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["frame", "seconds", "peak_rss_mb"])
            for t, r in enumerate(results):
                w.writerow([t, f"{r.seconds:.6f}", f"{r.peak_rss_mb:.1f}"])
    print(f"wrote {len(results)} frames to {out}")
    return EXIT_OK


# -- eval ----------------------------------------------------------------------


def _alpha_paths(directory, prefix="alpha_"):
    d = Path(directory)
    if (d / "alpha").is_dir():
        d = d / "alpha"
    paths = io.list_images(d)
    tagged = [p for p in paths if p.name.startswith(prefix)]
    return tagged or paths


def cmd_eval(args):
    pred_paths, gt_paths = _alpha_paths(args.pred), _alpha_paths(args.gt)
    if not gt_paths:
        raise io.DataError(f"no ground-truth mattes in {args.gt}")
    if len(pred_paths) != len(gt_paths):
        raise UsageError(f"{len(pred_paths)} predicted frames vs {len(gt_paths)} ground-truth frames")
    pred = [io.read_alpha(p) for p in pred_paths]
    gt = [io.read_alpha(p) for p in gt_paths]
    pred_tris = None
    if args.trimap_quality:
        tri_paths = [p for p in io.list_images(args.pred) if p.name.startswith("trimap_")]
        if len(tri_paths) != len(gt):
            raise UsageError("--trimap-quality needs one trimap_*.png per frame in --pred")
        pred_tris = [io.read_trimap(p) for p in tri_paths]
    row = {"sequence": Path(args.pred).name}
    row.update(evaluate_sequence(pred, gt, args.setting, args.region, args.trimap_quality, pred_tris))
    if args.csv:
        write_csv([row], args.csv)
    if args.json:
        write_json([row], args.json)
    for k, v in row.items():
        print(f"{k}: {v:.6g}" if isinstance(v, float) else f"{k}: {v}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="otvm", description="One-trimap video matting")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="simulate training clips from still layers")
    p.add_argument("--fg-dir", required=True, help="foregrounds (RGBA, or RGB with --alpha-dir)")
    p.add_argument("--alpha-dir", default=None, help="mattes named like the foregrounds")
    p.add_argument("--bg-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=3)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="TOML config (sim section)")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", required=True, choices=STAGE_NAMES)
    p.add_argument("--config", default=None)
    p.add_argument("--preset", default="toy", choices=("toy", "paper"))
    p.add_argument("--data", default=None, help="clip set, still layers or video sequences")
    p.add_argument("--resume", default=None, help="checkpoint to start from")
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--log", default=None, help="JSON-lines training log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="matte a frame folder from its first-frame trimap")
    p.add_argument("--weights", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--trimap", required=True, help="frame-0 trimap PNG (0/128/255)")
    p.add_argument("--out", required=True)
    p.add_argument("--save-fgbg", action="store_true")
    p.add_argument("--timing", default=None, help="per-frame timing CSV")
    p.add_argument("--bits", type=int, default=8, choices=(8, 16))
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predicted mattes against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--setting", default="medium", choices=sorted(EVAL_KERNELS))
    p.add_argument("--region", default="unknown", choices=REGIONS)
    p.add_argument("--trimap-quality", action="store_true")
    p.add_argument("--csv", default=None)
    p.add_argument("--json", default=None)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, OSError, CheckpointError) as exc:
        print(f"otvm {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"otvm {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
