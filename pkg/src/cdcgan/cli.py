"""Command-line interface.

Subcommands: train, sr, eval, gradcheck, make-manifest.
Exit codes: 0 success, 1 check failure, 2 usage/config error,
3 data mismatch.  Results go to stdout, diagnostics to stderr.
The CDCGAN_THREADS environment variable caps evaluation workers
(0 or unset = auto).
"""

from __future__ import annotations

import argparse
import glob
import os
import sys
import time

import numpy as np

from . import dataio, gradcheck, metrics, trainer
from .dataio import DataError
from .network import generator_forward, load_checkpoint
from .tensor import bicubic_resize
from .trainer import ConfigError

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_USAGE = 2
EXIT_DATA = 3


def _workers():
    raw = os.environ.get("CDCGAN_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"CDCGAN_THREADS must be an integer, got {raw!r}")
    if n < 0:
        raise ConfigError(f"CDCGAN_THREADS must be >= 0, got {n}")
    return n if n > 0 else min(os.cpu_count() or 1, 8)


def cmd_train(args):
    cfg, manifest, resume = trainer.config_from_json(args.config)
    ckpt = trainer.train(cfg, manifest, resume=resume, echo=True)
    print(f"checkpoint: {ckpt}")
    print(f"log: {cfg.log_path}")
    return EXIT_OK


def _load_for_inference(checkpoint, scale):
    gen, _, _, _, meta = load_checkpoint(checkpoint)
    # meta scale 0 marks a parameters-only checkpoint with no recorded scale.
    if meta["scale"] and scale and meta["scale"] != scale:
        raise DataError(f"{checkpoint}: trained for scale {meta['scale']}, "
                        f"requested scale {scale}")
    return gen


def cmd_sr(args):
    gen = _load_for_inference(args.checkpoint, args.scale)
    color_px = dataio.read_png(args.color, "rgb")
    depth_px = dataio.read_depth(args.depth)
    if color_px.shape[:2] != depth_px.shape[:2]:
        raise DataError(f"color {color_px.shape[:2]} and depth {depth_px.shape[:2]} "
                        f"sizes disagree")
    color_up = np.clip(bicubic_resize(dataio.to_unit(color_px), args.scale), 0.0, 1.0)
    depth_up = np.clip(bicubic_resize(dataio.to_unit(depth_px), args.scale), 0.0, 1.0)
    ycc = dataio.rgb_to_ycbcr(color_up)
    out = generator_forward(gen, ycc[..., 0:1], depth_up)
    sr_ycc = np.concatenate([out.color, ycc[..., 1:2], ycc[..., 2:3]], axis=3)
    sr_rgb = np.clip(dataio.ycbcr_to_rgb(sr_ycc), 0.0, 1.0)

    os.makedirs(args.out, exist_ok=True)
    color_name = os.path.splitext(os.path.basename(args.color))[0] + "_sr.png"
    depth_ext = ".pgm" if str(args.depth).lower().endswith(".pgm") else ".png"
    depth_name = os.path.splitext(os.path.basename(args.depth))[0] + "_sr" + depth_ext
    color_out = os.path.join(args.out, color_name)
    depth_out = os.path.join(args.out, depth_name)
    dataio.write_png(color_out, dataio.to_uint8(sr_rgb))
    dataio.write_depth(depth_out, dataio.to_uint8(np.clip(out.depth, 0.0, 1.0)))
    print(color_out)
    print(depth_out)
    return EXIT_OK


def cmd_eval(args):
    gen = _load_for_inference(args.checkpoint, args.scale)
    report = metrics.evaluate(gen, args.manifest, args.scale,
                              csv_path=args.csv, dump_dir=args.dump_dir,
                              workers=_workers())
    print(report.table())
    if args.csv:
        print(f"csv: {args.csv}")
    return EXIT_OK


def cmd_gradcheck(args):
    t0 = time.perf_counter()
    results = gradcheck.run_all(seed=args.seed, corrupt=args.corrupt)
    for name, err, passed in results:
        print(f"{name:<22} max_rel_err={err:.3e}  {'ok' if passed else 'FAIL'}")
    elapsed = time.perf_counter() - t0
    bad = [name for name, _, passed in results if not passed]
    if bad:
        print(f"gradcheck FAILED for: {', '.join(bad)} ({elapsed:.1f}s)")
        return EXIT_CHECK
    print(f"gradcheck passed: {len(results)} components < {gradcheck.THRESHOLD:g} "
          f"({elapsed:.1f}s)")
    return EXIT_OK


def cmd_make_manifest(args):
    if not os.path.isdir(args.root):
        raise ConfigError(f"dataset root is not a directory: {args.root}")
    colors = sorted(glob.glob(os.path.join(args.root, args.color_glob)))
    depths = sorted(glob.glob(os.path.join(args.root, args.depth_glob)))
    if not colors:
        raise DataError(f"no files match {args.color_glob!r} under {args.root}")
    if len(colors) != len(depths):
        raise DataError(f"{len(colors)} color files but {len(depths)} depth files")
    base = os.path.dirname(os.path.abspath(args.out)) or "."
    pairs = [(os.path.relpath(c, base), os.path.relpath(d, base))
             for c, d in zip(colors, depths)]
    dataio.write_manifest(args.out, pairs)
    if args.validate:
        for c, d in dataio.read_manifest(args.out):
            dataio.load_sample(c, d, args.scale)
    print(f"{args.out}: {len(pairs)} pairs")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cdcgan",
        description="Joint color-depth super-resolution: training, inference, "
                    "evaluation, and gradient verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training job from a JSON config")
    p.add_argument("--config", required=True, help="JSON config file")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sr", help="super-resolve one low-resolution pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--color", required=True, help="low-resolution color PNG")
    p.add_argument("--depth", required=True, help="low-resolution depth PNG/PGM")
    p.add_argument("--scale", required=True, type=int, choices=(2, 4))
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_sr)

    p = sub.add_parser("eval", help="score a checkpoint against a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--scale", required=True, type=int, choices=(2, 4))
    p.add_argument("--csv", default=None, help="write per-image rows here")
    p.add_argument("--dump-dir", default=None, help="dump reconstructed PNGs here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="verify every backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", default=None, help=argparse.SUPPRESS)  # test hook
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("make-manifest", help="pair color/depth files into a manifest")
    p.add_argument("--root", required=True)
    p.add_argument("--color-glob", default="color/*.png")
    p.add_argument("--depth-glob", default="depth/*.png")
    p.add_argument("--out", required=True)
    p.add_argument("--validate", action="store_true",
                   help="decode every pair before writing")
    p.add_argument("--scale", type=int, default=2, choices=(2, 4),
                   help="scale used by --validate")
    p.set_defaults(fn=cmd_make_manifest)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError) as exc:
        # bad checkpoints, shape mismatches, inconsistent inputs
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
