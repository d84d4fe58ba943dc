"""Command-line interface: one subcommand per pipeline stage plus the full
experiment runner. Stages communicate through files (images, patch-pair
dumps, library binaries, registration records) so each is independently
re-runnable; identical inputs and seeds reproduce identical outputs.

Exit codes: 0 success, 1 validation error (bad arguments, missing files),
2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .experiment import run_pipeline
from .image import bicubic_upsample, load_image, save_image
from .metrics import EvaluationReport, evaluate
from .nlm import NlmConfig, super_resolve
from .patch_library import build_library, load_library, save_library
from .registration import (
    SearchSpace,
    apply_transform,
    global_register,
    load_patch_pairs,
    match_patches,
    save_patch_pairs,
    write_displacements,
)
from .synthetic import DegradationSpec, make_scene, synthesize_pair

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _default_threads() -> int:
    env = os.environ.get("EMSR_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _add_common_params(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, default=9, help="patch side (default 9)")
    p.add_argument("--k", type=int, default=50, help="library categories (default 50)")
    p.add_argument("--oversample", type=int, default=10, metavar="K",
                   help="oversampling factor before clustering (default 10)")
    p.add_argument("--L", type=int, default=4000, help="target library size (default 4000)")
    p.add_argument("--sigma-n", type=float, default=1.0,
                   help="weight scale, acts like assumed noise std (default 1.0)")
    p.add_argument("--var-threshold", type=float, default=100.0,
                   help="rich-texture variance threshold (default 100)")
    p.add_argument("--radius", type=int, default=5, help="local search radius (default 5)")
    p.add_argument("--stride", type=int, default=1, help="patch harvest stride (default 1)")
    p.add_argument("--seed", type=int, default=0, help="sampling/clustering seed (default 0)")


def _search_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-shift", type=int, default=64, help="shift range, px (default 64)")
    p.add_argument("--shift-step", type=int, default=4, help="coarse shift step, px (default 4)")
    p.add_argument("--max-theta", type=float, default=5.0, help="rotation range, deg (default 5)")
    p.add_argument("--theta-step", type=float, default=0.5,
                   help="coarse rotation step, deg (default 0.5)")


def _search_from(args) -> SearchSpace:
    return SearchSpace(
        max_shift=args.max_shift,
        shift_step=args.shift_step,
        max_theta=args.max_theta,
        theta_step=args.theta_step,
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="emsr", description=__doc__)
    parser.add_argument("--version", action="version", version=f"emsr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="globally align an upsampled LR image to an HR image")
    p.add_argument("--hr", required=True, help="high-resolution image")
    p.add_argument("--lr", required=True, help="low-resolution image (upsampled x2 internally)")
    p.add_argument("--out", required=True, help="transform record (JSON)")
    p.add_argument("--out-reg", help="optionally write the registered upsampled image")
    _search_args(p)

    p = sub.add_parser("match", help="harvest matched patch pairs from a registered pair")
    p.add_argument("--hr", required=True, help="high-resolution image")
    p.add_argument("--reg", required=True, help="registered upsampled-LR image")
    p.add_argument("--out", required=True, help="patch-pair file")
    p.add_argument("--dump", help="optional displacement-field CSV (rich-texture pairs)")
    _add_common_params(p)

    p = sub.add_parser("build-lib", help="build a stratified paired library from patch pairs")
    p.add_argument("--pairs", required=True, nargs="+", help="patch-pair file(s)")
    p.add_argument("--out", required=True, help="library file")
    _add_common_params(p)

    p = sub.add_parser("sr", help="super-resolve an LR image with a paired library")
    p.add_argument("--lr", required=True, help="low-resolution input image")
    p.add_argument("--lib", required=True, help="library file")
    p.add_argument("--out", required=True, help="reconstructed image (2x input size)")
    p.add_argument("--sigma-n", type=float, default=1.0,
                   help="weight scale, acts like assumed noise std (default 1.0)")
    p.add_argument("--full-library", action="store_true",
                   help="weigh every library entry instead of the nearest category")

    p = sub.add_parser("eval", help="metric suite for a reconstruction against ground truth")
    p.add_argument("--hr", required=True, help="ground-truth HR image")
    p.add_argument("--sr", required=True, help="reconstructed image")
    p.add_argument("--bicubic", help="baseline image (default: bicubic x2 of --lr)")
    p.add_argument("--lr", help="LR input, used to derive the baseline when --bicubic is absent")
    p.add_argument("--out", help="report record (JSON)")
    p.add_argument("--canny", type=float, default=0.2,
                   help="edge-detector relative high threshold (default 0.2)")
    p.add_argument("--border", type=int, default=4, help="excluded border, px (default 4)")

    p = sub.add_parser("synth", help="generate a synthetic HR/LR pair with ground truth")
    p.add_argument("--truth", help="ground-truth image (default: generated scene)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=384, help="generated scene height (default 384)")
    p.add_argument("--width", type=int, default=512, help="generated scene width (default 512)")
    p.add_argument("--blur-sigma", type=float, default=1.0, help="LR-side blur (default 1.0)")
    p.add_argument("--noise-hr", type=float, default=4.0, help="HR noise std (default 4.0)")
    p.add_argument("--noise-lr", type=float, default=8.0, help="LR noise std (default 8.0)")
    p.add_argument("--gain", type=float, default=1.1, help="LR contrast gain (default 1.1)")
    p.add_argument("--offset", type=float, default=0.0, help="LR contrast offset (default 0)")
    p.add_argument("--shift", type=float, nargs=2, default=(0.0, 0.0), metavar=("X", "Y"),
                   help="rigid shift in full-resolution px (default 0 0)")
    p.add_argument("--rotation", type=float, default=0.0, help="rigid rotation, deg (default 0)")
    p.add_argument("--warp-amplitude", type=float, default=0.0,
                   help="smooth warp bound, px (default 0)")
    p.add_argument("--warp-scale", type=float, default=40.0,
                   help="warp spatial period, px (default 40)")

    p = sub.add_parser("pipeline", help="run the full experiment from a manifest")
    p.add_argument("--manifest", required=True, help="manifest file (JSON)")
    p.add_argument("--strategy", choices=("self", "pooled"),
                   help="override the manifest strategy")
    p.add_argument("--threads", type=int, help="parallel pairs (default: manifest, else cores)")

    return parser


def _require_files(*paths) -> None:
    for path in paths:
        if path is not None and not Path(path).exists():
            raise _UsageError(f"file not found: {path}")


def _validate_params(args) -> None:
    checks = (
        ("n", lambda v: v % 2 == 1 and v >= 3, "patch side must be odd and >= 3"),
        ("k", lambda v: v > 0, "category count must be positive"),
        ("L", lambda v: v > 0, "library size must be positive"),
        ("oversample", lambda v: v > 0, "oversampling factor must be positive"),
        ("sigma_n", lambda v: v > 0, "sigma-n must be positive"),
        ("var_threshold", lambda v: v >= 0, "variance threshold must be >= 0"),
        ("radius", lambda v: v >= 0, "radius must be >= 0"),
        ("stride", lambda v: v >= 1, "stride must be >= 1"),
        ("canny", lambda v: 0 < v < 1, "canny threshold must be in (0, 1)"),
        ("border", lambda v: v >= 0, "border must be >= 0"),
        ("threads", lambda v: v is None or v >= 1, "threads must be >= 1"),
    )
    for name, ok, message in checks:
        if hasattr(args, name) and getattr(args, name) is not None and not ok(getattr(args, name)):
            raise _UsageError(f"{message} (got {getattr(args, name)})")


def _cmd_register(args) -> None:
    _require_files(args.hr, args.lr)
    hr = load_image(args.hr)
    up = bicubic_upsample(load_image(args.lr), 2)
    t = global_register(hr, up, _search_from(args))
    Path(args.out).write_text(t.to_json() + "\n")
    print(f"transform: x={t.shift_x:g} y={t.shift_y:g} theta={t.theta:g} mse={t.mse:.4f}")
    if args.out_reg:
        save_image(apply_transform(up, t), args.out_reg)


def _cmd_match(args) -> None:
    _require_files(args.hr, args.reg)
    hr = load_image(args.hr)
    reg = load_image(args.reg)
    pairs = match_patches(hr, reg, args.n, args.var_threshold, args.radius, args.stride)
    save_patch_pairs(pairs, args.out)
    if args.dump:
        write_displacements(pairs, args.dump)
    rich = sum(1 for p in pairs if p.rich)
    print(f"matched {len(pairs)} pairs ({rich} rich-texture) -> {args.out}")


def _cmd_build_lib(args) -> None:
    _require_files(*args.pairs)
    pairs = []
    for path in args.pairs:
        pairs.extend(load_patch_pairs(path))
    lib = build_library(pairs, args.L, args.k, args.oversample, args.seed)
    save_library(lib, args.out)
    print(f"library: {len(lib)} entries in {lib.k} categories -> {args.out}")


def _cmd_sr(args) -> None:
    _require_files(args.lr, args.lib)
    lib = load_library(args.lib)
    cfg = NlmConfig(sigma_n=args.sigma_n, accelerate=not args.full_library, n=lib.n)
    sr = super_resolve(load_image(args.lr), lib, cfg)
    save_image(sr, args.out)
    print(f"reconstruction -> {args.out}")


def _cmd_eval(args) -> None:
    if args.bicubic is None and args.lr is None:
        raise _UsageError("eval needs --bicubic or --lr to define the baseline")
    _require_files(args.hr, args.sr, args.bicubic, args.lr)
    hr = load_image(args.hr)
    sr = load_image(args.sr)
    baseline = load_image(args.bicubic) if args.bicubic else bicubic_upsample(load_image(args.lr), 2)
    rep = evaluate(hr, sr, baseline, args.canny, args.border)
    record = {name: getattr(rep, name) for name in EvaluationReport.FIELDS}
    text = json.dumps(record, indent=2, default=float)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def _cmd_synth(args) -> None:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.truth:
        _require_files(args.truth)
        truth = load_image(args.truth)
    else:
        truth = make_scene(args.height, args.width, seed=args.seed)
    spec = DegradationSpec(
        blur_sigma=args.blur_sigma,
        noise_sigma_hr=args.noise_hr,
        noise_sigma_lr=args.noise_lr,
        contrast_gain=args.gain,
        contrast_offset=args.offset,
        global_shift=tuple(args.shift),
        global_rotation=args.rotation,
        local_warp_amplitude=args.warp_amplitude,
        local_warp_scale=args.warp_scale,
        seed=args.seed,
    )
    pair, record = synthesize_pair(truth, spec)
    save_image(pair.hr, out_dir / "hr.png")
    save_image(pair.lr, out_dir / "lr.png")
    (out_dir / "truth_transform.json").write_text(record.transform.to_json() + "\n")
    np.savez_compressed(
        out_dir / "warp_field.npz", rows=record.warp_rows, cols=record.warp_cols
    )
    print(f"pair {pair.pair_id}: hr {pair.hr.shape}, lr {pair.lr.shape} -> {out_dir}")


def _cmd_pipeline(args) -> None:
    _require_files(args.manifest)
    threads = args.threads if args.threads is not None else _default_threads()
    summary = run_pipeline(args.manifest, strategy=args.strategy, threads=threads)
    print(summary)


_COMMANDS = {
    "register": _cmd_register,
    "match": _cmd_match,
    "build-lib": _cmd_build_lib,
    "sr": _cmd_sr,
    "eval": _cmd_eval,
    "synth": _cmd_synth,
    "pipeline": _cmd_pipeline,
}


def dispatch(argv: list[str]) -> int:
    """Parse arguments and run the named stage; returns the exit code."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _validate_params(args)
        _COMMANDS[args.command](args)
        return EXIT_OK
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, FileNotFoundError, IOError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except SystemExit as exc:  # argparse --help / --version
        return int(exc.code or 0)


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
