"""``denoise`` command line entry point.

Exit codes: 0 success, 1 some items failed, 2 configuration/usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from .bench import ConfigError, MethodConfig, apply_method, load_config, run_experiment, score
from .errors import DomainError, FormatError, ImageIOError
from .io import VOLUME_SUFFIXES, load_any, save_any
from .synth import SCENE_KINDS, make_scene

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="random seed")
    parser.add_argument("--workers", type=int, default=default, help="worker threads")
    parser.add_argument(
        "--clip", action="store_true", default=argparse.SUPPRESS if suppress else False,
        help="clamp denoised output to [0, peak]",
    )


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 128x128, got {text!r}")
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return h, w


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="denoise", description="Nonlocal patch-based denoising")
    _global_flags(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    p = sub.add_parser("run", parents=[common], help="run a TOML experiment")
    p.add_argument("config")

    p = sub.add_parser("one", parents=[common], help="denoise a single file")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument(
        "--sigma-unit", choices=("intensity", "per255", "percent_max"), default="intensity",
        help="how --sigma is expressed (default: intensity units of the file)",
    )
    p.add_argument("--method", choices=("msvd", "hosvd4d", "identity"), default="msvd")
    p.add_argument("--noise", choices=("awgn", "rician"), default="awgn")
    p.add_argument("--lam", type=float, default=None, help="threshold multiplier")

    p = sub.add_parser("metrics", parents=[common], help="compare a test file to a reference")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic clean image")
    p.add_argument("--kind", choices=SCENE_KINDS, required=True)
    p.add_argument("--size", type=_size, required=True)
    p.add_argument("--out", required=True)
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config, overrides={"seed": args.seed, "workers": args.workers})
    if args.clip:
        cfg.methods = [replace(m, clip_output=True) for m in cfg.methods]
    report = run_experiment(cfg)
    for agg in report.aggregates():
        print(
            f"{agg['method']:>16}  sigma={agg['sigma']}  psnr={agg['psnr']}  ssim={agg['ssim']}"
            f"  n={agg['count']}"
        )
    if report.failures:
        print(f"{len(report.failures)} row(s) failed; see {cfg.output / 'report.json'}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _cmd_one(args) -> int:
    data, peak = load_any(args.inp)
    if args.sigma_unit == "per255":
        sigma = args.sigma * peak / 255.0
    elif args.sigma_unit == "percent_max":
        sigma = args.sigma / 100.0 * float(np.max(data))
    else:
        sigma = args.sigma
    kind = "volume3d" if args.inp.lower().endswith(VOLUME_SUFFIXES) else "image2d"
    method = MethodConfig(
        name=args.method, family=args.method, lam=args.lam, clip_output=args.clip, sigma_mode="fixed", sigma=sigma
    )
    result = apply_method(method, data, kind, args.noise, sigma, peak)
    save_any(args.out, result, peak)
    return EXIT_OK


def _cmd_metrics(args) -> int:
    ref, peak = load_any(args.ref)
    test, _ = load_any(args.test)
    kind = "volume3d" if args.ref.lower().endswith(VOLUME_SUFFIXES) else "image2d"
    values = score(ref, test, kind, peak, ("psnr", "ssim", "sam", "ergas"))
    print(json.dumps({k: ("inf" if np.isinf(v) else round(v, 6)) for k, v in values.items()}))
    return EXIT_OK


def _cmd_synth(args) -> int:
    save_any(args.out, make_scene(args.kind, args.size, seed=args.seed or 0))
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "one": _cmd_one, "metrics": _cmd_metrics, "synth": _cmd_synth}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ImageIOError, FormatError, DomainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
