"""Command-line entry point: ``crasim <subcommand> --config run.ini --out runs/x``.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigError, ExperimentConfig, load_config

log = logging.getLogger("crasim")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _u64(text: str) -> int:
    val = int(text, 0)
    if not 0 <= val < 2**64:
        raise argparse.ArgumentTypeError(f"{text} is not an unsigned 64-bit integer")
    return val


def _positive(text: str) -> int:
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return val


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI configuration file (defaults apply when omitted)")
    common.add_argument("--out", type=Path, default=Path("run"), help="artifact directory (default: ./run)")
    common.add_argument("--threads", type=_positive, default=1, help="worker threads; results do not depend on it")
    common.add_argument("--seed-geometry", type=_u64, help="override [seeds] geometry")
    common.add_argument("--seed-noise", type=_u64, help="override [seeds] noise")
    common.add_argument("--tra", action="store_true", help="unperturbed reflector baseline (max distortion 0)")
    common.add_argument("--force", action="store_true", help="accept upstream artifacts from another configuration")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    parser = argparse.ArgumentParser(prog="crasim", description="Compressive reflector antenna imaging simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("geometry", parents=[common], help="build the reflector mesh")
    sub.add_parser("calibrate", parents=[common], help="synthesise aperture fields and assemble H")
    sub.add_parser("simulate", parents=[common], help="rasterise the target and synthesise g")
    sub.add_parser("reconstruct", parents=[common], help="run consensus ADMM")
    an = sub.add_parser("analyze", parents=[common], help="post-process, score and report")
    an.add_argument("--baseline", type=Path, help="run directory (or H.bin) to compare diversity against")
    pl = sub.add_parser("pipeline", parents=[common], help="run every stage")
    pl.add_argument("--baseline", type=Path, help="run directory (or H.bin) to compare diversity against")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config is not None else ExperimentConfig()
    if args.seed_geometry is not None:
        cfg.seeds.geometry = args.seed_geometry
    if args.seed_noise is not None:
        cfg.seeds.noise = args.seed_noise
    if args.tra:
        cfg.reflector.max_distortion = 0.0
    return cfg


def set_threads(n: int) -> int:
    """Cap numba's worker pool at ``n`` (bounded by the pool size fixed at import)."""
    import numba

    n = max(1, min(n, numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as err:
        print(f"crasim: {err}", file=sys.stderr)
        return EXIT_INVALID
    threads = set_threads(args.threads)
    try:
        if args.command == "pipeline":
            bundle = pipeline.run_pipeline(cfg, args.out, threads=threads, force=args.force,
                                           baseline=args.baseline, progress=args.verbose)
            print((bundle.out_dir / "summary.txt").read_text(), end="")
            return EXIT_OK
        ctx = pipeline.RunContext(cfg, args.out, threads, args.force, args.verbose)
        func = pipeline.STAGE_FUNCS[args.command]
        written = func(ctx, baseline=args.baseline) if args.command == "analyze" else func(ctx)
        if args.command == "analyze":
            written.append(pipeline.write_summary_text(ctx))
            print(ctx.path("summary.txt").read_text(), end="")
        else:
            for p in written:
                print(p)
        return EXIT_OK
    except pipeline.PipelineError as err:
        print(f"crasim: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, OSError) as err:
        print(f"crasim: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
