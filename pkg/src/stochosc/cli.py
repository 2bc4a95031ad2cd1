"""Command-line entry point: ``stochosc <scenario> --config run.toml [--out DIR] ...``."""
from __future__ import annotations

import argparse
import sys
from typing import Sequence

from . import __version__
from .config import SCENARIOS, validate_config
from .errors import ArtifactIOError, ConfigError, StochoscError
from .scenarios import run_scenario

U64_MAX = 2 ** 64 - 1


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an unsigned 64-bit integer, got {text!r}") from None
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError(f"seed must lie in [0, 2^64 - 1], got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochosc", description="Run a stochastic-oscillator scenario.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="scenario", required=True, metavar="SCENARIO")
    for name in SCENARIOS:
        sp = sub.add_parser(name, help=f"run the {name} pipeline")
        sp.add_argument("--config", required=True, help="TOML configuration file")
        sp.add_argument("--out", help="output directory (overrides output.dir)")
        sp.add_argument("--threads", type=_positive_int, default=1, help="worker threads")
        sp.add_argument("--seed", type=_u64, help="override mc.seed")
        sp.add_argument("--refine", type=_positive_int, default=1, help="grid refinement multiplier")
    sub.add_parser("validate", help="parse a config and echo it").add_argument("--config", required=True)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = validate_config(args.config)
        if args.scenario == "validate":
            sys.stdout.write(cfg.dumps())
            return 0
        if cfg.run.scenario != args.scenario:
            raise ConfigError("scenario mismatch",
                              [f"run.scenario: config names {cfg.run.scenario!r} but the subcommand is "
                               f"{args.scenario!r}"])
        cfg = cfg.with_overrides(seed=args.seed, out_dir=args.out)
        manifest = run_scenario(cfg, threads=args.threads, refine=args.refine)
    except StochoscError as exc:
        stage = getattr(exc, "stage", None)
        where = f" (stage {stage})" if stage else ""
        print(f"stochosc: {type(exc).__name__}{where}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"stochosc: {ArtifactIOError.__name__}: {exc}", file=sys.stderr)
        return ArtifactIOError.exit_code
    print(f"{manifest.scenario}: ok, {len(manifest.artifacts)} artifacts in {cfg.output.dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
