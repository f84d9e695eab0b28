"""Command-line entry point.

    stochflow run <config-file> [--out DIR] [--workers N] [--seed-override K]
    stochflow validate <config-file>

Exit codes: 0 success, 1 config error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import parse_config, with_seed
from .errors import ConfigError, StochflowError
from .runner import run_experiment


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stochflow",
        description="Simulate jump-SDE flows, invert them, and run the "
        "SPDE / convergence harnesses described by a config file.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the experiment described by the config")
    run_p.add_argument("config", type=Path)
    run_p.add_argument("--out", type=Path, default=None, help="output directory")
    run_p.add_argument("--workers", type=int, default=1, help="worker process count")
    run_p.add_argument(
        "--seed-override", type=int, default=None, help="replace the config seed"
    )

    val_p = sub.add_parser("validate", help="parse and validate the config, then exit")
    val_p.add_argument("config", type=Path)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        text = args.config.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc}", file=sys.stderr)
        return 1
    try:
        cfg = parse_config(text)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    if args.command == "validate":
        print(f"ok: {cfg.kind} experiment, family {cfg.family.name}")
        return 0

    if args.seed_override is not None:
        cfg = with_seed(cfg, args.seed_override)
    try:
        manifest = run_experiment(cfg, out_dir=args.out, workers=args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except StochflowError as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {', '.join(manifest['outputs'])} (kind={cfg.kind})")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
