"""Command line entry point: ``momdp analyze | run | calibrate | validate``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .specfile import SpecFormatError


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="momdp", description="Multi-observation POMDP toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="distinguishability, tensor-power ranks and norms")
    p.add_argument("--spec", required=True)
    p.add_argument("--k", type=int, default=3, help="largest tensor power to tabulate")
    p.add_argument("--format", choices=("csv", "json"), default="json",
                   help="json report or the rank and norm table as csv")
    p.add_argument("--out")

    p = sub.add_parser("run", help="run an experiment config over its seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, action="append",
                   help="override the config seeds (repeatable)")
    p.add_argument("--out")

    p = sub.add_parser("calibrate", help="Monte Carlo calibration of the test budget")
    p.add_argument("--config", help="grid file; defaults to the acceptance grid")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--out", help="directory for calibration.json (default $MOMDP_CACHE_DIR)")

    p = sub.add_parser("validate", help="check a spec file")
    p.add_argument("--spec", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "analyze":
            _emit(harness.cmd_analyze(args.spec, args.k, args.format), args.out)
            return 0
        if args.command == "run":
            return harness.cmd_run(args.config, args.out, args.seed, stderr=sys.stderr)
        if args.command == "calibrate":
            report = harness.cmd_calibrate(args.config, args.out, args.trials, args.seed)
            print(json.dumps({"c1": report["c1"]}))
            return 0
        if args.command == "validate":
            problems = harness.cmd_validate(args.spec)
            for line in problems:
                print(line, file=sys.stderr)
            if not problems:
                print("ok")
            return 0 if not problems else 1
    except (SpecFormatError, harness.ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
