"""Command line front end: `wptsim --preset fig5 [--config FILE] ...`.

Loads an optional experiment file (same key-value grammar as scenario
files), applies flag overrides, runs one preset and prints the written CSV
paths. Exit code 0 on success; validation or runtime problems go to stderr
with a nonzero exit code.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from . import __version__
from ._kv import KVError
from .config import apply_paper_scale, default_config, load_config
from .experiments import PRESETS, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wptsim",
        description="Voting-based charging control experiments; results are "
                    "written as CSV, one file per preset.")
    parser.add_argument("--preset", required=True, choices=PRESETS,
                        help="which study to run")
    parser.add_argument("--config", metavar="FILE",
                        help="experiment file (flat 'key = value' text); "
                             "omitted keys use the reference setup")
    parser.add_argument("--seed", type=int, metavar="N",
                        help="master seed override")
    parser.add_argument("--trials", type=int, metavar="N",
                        help="override every per-point trial count")
    parser.add_argument("--out-dir", metavar="DIR",
                        help="where to write CSVs (default from config)")
    parser.add_argument("--paper-scale", action="store_true",
                        help="published trial counts and lifetime target "
                             "(hours to days on one core)")
    parser.add_argument("--trace", action="store_true",
                        help="also write per-run detail to <preset>_runs.csv")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config) if args.config else default_config()
        if args.paper_scale:
            config = apply_paper_scale(config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.trials is not None:
            if args.trials < 1:
                raise KVError("trials: must be at least 1")
            overrides["trials"] = args.trials
            overrides["validation_trials"] = args.trials
        if args.out_dir is not None:
            overrides["out_dir"] = args.out_dir
        if overrides:
            config = dataclasses.replace(config, **overrides)
        paths = run_experiment(args.preset, config, trace=args.trace)
    except (KVError, ValueError, RuntimeError, OSError) as exc:
        print(f"wptsim: error: {exc}", file=sys.stderr)
        return 2
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
