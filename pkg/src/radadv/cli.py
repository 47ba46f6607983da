"""Command-line pipeline driver.

Subcommands run one stage each: gen-data, train, attack, matrix,
interpret, report.  Exit codes: 0 success, 1 usage or config error,
2 stage failure (missing prerequisite artifacts, diverged training).
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, validate_config
from .pipeline import STAGES, StageDependencyError, run_stage
from .training import TrainingDivergedError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_STAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radadv",
        description="Synthetic range-Doppler gesture classifiers under gradient attack.")
    parser.add_argument("--config", metavar="PATH", help="experiment config JSON")
    parser.add_argument("--seed", type=int, help="override the global seed")
    parser.add_argument("--out", metavar="DIR", help="override the output directory")
    parser.add_argument("--profile", choices=["desk", "paper-shape"],
                        help="dataset/model size profile")
    parser.add_argument("--jobs", type=int, help="parallel workers for per-sample stages")
    sub = parser.add_subparsers(dest="stage", metavar="STAGE")
    descriptions = {
        "gen-data": "generate and persist the synthetic dataset",
        "train": "train every configured architecture on every split",
        "attack": "run the configured attacks and persist per-sample records",
        "matrix": "aggregate attack records into the threat-matrix CSV",
        "interpret": "frame importance, heatmaps, and correlation curves",
        "report": "bundle all stage outputs into report.json",
    }
    for stage in STAGES:
        sub.add_parser(stage, help=descriptions[stage])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.stage is None:
        parser.print_help()
        return EXIT_USAGE
    try:
        cfg = validate_config(args.config, profile=args.profile, seed=args.seed,
                              out_dir=args.out, jobs=args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        run_stage(args.stage, cfg, cfg.out_dir)
    except (StageDependencyError, TrainingDivergedError) as exc:
        print(f"stage error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
