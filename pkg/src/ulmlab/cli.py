"""Command-line entry point: ``ulmlab <stage|run|report> --config exp.ini``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig
from .pipeline import STAGES, StageError, cost_table, read_manifest, run

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


def _common(p: argparse.ArgumentParser, needs_config: bool = True):
    p.add_argument("--config", type=Path, required=needs_config, help="experiment INI file")
    p.add_argument("--out", type=Path, help="artifact directory (default: [experiment] output)")
    p.add_argument("--scheme", action="append", help="restrict to these schemes (repeatable or comma-separated)")
    p.add_argument("--seed", type=int, help="override the phantom and noise seeds")
    p.add_argument("--workers", type=int, default=1, help="parallel workers; results do not depend on it")
    p.add_argument("--svd-low", type=int, help="manual SVD filter: first kept component")
    p.add_argument("--svd-high", type=int, help="manual SVD filter: one past the last kept component")
    p.add_argument("--svd-auto", action="store_true", help="pick the SVD cutoff from singular-vector correlation")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ulmlab", description="Simulated matrix-array localization microscopy.")
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        _common(sub.add_parser(stage, help=f"run the {stage} stage only"))
    _common(sub.add_parser("run", help="run every stage"))
    rep = sub.add_parser("report", help="print the per-scheme cost table of a finished run")
    _common(rep, needs_config=False)
    return parser


def apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.scheme:
        names = [s.strip().lower() for arg in args.scheme for s in arg.split(",") if s.strip()]
        cfg.experiment = dataclasses.replace(cfg.experiment, schemes=tuple(names))
    if args.seed is not None:
        cfg.phantom = dataclasses.replace(cfg.phantom, seed=args.seed)
        cfg.noise = dataclasses.replace(cfg.noise, seed=args.seed)
    if args.svd_auto and (args.svd_low is not None or args.svd_high is not None):
        raise ConfigError("--svd-auto cannot be combined with --svd-low/--svd-high")
    if args.svd_auto:
        cfg.svd = dataclasses.replace(cfg.svd, mode="auto")
    elif args.svd_low is not None or args.svd_high is not None:
        cfg.svd = dataclasses.replace(
            cfg.svd,
            mode="manual",
            low_cut=args.svd_low if args.svd_low is not None else cfg.svd.low_cut,
            high_cut=args.svd_high if args.svd_high is not None else cfg.svd.high_cut,
        )
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_overrides(ExperimentConfig.load(args.config), args) if args.config else None
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "report":
        out = args.out or (Path(cfg.experiment.output) if cfg else None)
        if out is None:
            print("config error: report needs --out or --config", file=sys.stderr)
            return EXIT_CONFIG
        manifest = read_manifest(out)
        if not manifest:
            print(f"no manifest in {out}", file=sys.stderr)
            return EXIT_STAGE
        print(cost_table(manifest), end="")
        return EXIT_OK

    stages = None if args.command == "run" else [args.command]
    try:
        out = run(cfg, args.out, args.workers, stages)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
