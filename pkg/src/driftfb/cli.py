"""Command line entry point: ``driftfb <scenario> --config FILE``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import SCENARIOS, ConfigError, load_config
from .experiments import EXIT_CONFIG, run_scenario, write_report

log = logging.getLogger("driftfb")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="driftfb",
        description="Obstacle problems for critical nonlocal operators with drift.")
    p.add_argument("scenario", choices=SCENARIOS)
    p.add_argument("--config", required=True, type=Path, help="TOML experiment config")
    p.add_argument("--out", type=Path, default=None,
                   help="output directory (default: config 'output', else "
                        "$DRIFTFB_OUT/<name>, else ./driftfb-out/<name>)")
    p.add_argument("--plots", action="store_true", help="also write SVG figures")
    p.add_argument("--workers", type=int, default=1, help="worker processes for sweep members")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def output_dir(args, cfg) -> Path:
    if args.out is not None:
        return args.out
    if cfg.output:
        return Path(cfg.output)
    return Path(os.environ.get("DRIFTFB_OUT", "driftfb-out")) / cfg.name


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        cfg = load_config(args.config)
        if cfg.scenario != args.scenario:
            raise ConfigError(f"{args.config} describes scenario {cfg.scenario!r}, "
                              f"not {args.scenario!r}")
    except ConfigError as exc:
        print(f"driftfb: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = run_scenario(cfg, workers=args.workers)
    out = output_dir(args, cfg)
    write_report(report, out, plots=args.plots)
    v = report.verdict
    print(f"{cfg.name}: {v['status'].upper()} ({v['passed']}/{v['checks']} checks) -> {out}")
    for name in v["failed"]:
        print(f"  FAIL {name}")
    if report.manifest.get("error"):
        print(f"  {report.manifest['error']}", file=sys.stderr)
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
