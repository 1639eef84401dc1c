"""Command line entry point: ``lab <subcommand> --config <path> [--seed N] [--out DIR] [--threads K]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import SUBCOMMANDS, ConfigError, load
from .runner import run


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lab", description="Gibbs ensembles, Green's functions and flows.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="JSON experiment configuration")
    p.add_argument("--seed", type=int, default=None, help="override the configured seed")
    p.add_argument("--out", default=None, help="override the output directory")
    p.add_argument("--threads", type=int, default=None, help="worker threads for ensemble evolution")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load(args.config)
        if cfg.subcommand != args.subcommand:
            raise ConfigError({"subcommand": f"config is for {cfg.subcommand!r}, not {args.subcommand!r}"})
        cfg = cfg.with_overrides(args.seed, args.out, args.threads)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(json.dumps({"config_errors": exc.errors}, indent=2), file=sys.stderr)
        return 2
    out, summary = run(cfg)
    for name, check in summary["checks"].items():
        print(f"{'PASS' if check['passes'] else 'FAIL'}  {name}")
    print(f"{'PASS' if summary['passes'] else 'FAIL'}  {cfg.subcommand} -> {out}")
    return 0 if summary["passes"] else 1


if __name__ == "__main__":
    sys.exit(main())
