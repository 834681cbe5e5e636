"""Command line entry point: ``shearlayer run|plot|check-config``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .pipeline import EXIT_ERROR, check_config, run


def build_parser():
    p = argparse.ArgumentParser(prog="shearlayer", description="Shear-layer expansion and verification pipeline")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="execute all stages of a TOML config")
    r.add_argument("config")
    r.add_argument("-o", "--outdir", default=None, help="override output.dir")
    pl = sub.add_parser("plot", help="render SVG figures from a report directory")
    pl.add_argument("report_dir")
    pl.add_argument("-o", "--outdir", default=None, help="figure directory (default: <report_dir>/figures)")
    c = sub.add_parser("check-config", help="parse and echo a config")
    c.add_argument("config")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "run":
        return run(args.config, args.outdir)
    if args.command == "check-config":
        return check_config(args.config)
    from .plots import plot_report
    try:
        written, warnings = plot_report(args.report_dir, args.outdir)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
