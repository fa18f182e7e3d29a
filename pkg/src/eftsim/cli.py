"""Command-line entry point: ``eftsim run | validate | list-scenarios``."""
from __future__ import annotations

import argparse
import sys

from . import __version__
from .config import ConfigError, builtin_scenarios, load_scenario
from .seeding import MAX_SEED

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECK = 3


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v <= MAX_SEED:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eftsim", description="Error-free transmission simulator.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario file (or a shipped scenario by name)")
    run.add_argument("scenario")
    run.add_argument("--seed", type=_seed, help="override master_seed")
    run.add_argument("--out", default="results", help="output directory (default: results)")
    run.add_argument("--format", choices=("csv", "json"), default="csv", help="table format")
    run.add_argument("--svg", action="store_true", help="also write an SVG figure")
    run.add_argument("--check", action="store_true", help="exit 3 if any acceptance check fails")

    val = sub.add_parser("validate", help="validate a scenario file")
    val.add_argument("scenario")

    sub.add_parser("list-scenarios", help="list shipped scenarios")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-scenarios":
        for name in builtin_scenarios():
            scn = load_scenario(name)
            print(f"{name:16s} {scn.kind:14s} {scn.description.splitlines()[0] if scn.description else ''}")
        return EXIT_OK

    try:
        scn = load_scenario(args.scenario)
        if args.command == "validate":
            print(f"{scn.name}: ok ({scn.kind})")
            return EXIT_OK
        if args.seed is not None:
            scn = scn.with_seed(args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    # heavy imports only when actually running
    from .experiments import run_scenario
    from .output import write_report

    report = run_scenario(scn)
    paths = write_report(report, args.out, args.format, args.svg)
    for c in report.checks:
        print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}" + (f" ({c.detail})" if c.detail else ""))
    print(f"wrote {paths[0].parent}")
    if args.check and not report.passed:
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
