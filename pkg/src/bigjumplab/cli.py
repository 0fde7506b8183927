"""Command-line entry point: one subcommand per experiment."""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .harness import (
    ConfigError,
    ExperimentConfig,
    all_failed,
    emit_report,
    report_metadata,
    run_experiment,
    validate_config,
)

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_ALL_FAILED = 3

SUBCOMMANDS = {
    "ratio": "ratio",
    "tail-ratio": "tail_ratio",
    "tv2": "tv2",
    "tv3": "tv3",
    "fn-bound": "fn_bound",
    "poisson": "poisson",
    "scales": "scales",
    "sample": "sample",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bigjumplab", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="JSON experiment configuration")
        p.add_argument("--seed", type=int, help="64-bit seed (overrides the config)")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--format", choices=("csv", "json"), help="report format")
        p.add_argument("--alpha", type=float, help="zeta tail exponent when no config is given")
        p.add_argument("--n", type=int, nargs="+", help="grid of n values")
        grid = p.add_mutually_exclusive_group()
        grid.add_argument("--x", type=int, nargs="+", help="explicit x values")
        grid.add_argument("--x-factor", type=float, help="use x = c*n")
        p.add_argument("--param", action="append", default=[], metavar="KEY=JSON",
                       help="experiment parameter, repeatable")
        p.add_argument("--timing", action="store_true", help="keep wall-time in the report")
    return parser


def _config_dict(args) -> dict:
    if args.config:
        with open(args.config) as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
    else:
        obj = {"model": {"kind": "zeta", "alpha": 1.5}, "grid": {}}
    obj["experiment"] = SUBCOMMANDS[args.command]
    if args.alpha is not None:
        obj["model"] = {"kind": "zeta", "alpha": args.alpha}
    grid = dict(obj.get("grid", {}))
    if args.n:
        grid["n"] = args.n
    if args.x:
        grid.pop("x_rule", None)
        grid["x"] = args.x
    if args.x_factor is not None:
        grid.pop("x", None)
        grid["x_rule"] = {"c": args.x_factor}
    obj["grid"] = grid
    if args.seed is not None:
        obj["seed"] = args.seed
    if args.out:
        obj["output_path"] = args.out
    if args.format:
        obj["format"] = args.format
    params = dict(obj.get("params", {}))
    for item in args.param:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--param expects KEY=JSON, got {item!r}")
        try:
            params[key] = json.loads(val)
        except json.JSONDecodeError:
            params[key] = val
    if params:
        obj["params"] = params
    return obj


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        obj = _config_dict(args)
        validate_config(obj)
        config = ExperimentConfig.from_dict(obj)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    rows = run_experiment(config)
    text = emit_report(rows, config.format, config.output_path, report_metadata(config), timing=args.timing)
    if config.output_path is None:
        sys.stdout.write(text)
    if all_failed(rows):
        print("error: every grid point failed", file=sys.stderr)
        return EXIT_ALL_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
