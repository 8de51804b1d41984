"""Command-line entry point: ``ahtis run|aggregate|reference-z``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .experiment import aggregate, load_config, make_reference_log_z, run_experiment
from .sampler import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("config", help="TOML config file or preset name (e.g. synthetic-small)")
    p.add_argument("--seed", type=int, help="override base_seed")
    p.add_argument("--reps", type=int, help="override the number of replications")
    p.add_argument("--workers", type=int, help="worker processes (default: all cores)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--col-weight", help="CSV column holding body weight")
    p.add_argument("--col-serum", help="CSV column holding serum creatinine")
    p.add_argument("--col-age", help="CSV column holding age")
    p.add_argument("--col-response", help="CSV column holding creatinine clearance")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ahtis", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="run an experiment and aggregate it"))
    _add_common(sub.add_parser("reference-z", help="compute the reference evidence"))
    agg = sub.add_parser("aggregate", help="recompute summary.csv of a run directory")
    agg.add_argument("dir")
    return parser


def _overrides(args) -> dict:
    cols = {
        "weight": args.col_weight,
        "serum": args.col_serum,
        "age": args.col_age,
        "response": args.col_response,
    }
    return {
        "base_seed": args.seed,
        "replications": args.reps,
        "workers": args.workers,
        "output": args.out,
        "columns": {k: v for k, v in cols.items() if v} or None,
    }


def _report(kind: str, message: str, code: int) -> int:
    print(json.dumps({"status": "error", "kind": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        if args.command == "aggregate":
            rows = aggregate(args.dir)
            print(f"wrote {args.dir}/summary.csv ({len(rows)} rows)")
            return EXIT_OK
        cfg = load_config(args.config, _overrides(args))
        if args.command == "reference-z":
            log_z = make_reference_log_z(cfg)
            print(json.dumps({"log_z": log_z}))
            return EXIT_OK
        code, errors = run_experiment(cfg)
        if errors:
            print(json.dumps({"status": "error", "kind": "runtime", "failures": errors}, default=str),
                  file=sys.stderr)
        else:
            print(f"wrote {cfg.output}")
        return code
    except ConfigError as exc:
        return _report("config", str(exc), EXIT_CONFIG)
    except FileNotFoundError as exc:
        return _report("config", str(exc), EXIT_CONFIG)
    except Exception as exc:  # noqa: BLE001 - exit code contract
        return _report("runtime", repr(exc), EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())
