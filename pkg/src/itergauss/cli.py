"""Command-line front end.

Subcommands: gaussian-sweep, logistic, run, eval.  Configuration comes from
a JSON file validated against the published schema (src/itergauss/
config.schema.json); --seed/--replicates/--threads/--out override it.

Exit codes: 0 success, 2 configuration error, 3 external-oracle protocol
error, 1 anything else.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from .experiments import (
    ConfigError,
    eval_run,
    gaussian_sweep,
    logistic_experiment,
    resolve_config,
    run_custom,
)
from .oracle import OracleError

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_ORACLE = 3


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="itergauss",
        description="Iterative Gaussianization experiments and runs")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("gaussian-sweep", "iterations-to-threshold sweep on Gaussian targets"),
        ("logistic", "Bayesian logistic regression rotation study"),
        ("run", "gaussianize a configured target"),
        ("eval", "recompute metrics for a saved run"),
    ]:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--out", type=Path, required=True, help="output directory")
        cmd.add_argument("--seed", type=int, default=None)
        if name == "eval":
            cmd.add_argument("--run", type=Path, required=True,
                             help="path to a persisted run JSON")
            cmd.add_argument("--eval-samples", type=int, default=2000)
        else:
            cmd.add_argument("--config", type=Path, default=None,
                             help="JSON config (defaults used when omitted)")
            cmd.add_argument("--replicates", type=int, default=None)
            cmd.add_argument("--threads", type=int, default=None)
    return parser


_EXPERIMENT_OF_COMMAND = {
    "gaussian-sweep": "gaussian_sweep",
    "logistic": "logistic",
    "run": "custom",
}


def _load_config(args):
    raw = {}
    if args.config is not None:
        try:
            raw = json.loads(args.config.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw.setdefault("experiment", _EXPERIMENT_OF_COMMAND[args.command])
    if raw["experiment"] != _EXPERIMENT_OF_COMMAND[args.command]:
        raise ConfigError(
            f"config experiment {raw['experiment']!r} does not match "
            f"subcommand {args.command!r}")
    for flag in ("seed", "replicates", "threads"):
        value = getattr(args, flag, None)
        if value is not None:
            raw[flag] = value
    return resolve_config(raw)


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "eval":
            path = eval_run(args.run, args.out,
                            seed=args.seed if args.seed is not None else 0,
                            eval_samples=args.eval_samples)
        else:
            config = _load_config(args)
            driver = {"gaussian-sweep": gaussian_sweep,
                      "logistic": logistic_experiment,
                      "run": run_custom}[args.command]
            path = driver(config, args.out)
        print(path)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OracleError as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except Exception as exc:  # noqa: BLE001 -- CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
