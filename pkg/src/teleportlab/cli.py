"""Command line front end: ``teleport-lab <experiment> [options]``.

Exit codes: 0 success, 2 configuration/usage error, 3 numerical failure.
The fixture directory can be overridden with TELEPORT_LAB_FIXTURES.
"""

from __future__ import annotations

import argparse
import sys

from .experiments import (EXPERIMENTS, ConfigError, ExperimentConfig,
                          NumericalError, run_experiment)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="teleport-lab",
        description="Run one teleported-CNOT laboratory experiment.",
        epilog="Experiments: " + ", ".join(EXPERIMENTS)
               + ". Input tokens are two characters from {0,1,+,-,i} "
                 "(or 'paper14' for the 14-state batch).",
    )
    parser.add_argument("experiment", choices=EXPERIMENTS,
                        help="which analysis to run")
    parser.add_argument("--config", metavar="JSON",
                        help="experiment config file (noise, seed, duration_s, ...)")
    parser.add_argument("--seed", type=int, default=None, metavar="N",
                        help="master seed for sampled mode")
    parser.add_argument("--exact", action="store_true", default=None,
                        help="expectation-value mode: no Poisson sampling")
    parser.add_argument("--input", dest="input_state", default=None, metavar="TOKEN",
                        help="input state token for qst (e.g. '+0', 'paper14')")
    parser.add_argument("--out", dest="output_dir", default=None, metavar="DIR",
                        help="report root directory (default: out)")
    parser.add_argument("--tag", default=None, metavar="NAME",
                        help="report subdirectory name (default: timestamp)")
    parser.add_argument("--noise", default=None, metavar="FIXTURE",
                        help="noise fixture name or path (overrides config)")
    parser.add_argument("--duration", dest="duration_s", type=float, default=None,
                        metavar="S", help="integration window per setting (default 10)")
    parser.add_argument("--bootstrap", type=int, default=None, metavar="N",
                        help="Monte Carlo resamples for error bars (default 0)")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {
        "experiment": args.experiment,
        "seed": args.seed,
        "exact": args.exact,
        "input_state": args.input_state,
        "output_dir": args.output_dir,
        "tag": args.tag,
        "duration_s": args.duration_s,
        "bootstrap": args.bootstrap,
    }
    if args.noise is not None:
        overrides["noise"] = args.noise
    try:
        if args.config:
            cfg = ExperimentConfig.from_json_file(args.config, **overrides)
        else:
            cfg = ExperimentConfig.from_json_dict({}, **overrides)
        report = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    print(f"{report.experiment}: report written to {report.directory}")
    for key, val in sorted(report.fidelities.items()):
        if isinstance(val, dict) and "value" in val:
            err = val.get("error_bar") or 0.0
            print(f"  {key}: {val['value']:.4f}" + (f" ± {err:.4f}" if err else ""))
        elif isinstance(val, float):
            print(f"  {key}: {val:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
