"""Command-line entry point for the experiment runner."""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .experiments import EXPERIMENTS, load_config, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="expcli",
        description=(
            "Run a filtering experiment: an exact Kalman step-size sweep "
            "(lgssm-sweep), a single or replicated particle-filter study on "
            "the stochastic Lorenz 63 model (lorenz-run, lorenz-mc), or the "
            "finite-state verification suite (verify). Results are written "
            "under <out>/<experiment>/ as run.csv, summary.json and plot.gp."
        ),
    )
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument(
        "--config", help="TOML file with flat configuration keys", default=None
    )
    parser.add_argument("--seed", type=int, default=None, help="base seed")
    parser.add_argument(
        "--replications", type=int, default=None, help="replication count"
    )
    parser.add_argument("--out", default=None, help="output directory root")
    parser.add_argument(
        "--gamma", type=float, default=None, help="nudge step size (Lorenz runs)"
    )
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "experiment": args.experiment,
        "seed": args.seed,
        "replications": args.replications,
        "out_dir": args.out,
        "gamma": args.gamma,
    }
    try:
        cfg = load_config(args.config, overrides)
        return run_experiment(cfg)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
