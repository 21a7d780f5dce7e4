"""Command line entry point: ``byzkit [flags]`` or ``python -m byzkit``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .harness import ExperimentConfig, emit, env_base_seed, exit_code, run_experiment, summary
from .params import ConfigError


def _sizes(values: list[str]) -> tuple[int, ...]:
    out = []
    for v in values:
        for part in v.split(","):
            if part.strip():
                out.append(int(part))
    return tuple(out)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="byzkit", description="Seeded Byzantine agreement experiments.")
    ap.add_argument("--mode", choices=("ba", "leader", "committee"), default="ba")
    ap.add_argument("--n", nargs="+", default=["256"], help="system sizes, space or comma separated")
    tg = ap.add_mutually_exclusive_group()
    tg.add_argument("--t-frac", type=float, default=None, help="bad nodes as a share of n (floored)")
    tg.add_argument("--t", type=int, default=None, help="absolute number of bad nodes")
    ap.add_argument("--eps0", type=float, default=0.1)
    ap.add_argument("--eps", type=float, default=0.01)
    ap.add_argument("--C", type=float, default=4.0)
    ap.add_argument("--c-promise", type=float, default=8.0)
    ap.add_argument("--k", type=int, default=2)
    ap.add_argument("--kappa", type=float, default=1.0)
    ap.add_argument("--size-rule", choices=("ln6", "log"), default="ln6",
                    help="committee size target: kappa * ln^6 n or kappa * log2 n")
    ap.add_argument("--activation-slack", type=float, default=0.5,
                    help="window around the expected active count; negative means epsilon")
    ap.add_argument("--adversary", default="silent", help="e.g. flooder:T=4nlogn,frac=0.02")
    ap.add_argument("--inputs", choices=("all0", "all1", "random", "split"), default="random")
    ap.add_argument("--seeds", type=int, default=1)
    ap.add_argument("--base-seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default=None, help="output file (stdout summary only if omitted)")
    ap.add_argument("--format", choices=("csv", "json"), default="csv")
    ap.add_argument("--trace", default=None, help="write the round trace as JSONL")
    ap.add_argument("--assert", dest="assert_invariants", action="store_true",
                    help="check protocol invariants during every trial")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    slack = None if args.activation_slack is not None and args.activation_slack < 0 else args.activation_slack
    return ExperimentConfig(
        mode=args.mode, n=_sizes(args.n), t=args.t, t_frac=args.t_frac, epsilon0=args.eps0,
        epsilon=args.eps, C=args.C, c_promise=args.c_promise, k=args.k, kappa=args.kappa, size_rule=args.size_rule,
        activation_slack=slack, adversary=args.adversary, inputs=args.inputs, seeds=args.seeds,
        base_seed=env_base_seed(args.base_seed), jobs=args.jobs, out=args.out, fmt=args.format,
        trace=args.trace, assert_invariants=args.assert_invariants,
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        records = run_experiment(cfg)
    except (ConfigError, ValueError) as exc:
        print(f"byzkit: configuration error: {exc}", file=sys.stderr)
        return 2
    if cfg.out:
        try:
            emit(records, cfg.fmt, cfg.out)
        except OSError as exc:
            print(f"byzkit: {exc}", file=sys.stderr)
            return 2
    print(json.dumps(summary(records)))
    for r in records:
        for note in r.notes:
            print(f"n={r.n}: {note}", file=sys.stderr)
    return exit_code(records)


if __name__ == "__main__":
    sys.exit(main())
