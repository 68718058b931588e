"""Command-line entry point.

Exit codes: 0 success, 1 solver abort, 2 missing artifact, 3 config error.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, DataError, SolverAbort
from . import harness


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ttpolicy",
        description="Tensor-train optimal control: train parameter-augmented "
                    "policies, retrieve parameter-conditioned ones, reproduce "
                    "the benchmark tables.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("train", "run value iteration and save the value/advantage models"),
        ("eval", "bandwidth sweep: DA/DC/DR rollouts, metrics CSV"),
        ("compare-ma", "explicit vs implicit motor adaptation with the trained estimator"),
        ("bench-contraction", "time core-level vs function-level contraction"),
        ("sensitivity", "re-train across rank and node-count settings"),
        ("spring-demo", "spring-damper ground-truth comparison and biased-estimate rollouts"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--env", help="environment name when no config file is given")
        p.add_argument("--out", help="output directory override")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--workers", type=int, help="parallel worker count")
    return parser


def _config_from_args(args, default_env):
    if args.config:
        config = harness.load_config(args.config)
    else:
        env = args.env or default_env
        if env is None:
            raise ConfigError("either --config or --env is required")
        config = harness.default_config(env)
    if args.out:
        config.out_dir = args.out
    if args.seed is not None:
        config.seed = args.seed
    if args.workers is not None:
        config.workers = args.workers
    return config


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            config = _config_from_args(args, None)
            prefix = harness.cmd_train(config)
            print(f"models written to {prefix}_V.ttm / {prefix}_A.ttm")
        elif args.command == "eval":
            config = _config_from_args(args, None)
            rows, out = harness.cmd_eval(config)
            print(f"{len(rows)} rows -> {out}")
        elif args.command == "compare-ma":
            config = _config_from_args(args, None)
            rows, out = harness.cmd_compare_ma(config)
            print(f"{len(rows)} rows -> {out}")
        elif args.command == "bench-contraction":
            config = _config_from_args(args, None)
            _, summary, out = harness.cmd_bench_contraction(config)
            print(
                f"core {summary['core_mean_s']:.4f}s +- {summary['core_std_s']:.4f}s | "
                f"function {summary['function_mean_s']:.4f}s +- "
                f"{summary['function_std_s']:.4f}s | speedup {summary['speedup']:.1f}x "
                f"-> {out}"
            )
        elif args.command == "sensitivity":
            config = _config_from_args(args, None)
            results, out = harness.cmd_sensitivity(config)
            print(f"{len(results)} settings -> {out}")
        elif args.command == "spring-demo":
            config = _config_from_args(args, "spring")
            summary, out = harness.cmd_spring_demo(config)
            print(f"summary -> {out}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return 2
    except (SolverAbort, DataError) as exc:
        print(f"solver abort: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
