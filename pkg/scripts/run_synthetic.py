#!/usr/bin/env python3
"""Run the engine on a synthetic hidden-target suite and report the outcome.

Compares the shaped engine against vanilla UCT (lambda = 0) on the same
suite, then prints the report table for both run logs.
"""

import argparse
from dataclasses import replace
from pathlib import Path

from wfopt.config import config_from_dict
from wfopt.driver import execute_run
from wfopt.reporting import report


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--out", type=Path, default=Path("out/synthetic"))
    parser.add_argument("--rounds", type=int, default=15)
    args = parser.parse_args()

    base = config_from_dict({
        "seed": args.seed,
        "budget": {"rounds": args.rounds, "simulations_per_round": 8},
        "proposer": {"ops": ["add", "sub", "mul", "neg"], "max_operator_nodes": 4},
        "prices": {"optimizer": [3e-6, 15e-6], "executor": [0.15e-6, 0.6e-6]},
    })
    unshaped = replace(base, aggregation=replace(base.aggregation, lambda_shaping=0.0))

    logs = []
    for name, config in (("shaped", base), ("vanilla_uct", unshaped)):
        out = args.out / name
        result = execute_run(config, out)
        logs.append(out / "runlog.ndjson")
        print(f"{name:>12}: best validation {result.summary['best_validation_reward']:.3f}  "
              f"test {result.summary['best_test_reward']:.3f}  "
              f"pruning {result.summary['pruning_rate']:.1%}  "
              f"tokens/problem {result.summary['tokens_per_problem']:.0f}")

    _, table = report(logs)
    print()
    print(table)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
