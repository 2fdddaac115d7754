#!/usr/bin/env python3
"""Run the full ablation grid (family-only, stage-only, fixed weights).

Mirrors the structure of the constraint/stage/weighting comparisons: each
variant runs on the identical suite, seed, and budget, differing only in
which constraint families and injection stages are active.
"""

import argparse
import json
from pathlib import Path

from wfopt.config import config_from_dict
from wfopt.driver import ablation_grid, execute_run


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--out", type=Path, default=Path("out/ablations"))
    parser.add_argument("--rounds", type=int, default=15)
    args = parser.parse_args()

    base = config_from_dict({
        "seed": args.seed,
        "budget": {"rounds": args.rounds, "simulations_per_round": 8},
        "proposer": {"ops": ["add", "sub", "mul", "neg"], "max_operator_nodes": 4},
    })

    rows = {}
    print(f"{'variant':<20} {'best':>6} {'test':>6} {'prune%':>7} {'tok/prob':>9}")
    for name, config in ablation_grid(base).items():
        result = execute_run(config, args.out / name)
        s = result.summary
        rows[name] = s
        print(f"{name:<20} {s['best_validation_reward']:>6.3f} {s['best_test_reward']:>6.3f} "
              f"{100 * s['pruning_rate']:>7.1f} {s['tokens_per_problem']:>9.0f}")

    (args.out / "grid_summary.json").write_text(json.dumps(rows, sort_keys=True, indent=2) + "\n")
    print(f"\nper-variant artifacts in {args.out}/")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
