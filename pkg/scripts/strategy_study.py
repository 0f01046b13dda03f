#!/usr/bin/env python3
"""Monte-Carlo strategy comparison on the bundled four-bus day.

Writes the benchmark scenario, solves the day-ahead reference schedule, and
runs a seeded disturbance ensemble for each control strategy (threshold
heuristic, open-loop replay, hierarchical receding-horizon).  Artifacts land
under --out-dir:

    scenario.yaml                    the benchmark day
    plan/plan.csv, plan_summary.json the reference schedule
    <strategy>/summary.json          ensemble statistics
    <strategy>/trace.csv             mean SOC band over the day
    <strategy>/runs.csv              per-run costs and violations

Fully deterministic for a given --seed; rerunning reproduces every byte.

    python3 scripts/strategy_study.py --out-dir results/strategy_study
"""

import argparse
import os
import sys

from bebcharge.benchmarks import four_bus_day
from bebcharge.cli import main as cli_main
from bebcharge.scenario import save_scenario


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out-dir", default="results/strategy_study")
    parser.add_argument("--runs", type=int, default=30)
    parser.add_argument("--seed", type=int, default=2024)
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args(argv)

    os.makedirs(args.out_dir, exist_ok=True)
    scenario_path = os.path.join(args.out_dir, "scenario.yaml")
    save_scenario(four_bus_day(), scenario_path)
    print(f"benchmark day -> {scenario_path}")

    code = cli_main([
        "plan",
        "--scenario", scenario_path,
        "--out-dir", os.path.join(args.out_dir, "plan"),
        "--mip-gap", "0.0",
    ])
    if code != 0:
        return code

    return cli_main([
        "mc",
        "--scenario", scenario_path,
        "--out-dir", args.out_dir,
        "--strategy", "all",
        "--runs", str(args.runs),
        "--seed", str(args.seed),
        "--jobs", str(args.jobs),
    ])


if __name__ == "__main__":
    sys.exit(main())
