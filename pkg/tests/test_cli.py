"""End-to-end command-line tests: artifacts, exit codes, and byte-level
reproducibility of every subcommand."""

import json
import os

import pytest

from bebcharge.cli import (
    EXIT_INFEASIBLE,
    EXIT_LIMIT,
    EXIT_OK,
    main,
)
from bebcharge.scenario import save_scenario

from helpers import single_visit_scenario, two_type_scenario


# ---------------------------------------------------------------------------
# fixtures: scenario files shared across the module


@pytest.fixture(scope="module")
def small_scenario_path(tmp_path_factory):
    """One bus, one visit, easily solvable."""
    path = tmp_path_factory.mktemp("scen") / "small.yaml"
    save_scenario(single_visit_scenario(), str(path))
    return str(path)


@pytest.fixture(scope="module")
def infeasible_scenario_path(tmp_path_factory):
    """The route drains more than the visit can restore at any rate."""
    path = tmp_path_factory.mktemp("scen") / "impossible.yaml"
    scenario = single_visit_scenario(
        route_power=90.0,
        charger_power=20.0,
        initial=0.7,
        final=0.9,
        max_soc=0.99,
        day_end=420,
    )
    save_scenario(scenario, str(path))
    return str(path)


@pytest.fixture(scope="module")
def fractional_only_scenario_path(tmp_path_factory):
    """Feasible in the relaxation only: the target needs more energy than the
    fast type alone can deliver, and the visit rule forbids using both."""
    path = tmp_path_factory.mktemp("scen") / "fractional.yaml"
    scenario = two_type_scenario(initial=0.5, final=0.6)
    save_scenario(scenario, str(path))
    return str(path)


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# usage errors (exit 2)


def test_no_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_missing_scenario_file_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["plan", "--scenario", str(tmp_path / "nope.yaml"),
              "--out-dir", str(tmp_path)])
    assert exc.value.code == 2


def test_nonpositive_buses_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--out", str(tmp_path / "s.yaml"), "--buses", "0"])
    assert exc.value.code == 2


def test_unknown_strategy_is_usage_error(tmp_path, small_scenario_path):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--scenario", small_scenario_path,
              "--out-dir", str(tmp_path), "--strategy", "magic"])
    assert exc.value.code == 2


# ---------------------------------------------------------------------------
# gen


def test_gen_writes_identical_files_for_identical_seeds(tmp_path, capsys):
    a, b = str(tmp_path / "a.yaml"), str(tmp_path / "b.yaml")
    assert main(["gen", "--out", a, "--seed", "3", "--buses", "2"]) == EXIT_OK
    assert main(["gen", "--out", b, "--seed", "3", "--buses", "2"]) == EXIT_OK
    assert read_bytes(a) == read_bytes(b)
    assert "2 buses" in capsys.readouterr().out


def test_gen_seed_changes_output(tmp_path):
    a, b = str(tmp_path / "a.yaml"), str(tmp_path / "b.yaml")
    main(["gen", "--out", a, "--seed", "3", "--buses", "2"])
    main(["gen", "--out", b, "--seed", "4", "--buses", "2"])
    assert read_bytes(a) != read_bytes(b)


# ---------------------------------------------------------------------------
# plan


def plan_args(scenario, out_dir, *extra):
    return ["plan", "--scenario", scenario, "--out-dir", str(out_dir), *extra]


def test_plan_writes_artifacts(tmp_path, small_scenario_path, capsys):
    assert main(plan_args(small_scenario_path, tmp_path)) == EXIT_OK
    summary = read_json(tmp_path / "plan_summary.json")
    assert summary["status"] == "optimal"
    assert summary["objective_value"] > 0.0
    assert set(summary["cost_breakdown"]) >= {"consumption", "demand_base"}
    lines = read_bytes(tmp_path / "plan.csv").decode().splitlines()
    assert lines[0] == "bus,charger_type,start_min,end_min,kwh_gained"
    assert len(lines) >= 2  # the single visit must charge
    assert "objective" in capsys.readouterr().out


def test_plan_reruns_are_byte_identical(tmp_path, small_scenario_path):
    d1, d2 = tmp_path / "r1", tmp_path / "r2"
    assert main(plan_args(small_scenario_path, d1)) == EXIT_OK
    assert main(plan_args(small_scenario_path, d2)) == EXIT_OK
    for name in ("plan.csv", "plan_summary.json"):
        assert read_bytes(d1 / name) == read_bytes(d2 / name)


def test_plan_optional_outputs(tmp_path, small_scenario_path):
    log = tmp_path / "solver.csv"
    code = main(plan_args(small_scenario_path, tmp_path,
                          "--export-lp", "--solver-log", str(log)))
    assert code == EXIT_OK
    lp_text = read_bytes(tmp_path / "model.lp").decode()
    assert "Minimize" in lp_text and "Subject To" in lp_text
    log_lines = read_bytes(log).decode().splitlines()
    assert log_lines[0] == "time_s,nodes,incumbent,bound,gap"
    assert len(log_lines) >= 2  # solved to optimality => at least one incumbent
    assert len(log_lines[1].split(",")) == 5


def test_plan_fixed_rate_never_cheaper(tmp_path):
    # the target must be reachable in whole full-rate steps, else the
    # fixed-rate variant is (correctly) infeasible
    path = tmp_path / "scenario.yaml"
    save_scenario(single_visit_scenario(initial=0.675), str(path))
    args = [str(path), tmp_path / "var", "--mip-gap", "0.0"]
    assert main(plan_args(*args)) == EXIT_OK
    args[1] = tmp_path / "fix"
    assert main(plan_args(*args, "--fixed-rate")) == EXIT_OK
    var = read_json(tmp_path / "var" / "plan_summary.json")["objective_value"]
    fix = read_json(tmp_path / "fix" / "plan_summary.json")["objective_value"]
    assert fix >= var - 1e-9


def test_plan_infeasible_exits_3(tmp_path, infeasible_scenario_path, capsys):
    code = main(plan_args(infeasible_scenario_path, tmp_path, "--export-lp"))
    assert code == EXIT_INFEASIBLE
    assert "no schedule" in capsys.readouterr().err
    # the model itself is still exported for inspection
    assert os.path.exists(tmp_path / "model.lp")
    assert not os.path.exists(tmp_path / "plan.csv")


def test_plan_node_limit_without_incumbent_exits_4(
    tmp_path, fractional_only_scenario_path
):
    code = main(plan_args(fractional_only_scenario_path, tmp_path,
                          "--max-nodes", "1"))
    assert code == EXIT_LIMIT
    # with the budget to finish, the same instance is proven impossible
    code = main(plan_args(fractional_only_scenario_path, tmp_path))
    assert code == EXIT_INFEASIBLE


# ---------------------------------------------------------------------------
# simulate


def sim_args(scenario, out_dir, strategy, *extra):
    return ["simulate", "--scenario", scenario, "--out-dir", str(out_dir),
            "--strategy", strategy, *extra]


def test_simulate_qin_artifacts(tmp_path, small_scenario_path, capsys):
    code = main(sim_args(small_scenario_path, tmp_path, "qin", "--zero-noise"))
    assert code == EXIT_OK
    summary = read_json(tmp_path / "run_summary.json")
    assert summary["strategy"] == "qin"
    assert summary["zero_noise"] is True
    assert summary["failed"] is False
    assert "reference_cost" not in summary  # the heuristic plans nothing
    lines = read_bytes(tmp_path / "trajectory.csv").decode().splitlines()
    assert lines[0] == "t_min,bus,soc_kwh,charging_type,gain_kwh"
    assert len(lines) == 1 + 61  # one bus, 60 one-minute steps + final instant
    assert "qin:" in capsys.readouterr().out


def test_simulate_open_loop_zero_noise_equals_plan(tmp_path, small_scenario_path):
    code = main(sim_args(small_scenario_path, tmp_path, "open-loop",
                         "--zero-noise", "--mip-gap", "0.0"))
    assert code == EXIT_OK
    summary = read_json(tmp_path / "run_summary.json")
    assert summary["total_cost"] == pytest.approx(
        summary["reference_cost"], rel=1e-6
    )
    assert summary["violation_count"] == 0


def test_simulate_hierarchical_zero_noise_tracks_plan(
    tmp_path, small_scenario_path
):
    code = main(sim_args(small_scenario_path, tmp_path, "hierarchical",
                         "--zero-noise", "--mip-gap", "0.0"))
    assert code == EXIT_OK
    summary = read_json(tmp_path / "run_summary.json")
    assert summary["failed"] is False
    assert summary["total_cost"] <= 1.05 * summary["reference_cost"]
    assert summary["violation_count"] == 0


def test_simulate_same_seed_is_byte_identical(tmp_path, small_scenario_path):
    d1, d2 = tmp_path / "r1", tmp_path / "r2"
    for d in (d1, d2):
        assert main(sim_args(small_scenario_path, d, "qin", "--seed", "9")) == EXIT_OK
    for name in ("trajectory.csv", "run_summary.json"):
        assert read_bytes(d1 / name) == read_bytes(d2 / name)


def test_simulate_seed_changes_noisy_run(tmp_path, small_scenario_path):
    d1, d2 = tmp_path / "r1", tmp_path / "r2"
    main(sim_args(small_scenario_path, d1, "qin", "--seed", "9"))
    main(sim_args(small_scenario_path, d2, "qin", "--seed", "10"))
    assert read_bytes(d1 / "trajectory.csv") != read_bytes(d2 / "trajectory.csv")


def test_simulate_infeasible_reference_exits_3(
    tmp_path, infeasible_scenario_path
):
    code = main(sim_args(infeasible_scenario_path, tmp_path, "open-loop"))
    assert code == EXIT_INFEASIBLE
    assert not os.path.exists(tmp_path / "run_summary.json")


# ---------------------------------------------------------------------------
# mc


def mc_args(scenario, out_dir, strategy, *extra):
    return ["mc", "--scenario", scenario, "--out-dir", str(out_dir),
            "--strategy", strategy, *extra]


def test_mc_artifacts_and_row_counts(tmp_path, small_scenario_path):
    code = main(mc_args(small_scenario_path, tmp_path, "qin", "--runs", "3"))
    assert code == EXIT_OK
    out = tmp_path / "qin"
    summary = read_json(out / "summary.json")
    assert summary["n_runs"] == 3
    assert len(summary["run_costs"]) == 3
    runs = read_bytes(out / "runs.csv").decode().splitlines()
    assert runs[0] == "run,cost,violation_count,terminal_b1"
    assert len(runs) == 1 + 3
    trace = read_bytes(out / "trace.csv").decode().splitlines()
    assert trace[0] == "t,mean_soc,sigma3_lo,sigma3_hi"
    assert len(trace) == 1 + 61


def test_mc_jobs_do_not_change_results(tmp_path, small_scenario_path):
    d1, d2 = tmp_path / "serial", tmp_path / "parallel"
    main(mc_args(small_scenario_path, d1, "qin", "--runs", "2", "--jobs", "1"))
    main(mc_args(small_scenario_path, d2, "qin", "--runs", "2", "--jobs", "2"))
    for name in ("summary.json", "runs.csv", "trace.csv"):
        assert read_bytes(d1 / "qin" / name) == read_bytes(d2 / "qin" / name)


def test_mc_all_compares_strategies(tmp_path, small_scenario_path, capsys):
    code = main(mc_args(small_scenario_path, tmp_path, "all", "--runs", "2"))
    assert code == EXIT_OK
    for strategy in ("qin", "open_loop", "hierarchical"):
        assert os.path.exists(tmp_path / strategy / "summary.json")
    out = capsys.readouterr().out
    assert "strategy" in out and "mean_cost" in out
    assert out.count("\n") >= 4  # header + one row per strategy


def test_mc_multi_day_chains(tmp_path, small_scenario_path):
    code = main(mc_args(small_scenario_path, tmp_path, "qin",
                        "--runs", "2", "--days", "2"))
    assert code == EXIT_OK
    days = read_bytes(tmp_path / "qin" / "days.csv").decode().splitlines()
    assert days[0] == "day,plan_cost,mean_cost,violation_rate,failed"
    assert len(days) == 1 + 2
    summary = read_json(tmp_path / "qin" / "summary.json")
    assert summary["completed_days"] == 2
    assert [d["day"] for d in summary["days"]] == [0, 1]
