import json
import subprocess
import sys

import pytest

from conftest import three_bus_grid
from topocand.cli import main
from topocand.grid import Bus, Grid, GenCost, Generator, Load, SLACK
from topocand.metrics import SelectionPolicy
from topocand.pipeline import (EXIT_CONFIG, EXIT_FIXTURE, EXIT_INFEASIBLE_BASE, EXIT_OK, ConfigError, RunConfig,
                               SweepResult, SplitResult, hit_rate, split_bus, split_many, sweep, sweep_csv)

TWO_BUS = """
function mpc = toy
mpc.baseMVA = 100;
mpc.bus = [
 1 3 0  0  0 0 1 1.0 0 230 1 1.1 0.9;
 2 1 {load} 10 0 0 1 1.0 0 230 1 1.1 0.9;
];
mpc.gen = [
 1 0 0 50 -50 1.0 100 1 200 0;
];
mpc.branch = [
 1 2 0.01 0.1 0.02 {rate} {rate} {rate} 0 0 1 -30 30;
];
mpc.gencost = [
 2 0 0 2 20 0;
];
"""


def write_case(tmp_path, name="toy.m", load=50, rate=120):
    p = tmp_path / name
    p.write_text(TWO_BUS.format(load=load, rate=rate))
    return str(p)


def run(argv):
    return main([str(a) for a in argv])


def test_two_bus_screen_has_no_candidates(tmp_path, capsys):
    case = write_case(tmp_path)
    out = tmp_path / "out"
    assert run(["screen", "--case", case, "--out", out]) == EXIT_OK
    cand = json.loads((out / "candidates.json").read_text())
    assert cand["candidates"] == []
    assert (out / "metrics.csv").read_text().startswith("bus,phi,phi_rank")
    assert "candidates (0)" in capsys.readouterr().out


def test_exit_codes(tmp_path, capsys):
    case = write_case(tmp_path)
    assert run(["screen", "--case", tmp_path / "missing.m", "--out", tmp_path / "o"]) == EXIT_CONFIG
    assert run(["screen", "--case", case, "--gap", "2", "--out", tmp_path / "o"]) == EXIT_CONFIG
    assert run(["screen", "--case", case, "--top-k-phi", "-1", "--out", tmp_path / "o"]) == EXIT_CONFIG
    assert run(["split", "--case", case, "--out", tmp_path / "o"]) == EXIT_CONFIG
    assert run(["split", "--case", case, "--bus", "9", "--out", tmp_path / "o"]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as info:
        run(["screen", "--segments", "many"])
    assert info.value.code == EXIT_CONFIG
    tight = write_case(tmp_path, "tight.m", load=50, rate=20)
    assert run(["screen", "--case", tight, "--out", tmp_path / "o"]) == EXIT_INFEASIBLE_BASE
    assert "load shed" in capsys.readouterr().err


def test_fixture_exit_codes(tmp_path, capsys):
    assert run(["validate-fixtures"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "case793_published: 15 candidates match" in text and "case3374_published: 20 candidates match" in text
    fx = tmp_path / "fx"
    fx.mkdir()
    (fx / "policies.json").write_text(json.dumps({
        "bad": {"policy": {"top_k_phi": 1, "min_elements": 0, "max_xi": 9, "require_zeta_empty": False,
                           "top_k_elements": 0, "phi_above_mean": False}, "mean_phi": None, "expected": [2]},
        "empty": {"policy": {}, "mean_phi": None, "expected": []}}))
    (fx / "bad.csv").write_text("bus,phi,phi_rank,n_branches,xi,n_elements,zeta\n1,5.0,1,2,0,3,\n2,1.0,2,2,0,3,\n")
    (fx / "empty.csv").write_text("")
    assert run(["validate-fixtures", "--fixtures", fx]) == EXIT_FIXTURE
    text = capsys.readouterr().out
    assert "MISMATCH missing=[2] unexpected=[1]" in text and "empty fixture" in text


def test_outputs_are_byte_deterministic(tmp_path):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        assert run(["sweep", "--case", "case9", "--out", d]) == EXIT_OK
        assert run(["split", "--case", "case9", "--bus", "4", "7", "--out", d]) == EXIT_OK
    names = sorted(p.name for p in dirs[0].iterdir() if p.name != "run.log")
    assert {"metrics.csv", "candidates.json", "sweep.csv", "plotdata.csv", "split.json", "topology-4.json",
            "feasibility-7.json"} <= set(names)
    for n in names:
        assert (dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes(), n
    assert "wall" not in (dirs[0] / "sweep.csv").read_text()
    assert (dirs[0] / "run.log").read_text().strip()


def test_parallel_sweep_matches_serial():
    from topocand.pipeline import load_grid
    cfg = RunConfig(case="case14")
    grid = load_grid(cfg)
    serial = sweep(grid, cfg)
    par = sweep(grid, RunConfig(case="case14", parallel=2))
    assert sweep_csv(serial.results) == sweep_csv(par.results)
    assert serial.improving == par.improving and serial.improving


def test_force_null_gives_zero_decrease(case39, opf39):
    cfg = RunConfig(force_null=True)
    for b in (2, 16):
        r = split_bus(case39, b, opf39.objective, cfg, validate=False)
        assert r.status == "optimal"
        assert abs(r.cost_decrease_pct) <= 1e-4
        assert r.topology.is_null and r.flag == ""


def test_split_records_skips_and_keeps_going():
    g = three_bus_grid()
    lone = Grid(g.base_mva, g.buses + (Bus(9, "pq", 0.9, 1.1, 230.0),), g.branches, g.generators, g.loads)
    results = split_many(lone, [9, 2], 2000.0, RunConfig())
    assert [r.bus for r in results] == [2, 9]
    assert results[1].status == "skipped" and results[0].status == "optimal"


def test_one_bus_sweep_is_empty():
    g = Grid(100.0, (Bus(1, SLACK, 0.9, 1.1, 230.0),),
             (), (Generator(1, 1, 0.0, 5.0, -1.0, 1.0, GenCost(2, (10.0, 0.0))),), (Load(1, 1, 1.0, 0.0),))
    res = sweep(g, RunConfig())
    assert res.results == [] and res.improving == []


def test_long_sweep_gate(monkeypatch):
    import topocand.pipeline as pl
    monkeypatch.setattr(pl, "LONG_SWEEP_BUSES", 2)
    with pytest.raises(ConfigError):
        pl.sweep(three_bus_grid(), RunConfig())


def test_hit_rate_definition():
    rs = [SplitResult(b, "optimal", 100.0, cost_decrease_pct=d) for b, d in ((1, 0.5), (2, 0.2), (3, 0.0), (4, 0.1))]
    hr = hit_rate(SweepResult(100.0, rs), [2, 3])
    assert hr.top_improving == (1, 2) and hr.captured == (2,)
    assert hr.recall == 0.5 and hr.precision == 0.5


def test_regression_flag():
    assert SplitResult(1, "optimal", 100.0, cost_decrease_pct=-0.01).flag == "regression"
    assert SplitResult(1, "optimal", 100.0, cost_decrease_pct=0.005).flag == ""


def test_config_checks():
    with pytest.raises(ConfigError):
        RunConfig(segments=1).check()
    with pytest.raises(ConfigError):
        RunConfig(vband=(1.1, 0.9)).check()
    assert RunConfig(policy=SelectionPolicy()).check().engine == "revised"


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "topocand", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "validate-fixtures" in proc.stdout
