"""Screen, split, sweep and fixture-validation workflows with deterministic file output."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

from .acpf import FeasReport, cost_delta, feasibility_check
from .bussplit import (SplitError, TopologyAssignment, build_bus_milp, expand_busbar, extract_topology,
                       neighbor_sections)
from .grid import CaseParseError, Grid, GridValidationError, load_case, resolve_case
from .lpac import OpfInfeasible, OpfSolution, solve_lpac_opf
from .metrics import MetricTable, SelectionPolicy, metric_table, select_candidates, table_from_csv, table_to_csv
from .mip import ENGINES, GAP_REACHED, INFEASIBLE, NODE_LIMIT, OPTIMAL, SolverError, solve_milp

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE_BASE, EXIT_FIXTURE, EXIT_SOLVER = 0, 2, 3, 4, 5
# decreases below this are reported as "no improvement"
IMPROVEMENT_PCT = 0.01
# sweeps over larger cases need an explicit opt-in
LONG_SWEEP_BUSES = 300
SWEEP_COLUMNS = ("bus", "status", "lpac_base_objective", "split_objective", "cost_decrease_pct", "flag",
                 "ac_feasible", "coupler", "n_disconnected", "nodes", "gap")
PLOT_COLUMNS = ("bus", "cost_decrease_pct", "phi_rank", "candidate")


class ConfigError(ValueError):
    """Invalid run configuration (exit code 2)."""


class FixtureMismatch(AssertionError):
    """Published metric tables do not reproduce the published selection (exit code 4)."""


@dataclass(frozen=True)
class RunConfig:
    case: str = ""
    policy: SelectionPolicy = field(default_factory=SelectionPolicy)
    gap: float = 1e-4
    segments: int = 10
    theta_max: float = 0.35
    thermal_sides: int = 8
    threshold: float = 0.85
    parallel: int = 1
    out: str = "out"
    buses: tuple[int, ...] = ()
    allow_long: bool = False
    engine: str = "revised"
    vband: tuple[float, float] | None = None
    node_limit: int = 100_000
    force_null: bool = False
    ac_tol: float = 0.01
    seed: int = 0

    def check(self) -> "RunConfig":
        if not 0 <= self.gap < 1:
            raise ConfigError("gap must lie in [0, 1)")
        if self.segments < 2:
            raise ConfigError("segments must be at least 2")
        if self.thermal_sides < 4:
            raise ConfigError("thermal_sides must be at least 4")
        if not 0 < self.theta_max <= 1.5:
            raise ConfigError("theta_max must lie in (0, 1.5]")
        if not 0 < self.threshold <= 1:
            raise ConfigError("threshold must lie in (0, 1]")
        if self.parallel < 1:
            raise ConfigError("parallel must be at least 1")
        if self.node_limit < 1:
            raise ConfigError("node_limit must be positive")
        if self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {ENGINES}")
        if self.vband is not None and not 0 < self.vband[0] < self.vband[1]:
            raise ConfigError("vband must satisfy 0 < vmin < vmax")
        if self.ac_tol < 0:
            raise ConfigError("ac_tol must be non-negative")
        return self


def load_grid(cfg: RunConfig) -> Grid:
    """Case named by ``cfg`` with the optional uniform voltage band applied."""
    if not cfg.case:
        raise ConfigError("no case given")
    try:
        grid = load_case(resolve_case(cfg.case))
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc
    except (CaseParseError, GridValidationError) as exc:
        raise ConfigError(f"{cfg.case}: {exc}") from exc
    if cfg.vband is not None:
        grid = grid.with_voltage_band(*cfg.vband)
    return grid


def base_opf(grid: Grid, cfg: RunConfig) -> OpfSolution:
    return solve_lpac_opf(grid, segments=cfg.segments, theta_max=cfg.theta_max, thermal_sides=cfg.thermal_sides,
                          engine=cfg.engine)


@dataclass
class ScreenResult:
    opf: OpfSolution
    table: MetricTable
    candidates: list[int]


def screen(grid: Grid, cfg: RunConfig, opf: OpfSolution | None = None) -> ScreenResult:
    opf = opf or base_opf(grid, cfg)
    table = metric_table(grid, opf, threshold=cfg.threshold)
    return ScreenResult(opf, table, select_candidates(table, cfg.policy))


@dataclass
class SplitResult:
    bus: int
    status: str
    base_objective: float
    split_objective: float | None = None
    cost_decrease_pct: float | None = None
    topology: TopologyAssignment | None = None
    feasibility: FeasReport | None = None
    sections: dict[int, str] = field(default_factory=dict)
    nodes: int = 0
    gap: float | None = None
    wall_time: float = 0.0
    message: str = ""

    @property
    def flag(self) -> str:
        if self.cost_decrease_pct is None:
            return ""
        if self.cost_decrease_pct < -1e-4:
            return "regression"
        return "improving" if self.cost_decrease_pct > IMPROVEMENT_PCT else ""

    @property
    def ac_feasible(self) -> bool | None:
        return None if self.feasibility is None else self.feasibility.ok


def split_bus(grid: Grid, bus: int, base_objective: float, cfg: RunConfig, validate: bool = True) -> SplitResult:
    """Optimal split of one bus, validated by AC power flow.

    The unsplit topology seeds branch-and-bound as incumbent, so a reported
    decrease is never negative beyond the MIP gap.
    """
    t0 = time.perf_counter()
    res = SplitResult(bus=bus, status="error", base_objective=base_objective)
    try:
        split = expand_busbar(grid, bus)
        milp = build_bus_milp(split, segments=cfg.segments, theta_max=cfg.theta_max,
                              thermal_sides=cfg.thermal_sides, force_null=cfg.force_null)
        sol = solve_milp(milp.problem, gap=cfg.gap, node_limit=cfg.node_limit, incumbent=milp.null_assignment(),
                         engine=cfg.engine)
    except SplitError as exc:
        res.status, res.message = "skipped", str(exc)
        res.wall_time = time.perf_counter() - t0
        return res
    except SolverError as exc:
        res.message = str(exc)
        res.wall_time = time.perf_counter() - t0
        return res
    res.nodes = sol.nodes
    if sol.status == INFEASIBLE or sol.x is None:
        res.status = "infeasible"
        res.wall_time = time.perf_counter() - t0
        return res
    res.status = {OPTIMAL: "optimal", GAP_REACHED: "optimal", NODE_LIMIT: "node_limit"}.get(sol.status, sol.status)
    res.gap = sol.gap
    res.split_objective = sol.objective
    res.cost_decrease_pct = cost_delta(base_objective, sol.objective)
    new_grid, topo = extract_topology(split, sol, milp)
    res.topology = topo
    res.sections = neighbor_sections(split, topo)
    if validate:
        try:
            opf = base_opf(new_grid, cfg)
            res.feasibility = feasibility_check(new_grid, opf, tol=cfg.ac_tol)
        except (OpfInfeasible, SolverError) as exc:
            res.message = f"validation failed: {exc}"
    res.wall_time = time.perf_counter() - t0
    return res


def _sweep_task(args: tuple[Grid, int, float, RunConfig, bool]) -> SplitResult:
    grid, bus, base, cfg, validate = args
    return split_bus(grid, bus, base, cfg, validate)


def split_many(grid: Grid, buses: list[int], base_objective: float, cfg: RunConfig,
               validate: bool = True) -> list[SplitResult]:
    """Independent per-bus splits, over ``cfg.parallel`` worker processes, sorted by bus."""
    tasks = [(grid, b, base_objective, cfg, validate) for b in buses]
    if cfg.parallel > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.parallel) as pool:
            results = list(pool.map(_sweep_task, tasks, chunksize=1))
    else:
        results = [_sweep_task(t) for t in tasks]
    return sorted(results, key=lambda r: r.bus)


@dataclass
class SweepResult:
    base_objective: float
    results: list[SplitResult]

    @property
    def improving(self) -> list[int]:
        """Improving buses, largest decrease first."""
        good = [r for r in self.results if r.cost_decrease_pct is not None and r.cost_decrease_pct > IMPROVEMENT_PCT]
        return [r.bus for r in sorted(good, key=lambda r: (-r.cost_decrease_pct, r.bus))]

    def decreases(self) -> dict[int, float]:
        return {r.bus: r.cost_decrease_pct for r in self.results if r.cost_decrease_pct is not None}

    @property
    def total_wall_time(self) -> float:
        return sum(r.wall_time for r in self.results)


def sweep(grid: Grid, cfg: RunConfig, opf: OpfSolution | None = None, validate: bool = False) -> SweepResult:
    if len(grid.buses) > LONG_SWEEP_BUSES and not cfg.allow_long:
        raise ConfigError(f"sweeping {len(grid.buses)} buses is a long run; pass --allow-long to proceed")
    opf = opf or base_opf(grid, cfg)
    buses = [b for b in grid.bus_ids if grid.branches_at(b)]
    return SweepResult(opf.objective, split_many(grid, buses, opf.objective, cfg, validate))


@dataclass(frozen=True)
class HitRate:
    candidates: tuple[int, ...]
    top_improving: tuple[int, ...]
    captured: tuple[int, ...]
    improving_candidates: tuple[int, ...]

    @property
    def recall(self) -> float:
        """Share of the top improving buses that the policy selected."""
        return len(self.captured) / len(self.top_improving) if self.top_improving else 0.0

    @property
    def precision(self) -> float:
        """Share of selected candidates whose split improves the cost."""
        return len(self.improving_candidates) / len(self.candidates) if self.candidates else 0.0


def hit_rate(sweep_result: SweepResult, candidates: list[int]) -> HitRate:
    """Compare candidates with the equally long head of the sweep's improving list."""
    improving = sweep_result.improving
    top = tuple(improving[:len(candidates)])
    cand = tuple(candidates)
    return HitRate(cand, top, tuple(b for b in top if b in cand), tuple(b for b in cand if b in improving))


@dataclass
class FixtureCheck:
    name: str
    expected: list[int]
    selected: list[int]

    @property
    def ok(self) -> bool:
        return set(self.expected) == set(self.selected)

    def diff(self) -> tuple[list[int], list[int]]:
        return sorted(set(self.expected) - set(self.selected)), sorted(set(self.selected) - set(self.expected))


def _fixture_dir() -> Path:
    return Path(str(resources.files("topocand") / "data" / "fixtures"))


def validate_fixtures(directory: str | Path | None = None) -> list[FixtureCheck]:
    """Re-run candidate selection on published metric tables."""
    root = Path(directory) if directory else _fixture_dir()
    spec_path = root / "policies.json"
    if not spec_path.exists():
        raise ConfigError(f"missing {spec_path}")
    specs = json.loads(spec_path.read_text())
    checks = []
    for name in sorted(specs):
        entry = specs[name]
        text = (root / f"{name}.csv").read_text()
        if not text.strip() or len(text.strip().splitlines()) < 2:
            logger.warning("fixture %s is empty; nothing to check", name)
            checks.append(FixtureCheck(name, [], []))
            continue
        table = table_from_csv(text)
        policy = SelectionPolicy(**entry["policy"])
        checks.append(FixtureCheck(name, list(entry["expected"]),
                                   select_candidates(table, policy, mean_phi=entry.get("mean_phi"))))
    return checks


# ---- deterministic writers ----------------------------------------------------------------------

def _num(v: float | None, fmt: str = ".6f") -> str:
    return "" if v is None else format(v, fmt)


def candidates_json(result: ScreenResult, cfg: RunConfig, case_name: str) -> str:
    data = {"schema": "topocand.candidates", "version": 1, "case": case_name,
            "policy": asdict(cfg.policy), "threshold": cfg.threshold,
            "lpac_objective": round(result.opf.objective, 6), "mean_phi": round(result.table.mean_phi, 6),
            "candidates": result.candidates}
    return json.dumps(data, indent=1) + "\n"


def sweep_csv(results: list[SplitResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in sorted(results, key=lambda r: r.bus):
        topo = r.topology
        w.writerow([r.bus, r.status, _num(r.base_objective), _num(r.split_objective), _num(r.cost_decrease_pct),
                    r.flag, "" if r.ac_feasible is None else str(r.ac_feasible).lower(),
                    topo.coupler if topo else "",
                    sum(1 for _, s in topo.elements if s == "disconnected") if topo else "",
                    r.nodes, _num(r.gap, ".3e")])
    return buf.getvalue()


def plotdata_csv(results: list[SplitResult], table: MetricTable, candidates: list[int]) -> str:
    """x = cost decrease (%), y = phi rank, one row per swept bus."""
    ranks = {r.bus: r.phi_rank for r in table}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLOT_COLUMNS)
    for r in sorted(results, key=lambda r: r.bus):
        if r.cost_decrease_pct is None:
            continue
        w.writerow([r.bus, _num(r.cost_decrease_pct), ranks.get(r.bus, ""), int(r.bus in candidates)])
    return buf.getvalue()


def split_summary(r: SplitResult) -> dict:
    return {"bus": r.bus, "status": r.status, "lpac_base_objective": round(r.base_objective, 6),
            "split_objective": None if r.split_objective is None else round(r.split_objective, 6),
            "cost_decrease_pct": None if r.cost_decrease_pct is None else round(r.cost_decrease_pct, 6),
            "flag": r.flag, "ac_feasible": r.ac_feasible, "nodes": r.nodes,
            "neighbor_sections": {str(k): v for k, v in sorted(r.sections.items())}, "message": r.message}


class OutputDir:
    """Data files are byte-deterministic; timing and progress go to run.log only."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self._log = self.path / "run.log"

    def write(self, name: str, text: str) -> Path:
        p = self.path / name
        p.write_text(text)
        return p

    def log(self, message: str) -> None:
        with self._log.open("a") as fh:
            fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {message}\n")

    def write_screen(self, result: ScreenResult, cfg: RunConfig, case_name: str) -> None:
        self.write("metrics.csv", table_to_csv(result.table))
        self.write("candidates.json", candidates_json(result, cfg, case_name))

    def write_split(self, r: SplitResult) -> None:
        if r.topology is not None:
            doc = r.topology.to_dict()
            doc["split"] = split_summary(r)
            self.write(f"topology-{r.bus}.json", json.dumps(doc, indent=1) + "\n")
        if r.feasibility is not None:
            self.write(f"feasibility-{r.bus}.json", r.feasibility.to_json() + "\n")
        self.log(f"bus {r.bus}: {r.status} in {r.wall_time:.2f} s, {r.nodes} nodes {r.message}".rstrip())


__all__ = ["RunConfig", "ConfigError", "FixtureMismatch", "ScreenResult", "SplitResult", "SweepResult", "HitRate",
           "FixtureCheck", "OutputDir", "load_grid", "base_opf", "screen", "split_bus", "split_many", "sweep",
           "hit_rate", "validate_fixtures", "sweep_csv", "plotdata_csv", "candidates_json", "split_summary",
           "EXIT_OK", "EXIT_CONFIG", "EXIT_INFEASIBLE_BASE", "EXIT_FIXTURE", "EXIT_SOLVER", "IMPROVEMENT_PCT",
           "LONG_SWEEP_BUSES"]
