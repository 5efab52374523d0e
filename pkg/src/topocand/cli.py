"""Command-line entry point: ``topocand screen|split|sweep|validate-fixtures``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .lpac import OpfInfeasible
from .metrics import SelectionPolicy
from .mip import ENGINES, SolverError
from .pipeline import (EXIT_CONFIG, EXIT_FIXTURE, EXIT_INFEASIBLE_BASE, EXIT_OK, EXIT_SOLVER, ConfigError,
                       OutputDir, RunConfig, hit_rate, load_grid, plotdata_csv, screen, split_many, split_summary,
                       sweep, sweep_csv, validate_fixtures)

logger = logging.getLogger("topocand")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _band(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected VMIN,VMAX") from exc
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--case", help="Matpower case file or bundled case name")
    common.add_argument("--top-k-phi", type=int, default=15)
    common.add_argument("--min-elements", type=int, default=4)
    common.add_argument("--max-xi", type=int, default=1)
    common.add_argument("--require-zeta", dest="require_zeta", action="store_true", default=True,
                        help="drop buses with a binding voltage or angle limit (default)")
    common.add_argument("--no-require-zeta", dest="require_zeta", action="store_false")
    common.add_argument("--top-k-elements", type=int, default=7)
    common.add_argument("--phi-above-mean", dest="phi_above_mean", action="store_true", default=True)
    common.add_argument("--no-phi-above-mean", dest="phi_above_mean", action="store_false")
    common.add_argument("--gap", type=float, default=1e-4, help="relative MIP gap")
    common.add_argument("--segments", type=int, default=10, help="cosine cuts and cost pieces")
    common.add_argument("--thermal-sides", type=int, default=8, help="facets of the thermal polygon")
    common.add_argument("--theta-max", type=float, default=0.35, help="half-width of the cosine cut range (rad)")
    common.add_argument("--threshold", type=float, default=0.85, help="branch utilization counted by xi")
    common.add_argument("--parallel", type=int, default=1, help="worker processes for per-bus solves")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--bus", type=int, nargs="*", default=[], help="bus ids to split")
    common.add_argument("--allow-long", action="store_true", help="permit sweeps over large cases")
    common.add_argument("--engine", choices=ENGINES, default="revised", help="LP engine")
    common.add_argument("--vband", type=_band, default=None, metavar="VMIN,VMAX",
                        help="override every bus voltage band")
    common.add_argument("--node-limit", type=int, default=100_000)
    common.add_argument("--force-null", action="store_true", help="fix the unsplit topology (diagnostic)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="topocand", description="Busbar-splitting candidate screening and optimization.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("screen", parents=[common], help="base LPAC-OPF, metrics and candidate list")
    sub.add_parser("split", parents=[common], help="optimal split of selected buses")
    sub.add_parser("sweep", parents=[common], help="split every bus, one at a time")
    fx = sub.add_parser("validate-fixtures", parents=[common], help="re-run selection on published tables")
    fx.add_argument("--fixtures", default=None, help="fixture directory (default: bundled)")
    return p


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    try:
        policy = SelectionPolicy(ns.top_k_phi, ns.min_elements, ns.max_xi, ns.require_zeta, ns.top_k_elements,
                                 ns.phi_above_mean)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(case=ns.case or "", policy=policy, gap=ns.gap, segments=ns.segments,
                     theta_max=ns.theta_max, thermal_sides=ns.thermal_sides, threshold=ns.threshold,
                     parallel=ns.parallel, out=ns.out, buses=tuple(ns.bus), allow_long=ns.allow_long,
                     engine=ns.engine, vband=ns.vband, node_limit=ns.node_limit, force_null=ns.force_null,
                     seed=ns.seed).check()


def _print_top(result, n: int = 15) -> None:
    print(f"{'bus':>8} {'phi':>12} {'rank':>5} {'xi':>3} {'elems':>6}  zeta")
    for r in result.table.records[:n]:
        print(f"{r.bus:>8} {r.phi:>12.4f} {r.phi_rank:>5} {r.xi:>3} {r.n_elements:>6}  {';'.join(r.zeta_flags)}")
    print(f"candidates ({len(result.candidates)}): {' '.join(map(str, result.candidates))}")


def cmd_screen(cfg: RunConfig) -> int:
    grid = load_grid(cfg)
    out = OutputDir(cfg.out)
    result = screen(grid, cfg)
    out.write_screen(result, cfg, grid.name)
    out.log(f"screen {grid.name}: objective {result.opf.objective:.6f}, {len(result.candidates)} candidates")
    print(f"LPAC-OPF objective {result.opf.objective:.4f}")
    _print_top(result)
    return EXIT_OK


def cmd_split(cfg: RunConfig) -> int:
    grid = load_grid(cfg)
    if not cfg.buses:
        raise ConfigError("split needs at least one --bus")
    unknown = [b for b in cfg.buses if b not in grid.bus_index]
    if unknown:
        raise ConfigError(f"unknown bus id(s): {unknown}")
    out = OutputDir(cfg.out)
    result = screen(grid, cfg)
    results = split_many(grid, sorted(set(cfg.buses)), result.opf.objective, cfg)
    for r in results:
        out.write_split(r)
        dec = "-" if r.cost_decrease_pct is None else f"{r.cost_decrease_pct:.3f}%"
        ac = {None: "n/a", True: "pass", False: "FAIL"}[r.ac_feasible]
        print(f"bus {r.bus}: {r.status}, cost decrease {dec}, AC check {ac}")
        if r.feasibility is not None and not r.feasibility.ok:
            print(r.feasibility.to_text())
    out.write("split.json", json.dumps([split_summary(r) for r in results], indent=1) + "\n")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    grid = load_grid(cfg)
    out = OutputDir(cfg.out)
    result = screen(grid, cfg)
    out.write_screen(result, cfg, grid.name)
    sw = sweep(grid, cfg, opf=result.opf)
    for r in sw.results:
        out.log(f"bus {r.bus}: {r.status} in {r.wall_time:.2f} s")
    out.write("sweep.csv", sweep_csv(sw.results))
    out.write("plotdata.csv", plotdata_csv(sw.results, result.table, result.candidates))
    hr = hit_rate(sw, result.candidates)
    summary = {"schema": "topocand.sweep", "version": 1, "case": grid.name,
               "lpac_base_objective": round(sw.base_objective, 6), "buses": len(sw.results),
               "improving": sw.improving, "candidates": result.candidates,
               "top_improving": list(hr.top_improving), "captured": list(hr.captured),
               "recall": round(hr.recall, 6), "precision": round(hr.precision, 6),
               "regressions": [r.bus for r in sw.results if r.flag == "regression"],
               "failures": [r.bus for r in sw.results if r.status in ("error", "infeasible")]}
    out.write("sweep-summary.json", json.dumps(summary, indent=1) + "\n")
    out.log(f"sweep {grid.name}: {len(sw.results)} buses, {sw.total_wall_time:.1f} s solver time")
    print(f"swept {len(sw.results)} buses; improving: {' '.join(map(str, sw.improving)) or '-'}")
    print(f"hit rate: {len(hr.captured)}/{len(hr.top_improving)} of the top improving buses selected; "
          f"{len(hr.improving_candidates)}/{len(hr.candidates)} candidates improve")
    return EXIT_OK


def cmd_validate_fixtures(fixtures: str | None) -> int:
    checks = validate_fixtures(fixtures)
    bad = 0
    for c in checks:
        if not c.expected and not c.selected:
            print(f"{c.name}: empty fixture, nothing to check (pass)")
            continue
        if c.ok:
            print(f"{c.name}: {len(c.selected)} candidates match")
        else:
            bad += 1
            missing, extra = c.diff()
            print(f"{c.name}: MISMATCH missing={missing} unexpected={extra}")
    return EXIT_FIXTURE if bad else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        if ns.command == "validate-fixtures":
            return cmd_validate_fixtures(ns.fixtures)
        cfg = config_from_args(ns)
        if ns.command == "screen":
            return cmd_screen(cfg)
        if ns.command == "split":
            return cmd_split(cfg)
        return cmd_sweep(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OpfInfeasible as exc:
        shed = ", ".join(f"bus {b}: {p:.4f}+j{q:.4f}" for b, (p, q) in sorted(exc.shed.items())) or "no diagnostic"
        print(f"base LPAC-OPF is infeasible; load shed needed at {shed}", file=sys.stderr)
        return EXIT_INFEASIBLE_BASE
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
