"""Busbar screening metrics and candidate selection.

phi  sum of absolute LMP differences across a bus's incident branches,
xi   number of incident branches loaded above a utilization threshold,
zeta binding voltage-magnitude or angle-difference limits at the bus.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .grid import Grid, count_elements
from .lpac import OpfSolution

CSV_COLUMNS = ("bus", "phi", "phi_rank", "n_branches", "xi", "n_elements", "zeta", "cost_decrease_pct")
ZETA_TOL = 1e-4
XI_THRESHOLD = 0.85


@dataclass(frozen=True)
class MetricRecord:
    bus: int
    phi: float
    phi_rank: int
    xi: int
    zeta_flags: tuple[str, ...]
    n_branches: int
    n_elements: int
    cost_decrease_pct: float | None = None


@dataclass(frozen=True)
class SelectionPolicy:
    top_k_phi: int = 15
    min_elements: int = 4
    max_xi: int = 1
    require_zeta_empty: bool = True
    top_k_elements: int = 7
    phi_above_mean: bool = True

    def __post_init__(self):
        for name in ("top_k_phi", "min_elements", "max_xi", "top_k_elements"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def empty(cls) -> "SelectionPolicy":
        return cls(0, 0, 0, False, 0, False)


def _check_bus(grid: Grid, bus: int) -> None:
    if bus not in grid.bus_index:
        raise KeyError(f"unknown bus id {bus}")


def phi_metric(grid: Grid, sol: OpfSolution, bus: int) -> float:
    _check_bus(grid, bus)
    total = 0.0
    for br in grid.branches_at(bus):
        other = br.to_bus if br.from_bus == bus else br.from_bus
        total += abs(sol.lmp[bus] - sol.lmp[other])
    return total


def branch_utilization(br, flows: tuple[float, float, float, float]) -> float:
    """max(|S_ij|, |S_ji|) / rate_a, or 0 for unlimited branches."""
    if br.rate_a <= 0:
        return 0.0
    pij, qij, pji, qji = flows
    return max(math.hypot(pij, qij), math.hypot(pji, qji)) / br.rate_a


def xi_metric(grid: Grid, sol: OpfSolution, bus: int, threshold: float = XI_THRESHOLD) -> int:
    _check_bus(grid, bus)
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    return sum(1 for br in grid.branches_at(bus)
               if br.id in sol.flows and branch_utilization(br, sol.flows[br.id]) > threshold)


def zeta_metric(grid: Grid, sol: OpfSolution, bus: int, tol: float = ZETA_TOL) -> tuple[str, ...]:
    _check_bus(grid, bus)
    if tol <= 0:
        raise ValueError("tol must be positive")
    b = grid.bus_by_id[bus]
    flags = []
    vm = sol.vmags[bus]
    if abs(vm - b.vmax) <= tol:
        flags.append("vmag-upper")
    if abs(vm - b.vmin) <= tol:
        flags.append("vmag-lower")
    for br in grid.branches_at(bus):
        d = sol.angles[br.from_bus] - sol.angles[br.to_bus]
        if (br.ang_max < 2 * math.pi and abs(d - br.ang_max) <= tol) or \
                (br.ang_min > -2 * math.pi and abs(d - br.ang_min) <= tol):
            flags.append("angle-diff")
            break
    return tuple(flags)


def rank_by_phi(phis: dict[int, float]) -> dict[int, int]:
    order = sorted(phis, key=lambda b: (-phis[b], b))
    return {b: k + 1 for k, b in enumerate(order)}


@dataclass
class MetricTable:
    records: list[MetricRecord]
    mean_phi: float = field(default=0.0)

    def __post_init__(self):
        if self.records and not self.mean_phi:
            self.mean_phi = sum(r.phi for r in self.records) / len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def by_bus(self) -> dict[int, MetricRecord]:
        return {r.bus: r for r in self.records}

    def with_cost_decrease(self, decreases: dict[int, float]) -> "MetricTable":
        from dataclasses import replace

        recs = [replace(r, cost_decrease_pct=decreases.get(r.bus, r.cost_decrease_pct)) for r in self.records]
        return MetricTable(recs, self.mean_phi)


def metric_table(grid: Grid, sol: OpfSolution, threshold: float = XI_THRESHOLD,
                 tol: float = ZETA_TOL) -> MetricTable:
    """One record per bus, ordered by phi rank."""
    phis = {b: phi_metric(grid, sol, b) for b in grid.bus_ids}
    ranks = rank_by_phi(phis)
    records = []
    for b in sorted(grid.bus_ids, key=lambda b: ranks[b]):
        cnt = count_elements(grid, b)
        records.append(MetricRecord(bus=b, phi=phis[b], phi_rank=ranks[b], xi=xi_metric(grid, sol, b, threshold),
                                    zeta_flags=zeta_metric(grid, sol, b, tol), n_branches=cnt.n_branches,
                                    n_elements=cnt.n_elements))
    return MetricTable(records)


def select_candidates(table: MetricTable | Sequence[MetricRecord], policy: SelectionPolicy,
                      mean_phi: float | None = None) -> list[int]:
    """Candidate buses: top phi (group a) then element-rich, above-mean phi (group b).

    ``mean_phi`` overrides the table mean, for tables that list only a subset
    of a grid's buses.
    """
    records = list(table)
    if not records:
        raise ValueError("metric table is empty")
    if mean_phi is None:
        mean_phi = table.mean_phi if isinstance(table, MetricTable) else sum(r.phi for r in records) / len(records)
    by_rank = sorted(records, key=lambda r: (r.phi_rank, r.bus))
    group_a = [r for r in by_rank[:policy.top_k_phi] if r.n_elements >= policy.min_elements]
    pool = [r for r in records if not policy.phi_above_mean or r.phi > mean_phi]
    pool.sort(key=lambda r: (-r.n_elements, -r.n_branches, -r.phi, r.bus))
    group_b = pool[:policy.top_k_elements]

    def keep(r: MetricRecord) -> bool:
        return r.xi <= policy.max_xi and not (policy.require_zeta_empty and r.zeta_flags)

    out: list[int] = []
    for r in group_a + group_b:
        if keep(r) and r.bus not in out:
            out.append(r.bus)
    return out


def _fmt(v: float) -> str:
    return format(v, ".6f")


def table_to_csv(table: Iterable[MetricRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in table:
        w.writerow([r.bus, _fmt(r.phi), r.phi_rank, r.n_branches, r.xi, r.n_elements, ";".join(r.zeta_flags),
                    "" if r.cost_decrease_pct is None else _fmt(r.cost_decrease_pct)])
    return buf.getvalue()


def table_from_csv(text: str) -> MetricTable:
    rows = list(csv.DictReader(io.StringIO(text)))
    missing = set(CSV_COLUMNS[:7]) - set(rows[0] if rows else CSV_COLUMNS)
    if missing:
        raise ValueError(f"metric CSV lacks columns: {sorted(missing)}")
    recs = []
    for row in rows:
        dec = row.get("cost_decrease_pct", "")
        recs.append(MetricRecord(bus=int(row["bus"]), phi=float(row["phi"]), phi_rank=int(row["phi_rank"]),
                                 xi=int(row["xi"]), zeta_flags=tuple(f for f in row["zeta"].split(";") if f),
                                 n_branches=int(row["n_branches"]), n_elements=int(row["n_elements"]),
                                 cost_decrease_pct=float(dec) if dec not in ("", None) else None))
    return MetricTable(recs)


def table_to_json(table: MetricTable) -> str:
    data = {"schema": "topocand.metrics", "version": 1, "mean_phi": table.mean_phi,
            "records": [dict(asdict(r), zeta_flags=list(r.zeta_flags)) for r in table]}
    return json.dumps(data, indent=1)
