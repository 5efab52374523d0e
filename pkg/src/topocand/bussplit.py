"""Busbar splitting: expand one bus into two sections with switchable elements.

Every element attached to the chosen bus ``i`` moves to its own auxiliary
bus, which is tied to ``i`` and to a new twin bus ``i'`` by one switch each.
A coupler switch joins ``i`` and ``i'``. Closed switches equalize angle and
voltage deviation of their end buses through big-M rows and carry lossless
power; open switches carry nothing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .grid import PQ, Bus, Grid, GridValidationError, connected_components, validate_grid
from .lpac import LpacModel, SwitchEdge, build_lpac_model
from .mip import EQ, GE, LE, MilpProblem, MilpSolution

ANGLE_BIG_M = 2 * math.pi
VMAG_BIG_M = 1.0
BOUND_FACTOR = 1.5

ON_I, ON_TWIN, DISCONNECTED = "on_i", "on_twin", "disconnected"
CLOSED, OPEN = "closed", "open"


class SplitError(ValueError):
    """The requested bus cannot be split."""


@dataclass(frozen=True)
class ElementRef:
    kind: str  # branch, generator, load, shunt
    id: int

    def __str__(self) -> str:
        return f"{self.kind} {self.id}"


@dataclass(frozen=True)
class SwitchPair:
    element: ElementRef
    aux_bus: int
    to_i: str
    to_i_twin: str
    p_bounds: tuple[float, float]
    q_bounds: tuple[float, float]


@dataclass(frozen=True)
class SplitGrid:
    base: Grid
    target_bus: int
    twin_bus: int
    aux_buses: tuple[int, ...]
    switches: tuple[SwitchPair, ...]
    coupler: SwitchEdge
    expanded: Grid

    @property
    def n_elements(self) -> int:
        return len(self.switches)

    def switch_edges(self) -> list[SwitchEdge]:
        out = []
        for sp_ in self.switches:
            pmax, qmax = sp_.p_bounds[1], sp_.q_bounds[1]
            out.append(SwitchEdge(sp_.to_i, sp_.aux_bus, self.target_bus, pmax, qmax))
            out.append(SwitchEdge(sp_.to_i_twin, sp_.aux_bus, self.twin_bus, pmax, qmax))
        out.append(self.coupler)
        return out


@dataclass(frozen=True)
class TopologyAssignment:
    bus: int
    elements: tuple[tuple[ElementRef, str], ...]
    coupler: str
    islanded: tuple[int, ...] = ()

    @property
    def is_null(self) -> bool:
        return self.coupler == CLOSED and all(s == ON_I for _, s in self.elements)

    def to_dict(self) -> dict:
        return {
            "schema": "topocand.topology",
            "version": 1,
            "bus": self.bus,
            "coupler": self.coupler,
            "elements": [{"kind": e.kind, "id": e.id, "state": s} for e, s in self.elements],
            "islanded_buses": list(self.islanded),
        }

    def to_json(self, indent: int | None = 1) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, data: dict) -> "TopologyAssignment":
        if data.get("schema") != "topocand.topology":
            raise ValueError("not a topology document")
        elements = tuple((ElementRef(d["kind"], int(d["id"])), d["state"]) for d in data["elements"])
        return cls(int(data["bus"]), elements, data["coupler"], tuple(data.get("islanded_buses", ())))


def _system_cap(grid: Grid) -> tuple[float, float]:
    p = sum(max(abs(g.pmin), abs(g.pmax)) for g in grid.generators if g.in_service)
    p += sum(abs(ld.pd) for ld in grid.loads if ld.in_service)
    q = sum(max(abs(g.qmin), abs(g.qmax)) for g in grid.generators if g.in_service)
    q += sum(abs(ld.qd) for ld in grid.loads if ld.in_service)
    return p, q


def _element_bounds(grid: Grid, ref: ElementRef, bus: Bus) -> tuple[float, float]:
    """Non-restrictive |P|, |Q| limits for the switches of one element."""
    if ref.kind == "branch":
        br = next(b for b in grid.branches if b.id == ref.id)
        if br.rate_a > 0:
            return BOUND_FACTOR * br.rate_a, BOUND_FACTOR * br.rate_a
        p, q = _system_cap(grid)
        return BOUND_FACTOR * p, BOUND_FACTOR * q
    if ref.kind == "generator":
        g = next(x for x in grid.generators if x.id == ref.id)
        return BOUND_FACTOR * max(abs(g.pmin), abs(g.pmax)), BOUND_FACTOR * max(abs(g.qmin), abs(g.qmax))
    if ref.kind == "load":
        ld = next(x for x in grid.loads if x.id == ref.id)
        return BOUND_FACTOR * abs(ld.pd), BOUND_FACTOR * abs(ld.qd)
    sh = next(x for x in grid.shunts if x.id == ref.id)
    v2 = 1.0 + 2.0 * max(abs(bus.vmax - 1.0), abs(bus.vmin - 1.0))
    return BOUND_FACTOR * abs(sh.gs) * v2, BOUND_FACTOR * abs(sh.bs) * v2


def incident_elements(grid: Grid, bus: int) -> list[ElementRef]:
    refs = [ElementRef("branch", br.id) for br in sorted(grid.branches_at(bus), key=lambda b: b.id)
            if br.from_bus != br.to_bus]
    refs += [ElementRef("generator", g.id) for g in sorted(grid.generators_at(bus), key=lambda g: g.id)]
    refs += [ElementRef("load", x.id) for x in sorted(grid.loads_at(bus), key=lambda x: x.id)]
    refs += [ElementRef("shunt", x.id) for x in sorted(grid.shunts_at(bus), key=lambda x: x.id)]
    return refs


def expand_busbar(grid: Grid, bus: int) -> SplitGrid:
    """Rewire every element of ``bus`` to its own auxiliary bus and add the twin section."""
    if bus not in grid.bus_index:
        raise SplitError(f"unknown bus id {bus}")
    refs = incident_elements(grid, bus)
    if not refs:
        raise SplitError(f"bus {bus} has no connected elements")
    orig = grid.bus_by_id[bus]
    next_id = max(grid.bus_ids) + 1
    twin = next_id
    aux = tuple(range(next_id + 1, next_id + 1 + len(refs)))
    new_buses = [replace(orig, id=twin, role=PQ)]
    new_buses += [replace(orig, id=m, role=PQ) for m in aux]
    where = {ref: m for ref, m in zip(refs, aux)}

    branches = []
    for br in grid.branches:
        ref = ElementRef("branch", br.id)
        if ref in where:
            m = where[ref]
            br = replace(br, from_bus=m if br.from_bus == bus else br.from_bus,
                         to_bus=m if br.to_bus == bus else br.to_bus)
        branches.append(br)

    def moved(items, kind):
        return tuple(replace(x, bus=where[ElementRef(kind, x.id)]) if ElementRef(kind, x.id) in where else x
                     for x in items)

    expanded = replace(grid, buses=grid.buses + tuple(new_buses), branches=tuple(branches),
                       generators=moved(grid.generators, "generator"), loads=moved(grid.loads, "load"),
                       shunts=moved(grid.shunts, "shunt"))
    switches = []
    psum = qsum = 0.0
    for k, ref in enumerate(refs):
        pb, qb = _element_bounds(grid, ref, orig)
        psum += pb
        qsum += qb
        switches.append(SwitchPair(ref, aux[k], f"u{k}", f"k{k}", (-pb, pb), (-qb, qb)))
    coupler = SwitchEdge("zil", bus, twin, psum, qsum)
    return SplitGrid(grid, bus, twin, aux, tuple(switches), coupler, expanded)


@dataclass
class BusMilp:
    """MILP of a split bus with handles to its binaries."""

    problem: MilpProblem
    model: LpacModel
    z: dict[str, int]
    split: SplitGrid

    def null_assignment(self) -> np.ndarray:
        x = np.zeros(self.problem.base.n_vars)
        for sp_ in self.split.switches:
            x[self.z[sp_.to_i]] = 1.0
        x[self.z["zil"]] = 1.0
        return x


def build_bus_milp(split: SplitGrid, segments: int = 10, theta_max: float = 0.35, thermal_sides: int = 8,
                   force_null: bool = False, exclusive_equality: bool = False,
                   strict_coupler: bool = False) -> BusMilp:
    """LPAC-OPF of the expanded network plus switching logic.

    ``force_null`` fixes the original topology; ``exclusive_equality`` forbids
    disconnecting elements; ``strict_coupler`` additionally forces every
    element onto the original section while the coupler is closed.
    """
    model = build_lpac_model(split.expanded, segments=segments, theta_max=theta_max, thermal_sides=thermal_sides,
                             switches=split.switch_edges())
    bld = model.builder
    z: dict[str, int] = {}
    for edge in split.switch_edges():
        j = bld.add_var(f"z_{edge.name}", binary=True)
        z[edge.name] = j
        a, b = edge.from_bus, edge.to_bus
        ta, tb = model.theta[a], model.theta[b]
        va, vb = model.phi[a], model.phi[b]
        bld.add_row({ta: 1.0, tb: -1.0, j: ANGLE_BIG_M}, LE, ANGLE_BIG_M, f"ang_up_{edge.name}")
        bld.add_row({ta: 1.0, tb: -1.0, j: -ANGLE_BIG_M}, GE, -ANGLE_BIG_M, f"ang_lo_{edge.name}")
        bld.add_row({va: 1.0, vb: -1.0, j: VMAG_BIG_M}, LE, VMAG_BIG_M, f"vm_up_{edge.name}")
        bld.add_row({va: 1.0, vb: -1.0, j: -VMAG_BIG_M}, GE, -VMAG_BIG_M, f"vm_lo_{edge.name}")
        jp, jq = model.p_sw[edge.name], model.q_sw[edge.name]
        bld.add_row({jp: 1.0, j: -edge.p_max}, LE, 0.0, f"p_up_{edge.name}")
        bld.add_row({jp: 1.0, j: edge.p_max}, GE, 0.0, f"p_lo_{edge.name}")
        bld.add_row({jq: 1.0, j: -edge.q_max}, LE, 0.0, f"q_up_{edge.name}")
        bld.add_row({jq: 1.0, j: edge.q_max}, GE, 0.0, f"q_lo_{edge.name}")
    zil = z["zil"]
    for sp_ in split.switches:
        u, k = z[sp_.to_i], z[sp_.to_i_twin]
        bld.add_row({u: 1.0, k: 1.0}, EQ if exclusive_equality else LE, 1.0, f"excl_{sp_.to_i}")
        bld.add_row({k: 1.0, zil: 1.0}, LE, 1.0, f"coupler_{sp_.to_i_twin}")
        if strict_coupler:
            bld.add_row({u: 1.0, zil: -1.0}, GE, 0.0, f"strict_{sp_.to_i}")
    if split.target_bus == split.base.slack_bus:
        branch_u = {z[sp_.to_i]: 1.0 for sp_ in split.switches if sp_.element.kind == "branch"}
        if branch_u:
            bld.add_row(branch_u, GE, 1.0, "slack_connected")
    if force_null:
        for sp_ in split.switches:
            bld.set_bounds(z[sp_.to_i], 1.0, 1.0)
            bld.set_bounds(z[sp_.to_i_twin], 0.0, 0.0)
        bld.set_bounds(zil, 1.0, 1.0)
    return BusMilp(bld.build_milp(), model, z, split)


def assignment_from_solution(milp: BusMilp, x: np.ndarray) -> TopologyAssignment:
    split = milp.split
    elements = []
    for sp_ in split.switches:
        u = round(float(x[milp.z[sp_.to_i]]))
        k = round(float(x[milp.z[sp_.to_i_twin]]))
        if u + k > 1:
            raise AssertionError(f"{sp_.element} is attached to both sections")
        elements.append((sp_.element, ON_I if u else ON_TWIN if k else DISCONNECTED))
    closed = round(float(x[milp.z["zil"]])) == 1
    if closed and any(s == ON_TWIN for _, s in elements):
        raise AssertionError("coupler closed while an element sits on the twin section")
    return TopologyAssignment(split.target_bus, tuple(elements), CLOSED if closed else OPEN)


def apply_assignment(split: SplitGrid, assignment: TopologyAssignment) -> Grid:
    """Grid realizing ``assignment``; see :func:`extract_topology`."""
    grid = split.base
    bus = split.target_bus
    state = dict(assignment.elements)
    merged = assignment.coupler == CLOSED
    use_twin = not merged and any(s == ON_TWIN for s in state.values())
    side = {ON_I: bus, ON_TWIN: bus if merged else split.twin_bus}
    aux_of = {sp_.element: sp_.aux_bus for sp_ in split.switches}
    extra: list[Bus] = []
    orig = grid.bus_by_id[bus]
    if use_twin:
        extra.append(replace(orig, id=split.twin_bus, role=PQ))

    branches = []
    for br in grid.branches:
        ref = ElementRef("branch", br.id)
        if ref in state:
            s = state[ref]
            if s == DISCONNECTED:
                # keep the line energized from its far end through a dangling bus
                end = aux_of[ref]
                extra.append(replace(orig, id=end, role=PQ))
            else:
                end = side[s]
            br = replace(br, from_bus=end if br.from_bus == bus else br.from_bus,
                         to_bus=end if br.to_bus == bus else br.to_bus)
        branches.append(br)

    def rewire(items, kind):
        out = []
        for x in items:
            ref = ElementRef(kind, x.id)
            if ref in state:
                s = state[ref]
                x = replace(x, in_service=False) if s == DISCONNECTED else replace(x, bus=side[s])
            out.append(x)
        return tuple(out)

    new = replace(grid, buses=grid.buses + tuple(extra), branches=tuple(branches),
                  generators=rewire(grid.generators, "generator"), loads=rewire(grid.loads, "load"),
                  shunts=rewire(grid.shunts, "shunt"))
    report = validate_grid(new)
    if not report.ok:
        raise GridValidationError(report)
    return new


def islanded_buses(grid: Grid) -> tuple[int, ...]:
    """Buses not connected to the slack bus through in-service branches."""
    idx = grid.bus_index
    edges = [(idx[br.from_bus], idx[br.to_bus]) for br in grid.branches if br.in_service]
    comp = connected_components(len(grid.buses), edges)
    root = comp[idx[grid.slack_bus]]
    return tuple(sorted(b.id for b, c in zip(grid.buses, comp) if c != root))


def extract_topology(split: SplitGrid, sol: MilpSolution, milp: BusMilp) -> tuple[Grid, TopologyAssignment]:
    """Collapse closed switches into the chosen sections and drop open ones."""
    if sol.x is None:
        raise ValueError(f"no incumbent to extract (status {sol.status})")
    assignment = assignment_from_solution(milp, sol.x)
    grid = apply_assignment(split, assignment)
    return grid, replace(assignment, islanded=islanded_buses(grid))


def neighbor_sections(split: SplitGrid, assignment: TopologyAssignment) -> dict[int, str]:
    """Section (on_i, on_twin, disconnected) each neighboring bus is attached through."""
    state = dict(assignment.elements)
    out: dict[int, str] = {}
    bus = split.target_bus
    for br in split.base.branches_at(bus):
        s = state.get(ElementRef("branch", br.id))
        if s is None:
            continue
        if s == ON_TWIN and assignment.coupler == CLOSED:
            s = ON_I
        other = br.to_bus if br.from_bus == bus else br.from_bus
        prev = out.get(other)
        out[other] = s if prev is None or prev == s else "mixed"
    return out


__all__ = ["ElementRef", "SwitchPair", "SplitGrid", "TopologyAssignment", "BusMilp", "SplitError",
           "expand_busbar", "build_bus_milp", "extract_topology", "apply_assignment", "assignment_from_solution",
           "incident_elements", "islanded_buses", "neighbor_sections", "ON_I", "ON_TWIN", "DISCONNECTED", "OPEN", "CLOSED"]
