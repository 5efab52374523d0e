"""Cold-start LPAC approximation of the AC optimal power flow.

Voltage magnitudes are modelled as ``1 + phi`` with ``phi`` a small
deviation, ``cs`` stands in for ``cos(theta_i - theta_j)`` and is bounded
above by tangent cuts of the cosine. Products of voltages are linearized to
first order, so every branch flow is an affine expression in
``(theta, phi, cs)`` and is substituted straight into the nodal balances.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import Branch, Grid, GridValidationError, validate_grid
from .mip import EQ, GE, LE, LpBuilder, LpProblem, LpSolution, solve_lp

logger = logging.getLogger(__name__)

BINDING_TOL = 1e-5
SHED_COST = 1e6  # currency/h per p.u. of slack injection in diagnostic mode
ANGLE_LIMIT = math.pi


class LpacModelError(ValueError):
    """The network cannot be expressed as an LPAC model."""


class OpfInfeasible(RuntimeError):
    """The LPAC-OPF has no feasible point; carries the load-shed diagnostic."""

    def __init__(self, shed: dict[int, tuple[float, float]], diagnostic: "OpfSolution | None"):
        self.shed = shed
        self.diagnostic = diagnostic
        buses = ", ".join(str(b) for b in sorted(shed)) or "none identified"
        super().__init__(f"LPAC-OPF infeasible; slack injections needed at buses: {buses}")


@dataclass(frozen=True)
class FlowCoeffs:
    """One direction of an LPAC branch flow.

    value = const + phi_from*phi_i + phi_to*phi_j + cs*cs_b + theta*(theta_i - theta_j),
    where i is the sending end of this direction.
    """

    const: float
    phi_from: float
    phi_to: float
    cs: float
    theta: float

    def evaluate(self, theta_i: float, theta_j: float, phi_i: float, phi_j: float, cs: float) -> float:
        return (self.const + self.phi_from * phi_i + self.phi_to * phi_j + self.cs * cs
                + self.theta * (theta_i - theta_j))


def flow_coefficients(br: Branch) -> tuple[FlowCoeffs, FlowCoeffs, FlowCoeffs, FlowCoeffs]:
    """(p_ij, q_ij, p_ji, q_ji) coefficients; tap and shift sit on the from side."""
    if br.x == 0 and br.r == 0:
        raise LpacModelError(f"branch {br.id} has zero impedance")
    y = br.series_admittance
    g, b = y.real, y.imag
    t = br.tap if br.tap else 1.0
    tr, ti = t * math.cos(br.shift), t * math.sin(br.shift)
    t2 = t * t
    hc = br.b_charge / 2.0
    # from side
    ff = g / t2
    bf = (b + hc) / t2
    cc = (-g * tr + b * ti) / t2
    ss = (-b * tr - g * ti) / t2
    p_ij = FlowCoeffs(ff, 2 * ff + cc, cc, cc, ss)
    q_ij = FlowCoeffs(-bf, -2 * bf - ss, -ss, -ss, cc)
    # to side
    cc2 = (-g * tr - b * ti) / t2
    ss2 = (-b * tr + g * ti) / t2
    p_ji = FlowCoeffs(g, 2 * g + cc2, cc2, cc2, ss2)
    q_ji = FlowCoeffs(-(b + hc), -2 * (b + hc) - ss2, -ss2, -ss2, cc2)
    return p_ij, q_ij, p_ji, q_ji


def lpac_flow(br: Branch, theta_i: float, theta_j: float, phi_i: float, phi_j: float,
              cs: float) -> tuple[float, float, float, float]:
    """LPAC flows (p_ij, q_ij, p_ji, q_ji) in p.u. for given bus states."""
    p_ij, q_ij, p_ji, q_ji = flow_coefficients(br)
    return (p_ij.evaluate(theta_i, theta_j, phi_i, phi_j, cs),
            q_ij.evaluate(theta_i, theta_j, phi_i, phi_j, cs),
            p_ji.evaluate(theta_j, theta_i, phi_j, phi_i, cs),
            q_ji.evaluate(theta_j, theta_i, phi_j, phi_i, cs))


def cos_cut_points(br: Branch, segments: int, theta_max: float) -> np.ndarray:
    """Tangent points of the cosine cuts for one branch."""
    span = min(theta_max, branch_angle_bound(br))
    return np.linspace(-span, span, segments)


def branch_angle_bound(br: Branch) -> float:
    """Largest admissible |theta_i - theta_j|, clipped to pi/2."""
    return min(max(abs(br.ang_min), abs(br.ang_max)), math.pi / 2)


def cost_segments(gen, base_mva: float, segments: int) -> tuple[float, float, list[tuple[float, float]]]:
    """Linearize a generator cost over [pmin, pmax] (p.u.).

    Returns (constant, linear coefficient, cuts) where the cost equals
    constant + linear*p if ``cuts`` is empty and otherwise the epigraph
    max over cuts (intercept, slope).
    """
    cost = gen.cost
    lo, hi = gen.pmin, gen.pmax
    if cost.model == 2:
        coeffs = list(cost.coeffs)
        while coeffs and coeffs[0] == 0.0 and len(coeffs) > 1:
            coeffs.pop(0)
        if len(coeffs) <= 2:
            c1 = coeffs[0] if len(coeffs) == 2 else 0.0
            c0 = coeffs[-1] if coeffs else 0.0
            return c0, c1 * base_mva, []
        if hi - lo <= 1e-12:
            return cost.evaluate(lo * base_mva), 0.0, []
        pts = np.linspace(lo, hi, segments + 1)
    else:
        pts = np.asarray(cost.coeffs[0::2], dtype=float) / base_mva
        if pts.size < 2:
            return cost.coeffs[1] if len(cost.coeffs) > 1 else 0.0, 0.0, []
    vals = np.array([cost.evaluate(p * base_mva) for p in pts])
    cuts = []
    for k in range(len(pts) - 1):
        slope = (vals[k + 1] - vals[k]) / (pts[k + 1] - pts[k])
        cuts.append((vals[k] - slope * pts[k], slope))
    return 0.0, 0.0, cuts


@dataclass(frozen=True)
class SwitchEdge:
    """Lossless controllable connection carrying free (p, q) between two buses."""

    name: str
    from_bus: int
    to_bus: int
    p_max: float
    q_max: float


@dataclass
class LpacModel:
    """Builder state plus the variable and row maps of an LPAC model."""

    grid: Grid
    builder: LpBuilder
    theta: dict[int, int] = field(default_factory=dict)
    phi: dict[int, int] = field(default_factory=dict)
    cs: dict[int, int] = field(default_factory=dict)
    pg: dict[int, int] = field(default_factory=dict)
    qg: dict[int, int] = field(default_factory=dict)
    gen_cost: dict[int, int] = field(default_factory=dict)
    p_sw: dict[str, int] = field(default_factory=dict)
    q_sw: dict[str, int] = field(default_factory=dict)
    shed: dict[int, tuple[int, int, int, int]] = field(default_factory=dict)
    p_balance: dict[int, int] = field(default_factory=dict)
    q_balance: dict[int, int] = field(default_factory=dict)
    row_tags: dict[int, tuple[str, str]] = field(default_factory=dict)
    flows: dict[int, tuple[FlowCoeffs, FlowCoeffs, FlowCoeffs, FlowCoeffs]] = field(default_factory=dict)

    def flow_terms(self, br: Branch, coeffs: FlowCoeffs, reverse: bool) -> tuple[dict[int, float], float]:
        i, j = (br.to_bus, br.from_bus) if reverse else (br.from_bus, br.to_bus)
        terms: dict[int, float] = {}
        for var, v in ((self.phi[i], coeffs.phi_from), (self.phi[j], coeffs.phi_to), (self.cs[br.id], coeffs.cs),
                       (self.theta[i], coeffs.theta), (self.theta[j], -coeffs.theta)):
            terms[var] = terms.get(var, 0.0) + v
        return terms, coeffs.const

    def index(self) -> dict[str, dict]:
        return {"theta": dict(self.theta), "phi": dict(self.phi), "cs": dict(self.cs), "pg": dict(self.pg),
                "qg": dict(self.qg), "gen_cost": dict(self.gen_cost), "p_sw": dict(self.p_sw),
                "q_sw": dict(self.q_sw), "p_balance": dict(self.p_balance), "q_balance": dict(self.q_balance)}


def _add_terms(acc: dict[int, float], terms: dict[int, float], scale: float) -> None:
    for k, v in terms.items():
        acc[k] = acc.get(k, 0.0) + scale * v


def build_lpac_model(grid: Grid, segments: int = 10, theta_max: float = 0.35, thermal_sides: int = 8,
                     switches: Sequence[SwitchEdge] = (), load_shed: bool = False) -> LpacModel:
    """Assemble the LPAC-OPF into an open :class:`LpBuilder`.

    ``switches`` adds lossless (p, q) connections used by busbar splitting;
    callers may append further rows before building. With ``load_shed`` each
    bus receives penalized slack injections.
    """
    if segments < 2:
        raise ValueError("segments must be at least 2")
    if not 0 < theta_max <= math.pi / 2:
        raise ValueError("theta_max must lie in (0, pi/2]")
    if thermal_sides < 4 or thermal_sides % 4:
        raise ValueError("thermal_sides must be a positive multiple of 4")
    report = validate_grid(grid)
    if not report.ok:
        raise GridValidationError(report)
    bld = LpBuilder()
    model = LpacModel(grid=grid, builder=bld)
    base = grid.base_mva
    slack = grid.slack_bus
    for bus in grid.buses:
        lim = 0.0 if bus.id == slack else ANGLE_LIMIT
        model.theta[bus.id] = bld.add_var(f"theta_{bus.id}", -lim, lim)
        model.phi[bus.id] = bld.add_var(f"phi_{bus.id}", bus.vmin - 1.0, bus.vmax - 1.0)
    p_bal: dict[int, dict[int, float]] = {b.id: {} for b in grid.buses}
    q_bal: dict[int, dict[int, float]] = {b.id: {} for b in grid.buses}
    p_rhs = {b.id: 0.0 for b in grid.buses}
    q_rhs = {b.id: 0.0 for b in grid.buses}

    for g in grid.generators:
        if not g.in_service:
            continue
        jp = bld.add_var(f"pg_{g.id}", g.pmin, g.pmax)
        jq = bld.add_var(f"qg_{g.id}", g.qmin, g.qmax)
        model.pg[g.id], model.qg[g.id] = jp, jq
        p_bal[g.bus][jp] = p_bal[g.bus].get(jp, 0.0) + 1.0
        q_bal[g.bus][jq] = q_bal[g.bus].get(jq, 0.0) + 1.0
        c0, c1, cuts = cost_segments(g, base, segments)
        bld.c0 += c0
        if cuts:
            jc = bld.add_var(f"cost_{g.id}", -np.inf, np.inf, cost=1.0)
            model.gen_cost[g.id] = jc
            for k, (icpt, slope) in enumerate(cuts):
                row = bld.add_row({jc: 1.0, jp: -slope}, GE, icpt, f"gcost_{g.id}_{k}")
                model.row_tags[row] = (f"gen {g.id}", "cost-segment")
        elif c1:
            bld.add_cost(jp, c1)

    for ld in grid.loads:
        if ld.in_service:
            p_rhs[ld.bus] += ld.pd
            q_rhs[ld.bus] += ld.qd
    for sh in grid.shunts:
        if sh.in_service:
            # gs*V^2 consumed and bs*V^2 injected, with V^2 ~ 1 + 2*phi
            jv = model.phi[sh.bus]
            p_bal[sh.bus][jv] = p_bal[sh.bus].get(jv, 0.0) - 2.0 * sh.gs
            p_rhs[sh.bus] += sh.gs
            q_bal[sh.bus][jv] = q_bal[sh.bus].get(jv, 0.0) + 2.0 * sh.bs
            q_rhs[sh.bus] -= sh.bs

    sides = np.pi / thermal_sides + 2 * np.pi * np.arange(thermal_sides) / thermal_sides
    shrink = math.cos(math.pi / thermal_sides)
    for br in grid.branches:
        if not br.in_service:
            continue
        coeffs = flow_coefficients(br)
        model.flows[br.id] = coeffs
        abound = branch_angle_bound(br)
        jc = bld.add_var(f"cs_{br.id}", math.cos(abound), 1.0)
        model.cs[br.id] = jc
        ti, tj = model.theta[br.from_bus], model.theta[br.to_bus]
        for k, a in enumerate(cos_cut_points(br, segments, theta_max)):
            # cs <= cos(a) - sin(a)*(d - a)
            row = bld.add_row({jc: 1.0, ti: math.sin(a), tj: -math.sin(a)}, LE, math.cos(a) + a * math.sin(a),
                              f"cos_{br.id}_{k}")
            model.row_tags[row] = (f"branch {br.id}", "cos-cut")
        if br.ang_min > -2 * math.pi:
            row = bld.add_row({ti: 1.0, tj: -1.0}, GE, br.ang_min, f"angmin_{br.id}")
            model.row_tags[row] = (f"branch {br.id}", "angle-diff")
        if br.ang_max < 2 * math.pi:
            row = bld.add_row({ti: 1.0, tj: -1.0}, LE, br.ang_max, f"angmax_{br.id}")
            model.row_tags[row] = (f"branch {br.id}", "angle-diff")
        p_ij, q_ij, p_ji, q_ji = coeffs
        ends = ((br.from_bus, p_ij, q_ij, False, "from"), (br.to_bus, p_ji, q_ji, True, "to"))
        for bus, pc, qc, rev, side in ends:
            pt, pk = model.flow_terms(br, pc, rev)
            qt, qk = model.flow_terms(br, qc, rev)
            _add_terms(p_bal[bus], pt, -1.0)
            _add_terms(q_bal[bus], qt, -1.0)
            p_rhs[bus] += pk
            q_rhs[bus] += qk
            if br.rate_a > 0:
                for k, a in enumerate(sides):
                    terms: dict[int, float] = {}
                    _add_terms(terms, pt, math.cos(a))
                    _add_terms(terms, qt, math.sin(a))
                    rhs = br.rate_a * shrink - math.cos(a) * pk - math.sin(a) * qk
                    row = bld.add_row(terms, LE, rhs, f"rate_{br.id}_{side}_{k}")
                    model.row_tags[row] = (f"branch {br.id}", f"thermal-{side}")

    for sw in switches:
        jp = bld.add_var(f"psw_{sw.name}", -sw.p_max, sw.p_max)
        jq = bld.add_var(f"qsw_{sw.name}", -sw.q_max, sw.q_max)
        model.p_sw[sw.name], model.q_sw[sw.name] = jp, jq
        _add_terms(p_bal[sw.from_bus], {jp: 1.0}, -1.0)
        _add_terms(p_bal[sw.to_bus], {jp: 1.0}, 1.0)
        _add_terms(q_bal[sw.from_bus], {jq: 1.0}, -1.0)
        _add_terms(q_bal[sw.to_bus], {jq: 1.0}, 1.0)

    if load_shed:
        for bus in grid.buses:
            v = tuple(bld.add_var(f"{kind}_{bus.id}", 0.0, np.inf, cost=SHED_COST)
                      for kind in ("pshed", "pspill", "qshed", "qspill"))
            model.shed[bus.id] = v
            _add_terms(p_bal[bus.id], {v[0]: 1.0, v[1]: -1.0}, 1.0)
            _add_terms(q_bal[bus.id], {v[2]: 1.0, v[3]: -1.0}, 1.0)

    for bus in grid.buses:
        model.p_balance[bus.id] = bld.add_row(p_bal[bus.id], EQ, p_rhs[bus.id], f"pbal_{bus.id}")
        model.q_balance[bus.id] = bld.add_row(q_bal[bus.id], EQ, q_rhs[bus.id], f"qbal_{bus.id}")
    return model


def build_lpac(grid: Grid, segments: int = 10, theta_max: float = 0.35,
               thermal_sides: int = 8) -> tuple[LpProblem, dict[str, dict]]:
    """LPAC-OPF as an :class:`LpProblem` plus a map from element ids to columns/rows."""
    model = build_lpac_model(grid, segments=segments, theta_max=theta_max, thermal_sides=thermal_sides)
    return model.builder.build(), model.index()


@dataclass
class OpfSolution:
    objective: float
    dispatch: dict[int, tuple[float, float]]
    angles: dict[int, float]
    vmags: dict[int, float]
    flows: dict[int, tuple[float, float, float, float]]
    lmp: dict[int, float]
    q_lmp: dict[int, float]
    binding: dict[str, tuple[str, ...]]
    cs: dict[int, float] = field(default_factory=dict)
    shed: dict[int, tuple[float, float]] = field(default_factory=dict)
    base_mva: float = 100.0

    def to_dict(self) -> dict:
        def keyed(d):
            return {str(k): v for k, v in sorted(d.items())}

        return {
            "schema": "topocand.opf",
            "version": 1,
            "base_mva": self.base_mva,
            "objective": self.objective,
            "dispatch": keyed({k: list(v) for k, v in self.dispatch.items()}),
            "angles": keyed(self.angles),
            "vmags": keyed(self.vmags),
            "flows": keyed({k: list(v) for k, v in self.flows.items()}),
            "lmp": keyed(self.lmp),
            "q_lmp": keyed(self.q_lmp),
            "binding": {k: list(v) for k, v in sorted(self.binding.items())},
            "shed": keyed({k: list(v) for k, v in self.shed.items()}),
        }

    def to_json(self, indent: int | None = 1) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=False)

    @classmethod
    def from_dict(cls, data: dict) -> "OpfSolution":
        if data.get("schema") != "topocand.opf":
            raise ValueError("not an OPF solution document")

        def ints(d, conv=float):
            return {int(k): conv(v) for k, v in d.items()}

        return cls(objective=data["objective"], dispatch=ints(data["dispatch"], tuple), angles=ints(data["angles"]),
                   vmags=ints(data["vmags"]), flows=ints(data["flows"], tuple), lmp=ints(data["lmp"]),
                   q_lmp=ints(data["q_lmp"]), binding={k: tuple(v) for k, v in data["binding"].items()},
                   shed=ints(data.get("shed", {}), tuple), base_mva=data.get("base_mva", 100.0))


def _binding_tags(model: LpacModel, prob: LpProblem, sol: LpSolution) -> dict[str, tuple[str, ...]]:
    ax = prob.A @ sol.x
    tags: dict[str, set[str]] = {}
    for row, (element, kind) in model.row_tags.items():
        if kind == "cost-segment":
            continue
        s = prob.sense[row]
        slack = prob.rhs[row] - ax[row] if s == LE else ax[row] - prob.rhs[row]
        if slack <= BINDING_TOL:
            if kind == "angle-diff":
                kind = "angle-diff-max" if s == LE else "angle-diff-min"
            tags.setdefault(element, set()).add(kind)
    x = sol.x
    for bus, j in model.phi.items():
        if prob.ub[j] - x[j] <= BINDING_TOL:
            tags.setdefault(f"bus {bus}", set()).add("vmag-upper")
        if x[j] - prob.lb[j] <= BINDING_TOL:
            tags.setdefault(f"bus {bus}", set()).add("vmag-lower")
    for gid, j in model.pg.items():
        if prob.ub[j] - x[j] <= BINDING_TOL:
            tags.setdefault(f"gen {gid}", set()).add("pmax")
        if x[j] - prob.lb[j] <= BINDING_TOL:
            tags.setdefault(f"gen {gid}", set()).add("pmin")
    for gid, j in model.qg.items():
        if prob.ub[j] - x[j] <= BINDING_TOL:
            tags.setdefault(f"gen {gid}", set()).add("qmax")
        if x[j] - prob.lb[j] <= BINDING_TOL:
            tags.setdefault(f"gen {gid}", set()).add("qmin")
    return {k: tuple(sorted(v)) for k, v in sorted(tags.items())}


def extract_opf(model: LpacModel, prob: LpProblem, sol: LpSolution) -> OpfSolution:
    """Read dispatch, states, flows and prices out of an optimal LP solution."""
    grid = model.grid
    x = sol.x
    base = grid.base_mva
    angles = {b: float(x[j]) for b, j in model.theta.items()}
    phis = {b: float(x[j]) for b, j in model.phi.items()}
    cs = {k: float(x[j]) for k, j in model.cs.items()}
    flows = {}
    for br in grid.branches:
        if br.id in model.flows:
            flows[br.id] = lpac_flow(br, angles[br.from_bus], angles[br.to_bus], phis[br.from_bus],
                                     phis[br.to_bus], cs[br.id])
    dispatch = {g: (float(x[model.pg[g]]), float(x[model.qg[g]])) for g in model.pg}
    lmp = {b: float(sol.duals[r]) / base for b, r in model.p_balance.items()}
    q_lmp = {b: float(sol.duals[r]) / base for b, r in model.q_balance.items()}
    shed = {}
    for b, (a, c, d, e) in model.shed.items():
        p, q = x[a] - x[c], x[d] - x[e]
        if abs(p) > 1e-7 or abs(q) > 1e-7:
            shed[b] = (float(p), float(q))
    return OpfSolution(objective=float(sol.objective), dispatch=dispatch, angles=angles,
                       vmags={b: 1.0 + v for b, v in phis.items()}, flows=flows, lmp=lmp, q_lmp=q_lmp,
                       binding=_binding_tags(model, prob, sol), cs=cs, shed=shed, base_mva=base)


def solve_lpac_opf(grid: Grid, segments: int = 10, theta_max: float = 0.35, thermal_sides: int = 8,
                   engine: str = "revised") -> OpfSolution:
    """Solve the LPAC-OPF; raises :class:`OpfInfeasible` with a shed diagnostic."""
    model = build_lpac_model(grid, segments=segments, theta_max=theta_max, thermal_sides=thermal_sides)
    prob = model.builder.build()
    sol = solve_lp(prob, engine=engine)
    if sol.optimal:
        return extract_opf(model, prob, sol)
    logger.warning("LPAC-OPF %s (%s); re-solving with slack injections", grid.name, sol.status)
    diag_model = build_lpac_model(grid, segments=segments, theta_max=theta_max, thermal_sides=thermal_sides,
                                  load_shed=True)
    diag_prob = diag_model.builder.build()
    diag = solve_lp(diag_prob, engine=engine)
    if not diag.optimal:
        raise OpfInfeasible({}, None)
    out = extract_opf(diag_model, diag_prob, diag)
    raise OpfInfeasible(out.shed, out)


def balance_residuals(grid: Grid, sol: OpfSolution) -> dict[int, tuple[float, float]]:
    """Nodal (p, q) mismatch of an OPF solution evaluated from its own flows."""
    p = {b.id: 0.0 for b in grid.buses}
    q = {b.id: 0.0 for b in grid.buses}
    for g in grid.generators:
        if g.in_service and g.id in sol.dispatch:
            p[g.bus] += sol.dispatch[g.id][0]
            q[g.bus] += sol.dispatch[g.id][1]
    for ld in grid.loads:
        if ld.in_service:
            p[ld.bus] -= ld.pd
            q[ld.bus] -= ld.qd
    for sh in grid.shunts:
        if sh.in_service:
            v2 = 1.0 + 2.0 * (sol.vmags[sh.bus] - 1.0)
            p[sh.bus] -= sh.gs * v2
            q[sh.bus] += sh.bs * v2
    for br in grid.branches:
        if br.id in sol.flows:
            pij, qij, pji, qji = sol.flows[br.id]
            p[br.from_bus] -= pij
            q[br.from_bus] -= qij
            p[br.to_bus] -= pji
            q[br.to_bus] -= qji
    for b, (ps, qs) in sol.shed.items():
        p[b] += ps
        q[b] += qs
    return {b: (p[b], q[b]) for b in p}


def unlimited_lossless(grid: Grid) -> Grid:
    """Copy with no thermal limits, no resistance, no charging and loose voltages."""
    from dataclasses import replace

    buses = tuple(replace(b, vmin=0.5, vmax=1.5) for b in grid.buses)
    branches = tuple(replace(br, rate_a=0.0, r=0.0, b_charge=0.0) for br in grid.branches)
    return replace(grid, buses=buses, branches=branches)
