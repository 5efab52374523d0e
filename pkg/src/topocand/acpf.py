"""Newton-Raphson AC power flow and the AC feasibility check of a dispatch."""

from __future__ import annotations

import cmath
import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Branch, Grid, connected_components
from .lpac import OpfSolution

logger = logging.getLogger(__name__)

PF_TOL = 1e-8
PF_MAX_ITER = 20
Q_LIMIT_ROUNDS = 10


def branch_primitives(br: Branch) -> tuple[complex, complex, complex, complex]:
    """(Yff, Yft, Ytf, Ytt) of a branch, tap and shift on the from side."""
    ys = 1.0 / complex(br.r, br.x)
    t = br.tap if br.tap else 1.0
    tap = t * cmath.exp(1j * br.shift)
    ytt = ys + 1j * br.b_charge / 2.0
    yff = ytt / (tap * tap.conjugate())
    return yff, -ys / tap.conjugate(), -ys / tap, ytt


def exact_branch_flow(br: Branch, vm_i: float, vm_j: float, va_i: float, va_j: float) -> tuple[complex, complex]:
    """Exact complex power (S_ij, S_ji) leaving each end, in p.u."""
    yff, yft, ytf, ytt = branch_primitives(br)
    vi = vm_i * cmath.exp(1j * va_i)
    vj = vm_j * cmath.exp(1j * va_j)
    s_ij = vi * (yff * vi + yft * vj).conjugate()
    s_ji = vj * (ytf * vi + ytt * vj).conjugate()
    return s_ij, s_ji


def assemble_ybus(grid: Grid) -> tuple[sp.csr_matrix, sp.csr_matrix, sp.csr_matrix, list[Branch]]:
    """Bus admittance matrix plus from/to branch matrices over in-service branches."""
    n = len(grid.buses)
    idx = grid.bus_index
    live = [br for br in grid.branches if br.in_service]
    nl = len(live)
    f = np.array([idx[br.from_bus] for br in live], dtype=int)
    t = np.array([idx[br.to_bus] for br in live], dtype=int)
    prim = np.array([branch_primitives(br) for br in live], dtype=complex).reshape(nl, 4)
    rows = np.arange(nl)
    Yf = sp.csr_matrix((np.concatenate([prim[:, 0], prim[:, 1]]), (np.concatenate([rows, rows]),
                        np.concatenate([f, t]))), shape=(nl, n))
    Yt = sp.csr_matrix((np.concatenate([prim[:, 2], prim[:, 3]]), (np.concatenate([rows, rows]),
                        np.concatenate([f, t]))), shape=(nl, n))
    ysh = np.zeros(n, dtype=complex)
    for sh in grid.shunts:
        if sh.in_service:
            ysh[idx[sh.bus]] += complex(sh.gs, sh.bs)
    Cf = sp.csr_matrix((np.ones(nl), (rows, f)), shape=(nl, n))
    Ct = sp.csr_matrix((np.ones(nl), (rows, t)), shape=(nl, n))
    Ybus = (Cf.T @ Yf + Ct.T @ Yt + sp.diags(ysh)).tocsr()
    return Ybus, Yf, Yt, live


def power_injection(Ybus: sp.spmatrix, V: np.ndarray) -> np.ndarray:
    return V * np.conj(Ybus @ V)


def jacobian(Ybus: sp.spmatrix, V: np.ndarray, pvpq: np.ndarray, pq: np.ndarray) -> sp.csr_matrix:
    """Polar Newton Jacobian d[P(pvpq); Q(pq)] / d[va(pvpq); vm(pq)]."""
    Ibus = Ybus @ V
    dV = sp.diags(V)
    dVn = sp.diags(V / np.abs(V))
    dS_dva = 1j * dV @ np.conj(sp.diags(Ibus) - Ybus @ dV)
    dS_dvm = dV @ np.conj(Ybus @ dVn) + np.conj(sp.diags(Ibus)) @ dVn
    dS_dva = sp.csr_matrix(dS_dva)
    dS_dvm = sp.csr_matrix(dS_dvm)
    j11 = dS_dva[pvpq][:, pvpq].real
    j12 = dS_dvm[pvpq][:, pq].real
    j21 = dS_dva[pq][:, pvpq].imag
    j22 = dS_dvm[pq][:, pq].imag
    return sp.vstack([sp.hstack([j11, j12]), sp.hstack([j21, j22])], format="csr")


def mismatch(Ybus, V, sbus, pvpq, pq) -> np.ndarray:
    mis = power_injection(Ybus, V) - sbus
    return np.concatenate([mis[pvpq].real, mis[pq].imag])


@dataclass
class NewtonResult:
    converged: bool
    V: np.ndarray
    iterations: int
    norms: list[float]


def newton_raphson(Ybus, sbus: np.ndarray, V0: np.ndarray, ref: np.ndarray, pv: np.ndarray, pq: np.ndarray,
                   tol: float = PF_TOL, max_iter: int = PF_MAX_ITER) -> NewtonResult:
    """Plain polar Newton iteration on fixed bus types."""
    V = V0.astype(complex).copy()
    va, vm = np.angle(V), np.abs(V)
    pvpq = np.concatenate([pv, pq]).astype(int)
    pq = pq.astype(int)
    F = mismatch(Ybus, V, sbus, pvpq, pq)
    norms = [float(np.max(np.abs(F))) if F.size else 0.0]
    it = 0
    while norms[-1] > tol and it < max_iter:
        it += 1
        J = jacobian(Ybus, V, pvpq, pq)
        try:
            dx = spla.spsolve(J.tocsc(), -F)
        except RuntimeError:
            return NewtonResult(False, V, it, norms)
        if not np.all(np.isfinite(dx)):
            return NewtonResult(False, V, it, norms)
        va[pvpq] += dx[:pvpq.size]
        vm[pq] += dx[pvpq.size:]
        V = vm * np.exp(1j * va)
        F = mismatch(Ybus, V, sbus, pvpq, pq)
        norms.append(float(np.max(np.abs(F))) if F.size else 0.0)
    return NewtonResult(norms[-1] <= tol, V, it, norms)


@dataclass
class PfSolution:
    converged: bool
    iterations: int
    vm: dict[int, float]
    va: dict[int, float]
    pg: dict[int, float]
    qg: dict[int, float]
    flows: dict[int, tuple[complex, complex]]
    ref_buses: tuple[int, ...]
    pv_to_pq: tuple[int, ...] = ()
    dead_buses: tuple[int, ...] = ()
    norms: list[float] = field(default_factory=list)


def _reference_bus(grid: Grid, members: list[int], gen_buses: dict[int, list]) -> int | None:
    if grid.slack_bus in members and grid.slack_bus in gen_buses:
        return grid.slack_bus
    with_gen = [b for b in members if b in gen_buses]
    if not with_gen:
        return None
    return max(with_gen, key=lambda b: (sum(g.pmax for g in gen_buses[b]), -b))


def newton_pf(grid: Grid, pg: dict[int, float] | None = None, vset: dict[int, float] | None = None,
              flat_start: bool = True, tol: float = PF_TOL, max_iter: int = PF_MAX_ITER,
              enforce_q_limits: bool = True) -> PfSolution:
    """AC power flow over every energized island.

    Generator active outputs come from ``pg`` (p.u., default the case's own
    dispatch); voltage setpoints of generator buses from ``vset``. Each
    island gets one reference bus: the slack bus if it still hosts a
    generator, otherwise its largest generator bus. Islands without
    generation are reported as dead.
    """
    idx = grid.bus_index
    n = len(grid.buses)
    gens = [g for g in grid.generators if g.in_service]
    gen_buses: dict[int, list] = {}
    for g in gens:
        gen_buses.setdefault(g.bus, []).append(g)
    pg = {g.id: (pg[g.id] if pg and g.id in pg else g.pg) for g in gens}
    Ybus, Yf, Yt, live = assemble_ybus(grid)
    sbus = np.zeros(n, dtype=complex)
    for ld in grid.loads:
        if ld.in_service:
            sbus[idx[ld.bus]] -= complex(ld.pd, ld.qd)
    for g in gens:
        sbus[idx[g.bus]] += pg[g.id]
    comp = connected_components(n, [(idx[br.from_bus], idx[br.to_bus]) for br in live])
    groups: dict[int, list[int]] = {}
    for b, c in zip(grid.bus_ids, comp):
        groups.setdefault(c, []).append(b)
    refs, dead = [], []
    for members in groups.values():
        r = _reference_bus(grid, members, gen_buses)
        if r is None:
            dead.extend(members)
        else:
            refs.append(r)
    dead_set = set(dead)
    V0 = np.ones(n, dtype=complex)
    if not flat_start:
        V0 = np.array([b.vm * cmath.exp(1j * b.va) for b in grid.buses])
    for b, gl in gen_buses.items():
        if b in dead_set:
            continue
        v = vset[b] if vset and b in vset else gl[0].vg
        V0[idx[b]] = v * (V0[idx[b]] / abs(V0[idx[b]]))
    ref_set = set(refs)
    pv_set = {b for b in gen_buses if b not in ref_set and b not in dead_set}
    qfixed: dict[int, float] = {}
    converted: list[int] = []
    res = None
    total_iter = 0
    norms: list[float] = []
    for _round in range(Q_LIMIT_ROUNDS + 1):
        s = sbus.copy()
        for b, q in qfixed.items():
            s[idx[b]] += 1j * q
        ref = np.array(sorted(idx[b] for b in ref_set), dtype=int)
        pv = np.array(sorted(idx[b] for b in pv_set), dtype=int)
        pq = np.array(sorted(idx[b] for b in grid.bus_ids if b not in ref_set and b not in pv_set
                             and b not in dead_set), dtype=int)
        res = newton_raphson(Ybus, s, V0, ref, pv, pq, tol=tol, max_iter=max_iter)
        total_iter += res.iterations
        norms.extend(res.norms)
        if not res.converged or not enforce_q_limits:
            break
        S = power_injection(Ybus, res.V)
        violators = []
        for b in sorted(pv_set):
            qinj = S[idx[b]].imag + sum(ld.qd for ld in grid.loads_at(b))
            qmin = sum(g.qmin for g in gen_buses[b])
            qmax = sum(g.qmax for g in gen_buses[b])
            if qinj > qmax + 1e-6:
                violators.append((b, qmax))
            elif qinj < qmin - 1e-6:
                violators.append((b, qmin))
        if not violators:
            break
        for b, q in violators:
            pv_set.discard(b)
            qfixed[b] = q
            converted.append(b)
        V0 = res.V
    V = res.V
    S = power_injection(Ybus, V)
    vm = {b: float(abs(V[idx[b]])) for b in grid.bus_ids}
    va = {b: float(np.angle(V[idx[b]])) for b in grid.bus_ids}
    pg_out, qg_out = {}, {}
    for b, gl in gen_buses.items():
        if b in dead_set:
            for g in gl:
                pg_out[g.id], qg_out[g.id] = 0.0, 0.0
            continue
        load = sum(complex(ld.pd, ld.qd) for ld in grid.loads_at(b))
        tot = S[idx[b]] + load
        share_p = [pg[g.id] for g in gl]
        for k, g in enumerate(gl):
            if b in ref_set:
                base = sum(share_p)
                pg_out[g.id] = tot.real * (share_p[k] / base if abs(base) > 1e-12 else 1.0 / len(gl))
            else:
                pg_out[g.id] = pg[g.id]
            span = sum(x.qmax - x.qmin for x in gl)
            w = (g.qmax - g.qmin) / span if span > 0 else 1.0 / len(gl)
            qg_out[g.id] = tot.imag * w
    If = Yf @ V
    It = Yt @ V
    flows = {}
    for k, br in enumerate(live):
        flows[br.id] = (complex(V[idx[br.from_bus]] * np.conj(If[k])), complex(V[idx[br.to_bus]] * np.conj(It[k])))
    return PfSolution(converged=res.converged, iterations=total_iter, vm=vm, va=va, pg=pg_out, qg=qg_out,
                      flows=flows, ref_buses=tuple(sorted(ref_set)), pv_to_pq=tuple(converted),
                      dead_buses=tuple(sorted(dead)), norms=norms)


@dataclass
class FeasReport:
    converged: bool
    iterations: int
    thermal: list[tuple[int, float, float]]
    vmag: list[tuple[int, float, float, float]]
    angle: list[tuple[int, float, float, float]]
    islanded: tuple[int, ...]
    slack_pg: dict[int, float]
    slack_limits_ok: bool
    cost: float
    pv_to_pq: tuple[int, ...] = ()

    @property
    def ok(self) -> bool:
        """Converged with no thermal, voltage, angle or islanding violation.

        Slack output limits are reported but do not fail the check: the
        reference generator absorbs the loss mismatch by construction.
        """
        return self.converged and not (self.thermal or self.vmag or self.angle or self.islanded)

    def to_dict(self) -> dict:
        return {
            "schema": "topocand.feasibility",
            "version": 1,
            "ok": self.ok,
            "converged": self.converged,
            "iterations": self.iterations,
            "cost": round(self.cost, 6),
            "thermal_violations": [{"branch": b, "s": round(s, 9), "rate_a": r, "excess": round(s / r - 1, 9)}
                                   for b, s, r in self.thermal],
            "vmag_violations": [{"bus": b, "vm": round(v, 9), "vmin": lo, "vmax": hi} for b, v, lo, hi in self.vmag],
            "angle_violations": [{"branch": b, "angle_diff": round(d, 9), "angmin": lo, "angmax": hi}
                                 for b, d, lo, hi in self.angle],
            "islanded_buses": list(self.islanded),
            "slack_pg": {str(k): round(v, 9) for k, v in sorted(self.slack_pg.items())},
            "slack_limits_ok": self.slack_limits_ok,
            "pv_to_pq": list(self.pv_to_pq),
        }

    def to_json(self, indent: int | None = 1) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=False)

    def to_text(self) -> str:
        lines = [f"AC feasibility: {'PASS' if self.ok else 'FAIL'}",
                 f"  converged     {self.converged} ({self.iterations} iterations)",
                 f"  cost          {self.cost:.4f}"]
        lines.append(f"  thermal       {len(self.thermal)} violation(s)")
        for b, s, r in self.thermal:
            lines.append(f"    branch {b:>6}  s={s:.4f}  rate={r:.4f}  (+{100 * (s / r - 1):.2f}%)")
        lines.append(f"  vmag          {len(self.vmag)} violation(s)")
        for b, v, lo, hi in self.vmag:
            lines.append(f"    bus {b:>9}  vm={v:.4f}  [{lo:.3f}, {hi:.3f}]")
        lines.append(f"  angle         {len(self.angle)} violation(s)")
        for b, d, lo, hi in self.angle:
            lines.append(f"    branch {b:>6}  d={d:.4f}  [{lo:.3f}, {hi:.3f}]")
        lines.append(f"  islanded      {', '.join(map(str, self.islanded)) or '-'}")
        lines.append(f"  slack limits  {'ok' if self.slack_limits_ok else 'outside'}")
        return "\n".join(lines)


def feasibility_check(grid: Grid, opf: OpfSolution, tol: float = 0.01) -> FeasReport:
    """Run an AC power flow on the LPAC dispatch and list limit violations.

    Non-reference generators keep their LPAC active output; reference
    generators absorb the loss mismatch. Generator buses hold the LPAC
    voltage magnitude clipped to the bus limits.
    """
    if tol < 0:
        raise ValueError("tol must be non-negative")
    vset = {}
    for g in grid.generators:
        if g.in_service and g.bus in opf.vmags:
            b = grid.bus_by_id[g.bus]
            vset[g.bus] = min(max(opf.vmags[g.bus], b.vmin), b.vmax)
    pg = {gid: p for gid, (p, _) in opf.dispatch.items()}
    pf = newton_pf(grid, pg=pg, vset=vset)
    thermal, vmag, angle = [], [], []
    dead = set(pf.dead_buses)
    if pf.converged:
        for br in grid.branches:
            if not br.in_service or br.id not in pf.flows:
                continue
            if br.rate_a > 0:
                s = max(abs(pf.flows[br.id][0]), abs(pf.flows[br.id][1]))
                if s > br.rate_a * (1 + tol):
                    thermal.append((br.id, float(s), br.rate_a))
            if br.from_bus in dead:
                continue
            d = pf.va[br.from_bus] - pf.va[br.to_bus]
            if br.ang_max < 2 * np.pi and d > br.ang_max + tol * abs(br.ang_max):
                angle.append((br.id, d, br.ang_min, br.ang_max))
            elif br.ang_min > -2 * np.pi and d < br.ang_min - tol * abs(br.ang_min):
                angle.append((br.id, d, br.ang_min, br.ang_max))
        for b in grid.buses:
            if b.id in dead:
                continue
            span = b.vmax - b.vmin
            v = pf.vm[b.id]
            if v > b.vmax + tol * span or v < b.vmin - tol * span:
                vmag.append((b.id, v, b.vmin, b.vmax))
    ref_gens = [g for g in grid.generators if g.in_service and g.bus in pf.ref_buses]
    slack_pg = {g.id: float(pf.pg.get(g.id, 0.0)) for g in ref_gens}
    slack_ok = all(g.pmin - tol * max(g.pmax - g.pmin, 1e-3) <= slack_pg[g.id] <= g.pmax + tol * max(g.pmax - g.pmin, 1e-3)
                   for g in ref_gens)
    cost = sum(g.cost.evaluate(pf.pg.get(g.id, 0.0) * grid.base_mva) for g in grid.generators if g.in_service)
    return FeasReport(converged=pf.converged, iterations=pf.iterations, thermal=thermal, vmag=vmag, angle=angle,
                      islanded=islanded_with_elements(grid), slack_pg=slack_pg, slack_limits_ok=slack_ok,
                      cost=float(cost), pv_to_pq=pf.pv_to_pq)


def islanded_with_elements(grid: Grid) -> tuple[int, ...]:
    """Buses cut off from the slack island that still carry load, generation or a shunt.

    Empty stub buses left behind by an opened branch switch are not counted.
    """
    idx = grid.bus_index
    comp = connected_components(len(grid.buses), [(idx[br.from_bus], idx[br.to_bus])
                                                  for br in grid.branches if br.in_service])
    root = comp[idx[grid.slack_bus]]
    busy = {ld.bus for ld in grid.loads if ld.in_service and (ld.pd or ld.qd)}
    busy |= {g.bus for g in grid.generators if g.in_service}
    busy |= {sh.bus for sh in grid.shunts if sh.in_service and (sh.gs or sh.bs)}
    return tuple(sorted(b.id for b, c in zip(grid.buses, comp) if c != root and b.id in busy))


def cost_delta(base_cost: float, new_cost: float) -> float:
    """Percentage decrease of ``new_cost`` relative to ``base_cost``."""
    if base_cost == 0:
        raise ValueError("base cost is zero")
    return 100.0 * (base_cost - new_cost) / base_cost
