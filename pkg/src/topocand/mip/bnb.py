"""Best-bound branch-and-bound over binaries and an exhaustive enumerator."""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field

import numpy as np

from .. import _kernels as K
from .problem import (EQ, GAP_REACHED, GE, INFEASIBLE, LE, NODE_LIMIT, OPTIMAL, UNBOUNDED, LpSolution,
                      MilpProblem, MilpSolution, NodeRecord, SolverError, relative_gap)
from .simplex import Basis, RevisedSimplex

logger = logging.getLogger(__name__)

INT_TOL = 1e-6
PRUNE_TOL = 1e-9
MAX_ENUM_BINARIES = 24


class _LpEngine:
    """One reusable LP solver over a fixed matrix with per-call bounds."""

    def __init__(self, problem: MilpProblem, engine: str):
        self.base = problem.base
        self.engine = engine
        self.solves = 0
        if engine == "revised":
            self._rs = RevisedSimplex(self.base)
        elif engine != "highs":
            raise ValueError(f"unknown LP engine {engine!r}")

    def solve(self, lb: np.ndarray, ub: np.ndarray, basis: Basis | None = None) -> LpSolution:
        self.solves += 1
        if self.engine == "revised":
            return self._rs.solve(lb=lb, ub=ub, basis=basis)
        from .highs import solve_highs

        return solve_highs(self.base, lb=lb, ub=ub)


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    depth: int = field(compare=False)
    lb: np.ndarray = field(compare=False, repr=False)
    ub: np.ndarray = field(compare=False, repr=False)
    basis: Basis | None = field(compare=False, repr=False)
    x: np.ndarray = field(compare=False, repr=False)


def _most_fractional(x: np.ndarray, ints: np.ndarray) -> int:
    """Index of the binary furthest from integrality, lowest index on ties; -1 if integral."""
    if ints.size == 0:
        return -1
    frac = np.abs(x[ints] - np.round(x[ints]))
    k = int(np.argmax(frac))
    return -1 if frac[k] <= INT_TOL else int(ints[k])


def _fixed_solve(eng: _LpEngine, lb: np.ndarray, ub: np.ndarray, ints: np.ndarray, values: np.ndarray,
                 basis: Basis | None = None) -> LpSolution:
    lo, hi = lb.copy(), ub.copy()
    lo[ints] = values
    hi[ints] = values
    if np.any(lo > hi):
        return LpSolution(status=INFEASIBLE)
    return eng.solve(lo, hi, basis)


def solve_milp(problem: MilpProblem, gap: float = 1e-4, node_limit: int = 100_000,
               incumbent: np.ndarray | None = None, engine: str = "revised",
               heuristic_every: int = 25) -> MilpSolution:
    """Best-bound branch-and-bound.

    ``incumbent`` may hold a starting point; only its binary entries are used
    (the continuous part is re-optimized). ``nodes`` counts nodes created by
    branching, so an integral root relaxation reports zero.
    """
    base = problem.base
    ints = problem.integer_vars
    eng = _LpEngine(problem, engine)
    lb0, ub0 = base.lb.copy(), base.ub.copy()
    best_x: np.ndarray | None = None
    best_obj = np.inf
    log: list[NodeRecord] = []

    def offer(values: np.ndarray, basis: Basis | None) -> None:
        nonlocal best_x, best_obj
        sol = _fixed_solve(eng, lb0, ub0, ints, values, basis)
        if sol.optimal and sol.objective < best_obj - PRUNE_TOL:
            x = sol.x.copy()
            x[ints] = values
            best_x, best_obj = x, sol.objective

    if incumbent is not None:
        offer(np.round(np.asarray(incumbent, dtype=float)[ints]), None)

    root = eng.solve(lb0, ub0)
    if root.status == INFEASIBLE:
        return MilpSolution(status=INFEASIBLE, lp_solves=eng.solves)
    if root.status == UNBOUNDED:
        raise SolverError("LP relaxation is unbounded")
    seq = 0
    heap: list[_Node] = [_Node(root.objective, seq, 0, lb0, ub0, root.basis, root.x)]
    if _most_fractional(root.x, ints) >= 0:
        offer(np.clip(np.round(root.x[ints]), 0, 1), root.basis)
    created = 0
    processed = 0
    last_bound = -np.inf
    status = OPTIMAL
    while heap:
        node = heapq.heappop(heap)
        bound = max(node.bound, last_bound)
        last_bound = bound
        if node.bound >= best_obj - PRUNE_TOL:
            # best-first: every remaining node is at least this bad
            heap.clear()
            break
        if best_x is not None and relative_gap(best_obj, bound) <= gap:
            heapq.heappush(heap, node)
            status = GAP_REACHED
            break
        if created >= node_limit:
            heapq.heappush(heap, node)
            status = NODE_LIMIT
            break
        processed += 1
        j = _most_fractional(node.x, ints)
        if j < 0:
            x = node.x.copy()
            x[ints] = np.round(x[ints])
            if node.bound < best_obj:
                best_x, best_obj = x, node.bound
            log.append(NodeRecord(node.seq, node.depth, node.bound, bound, best_obj, "integral"))
            continue
        for val in (0.0, 1.0):
            lo, hi = node.lb.copy(), node.ub.copy()
            lo[j] = hi[j] = val
            child = eng.solve(lo, hi, node.basis)
            created += 1
            seq += 1
            if child.status == INFEASIBLE:
                log.append(NodeRecord(seq, node.depth + 1, np.inf, bound, best_obj, "infeasible"))
                continue
            if child.status != OPTIMAL:
                raise SolverError(f"node LP returned {child.status}")
            cb = max(child.objective, node.bound)
            if cb >= best_obj - PRUNE_TOL:
                log.append(NodeRecord(seq, node.depth + 1, cb, bound, best_obj, "pruned"))
                continue
            heapq.heappush(heap, _Node(cb, seq, node.depth + 1, lo, hi, child.basis, child.x))
            log.append(NodeRecord(seq, node.depth + 1, cb, bound, best_obj, "open"))
        if heuristic_every and processed % heuristic_every == 0:
            offer(np.clip(np.round(node.x[ints]), 0, 1), node.basis)

    if best_x is None:
        if status == OPTIMAL:
            return MilpSolution(status=INFEASIBLE, nodes=created, lp_solves=eng.solves, node_log=log)
        return MilpSolution(status=status, best_bound=last_bound, nodes=created, lp_solves=eng.solves,
                            node_log=log)
    if heap:
        best_bound = min(max(heap[0].bound, last_bound), best_obj)
    else:
        best_bound = best_obj
    g = relative_gap(best_obj, best_bound)
    if status == GAP_REACHED and g == 0.0:
        status = OPTIMAL
    return MilpSolution(status=status, x=best_x, objective=float(best_obj), best_bound=float(best_bound),
                        gap=g, nodes=created, lp_solves=eng.solves, node_log=log)


def _binary_rows(problem: MilpProblem) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rows touching only binaries, as dense (rows, rhs, sense code)."""
    lp = problem.base
    ints = problem.integer_vars
    pos = {int(j): k for k, j in enumerate(ints)}
    A = lp.A.tocsr()
    rows, rhs, sense = [], [], []
    code = {LE: -1, EQ: 0, GE: 1}
    for i in range(lp.n_rows):
        cols = A.indices[A.indptr[i]:A.indptr[i + 1]]
        if cols.size == 0 or any(int(j) not in pos for j in cols):
            continue
        r = np.zeros(ints.size)
        for j, v in zip(cols, A.data[A.indptr[i]:A.indptr[i + 1]]):
            r[pos[int(j)]] = v
        rows.append(r)
        rhs.append(lp.rhs[i])
        sense.append(code[lp.sense[i]])
    if not rows:
        return np.zeros((0, ints.size)), np.zeros(0), np.zeros(0, dtype=np.int8)
    return np.ascontiguousarray(rows), np.asarray(rhs, dtype=float), np.asarray(sense, dtype=np.int8)


def enumerate_exhaustive(problem: MilpProblem, engine: str = "revised", screen: bool = True) -> MilpSolution:
    """True optimum by solving one LP per binary assignment.

    With ``screen`` set, assignments violating rows that involve binaries
    only are discarded before any LP is solved. Ties keep the assignment with
    the smallest bitmask (bit k = value of the k-th binary).
    """
    ints = problem.integer_vars
    k = ints.size
    if k > MAX_ENUM_BINARIES:
        raise ValueError(f"enumerate_exhaustive is limited to {MAX_ENUM_BINARIES} binaries, got {k}")
    eng = _LpEngine(problem, engine)
    base = problem.base
    if k == 0:
        sol = eng.solve(base.lb, base.ub)
        if sol.status == UNBOUNDED:
            raise SolverError("LP relaxation is unbounded")
        if not sol.optimal:
            return MilpSolution(status=INFEASIBLE, nodes=1, lp_solves=1)
        return MilpSolution(status=OPTIMAL, x=sol.x, objective=sol.objective, best_bound=sol.objective, gap=0.0,
                            nodes=1, lp_solves=1)
    if screen:
        rows, rhs, sense = _binary_rows(problem)
        masks = K.binary_screen(rows, rhs, sense, k)
    else:
        masks = np.arange(1 << k, dtype=np.int64)
    shifts = np.arange(k, dtype=np.int64)
    best_x, best_obj = None, np.inf
    basis = None
    for mask in masks:
        values = ((int(mask) >> shifts) & 1).astype(float)
        sol = _fixed_solve(eng, base.lb, base.ub, ints, values, basis)
        if sol.status == UNBOUNDED:
            raise SolverError("fixed-assignment LP is unbounded")
        if not sol.optimal:
            continue
        basis = sol.basis
        if sol.objective < best_obj:
            best_x, best_obj = sol.x.copy(), sol.objective
            best_x[ints] = values
    if best_x is None:
        return MilpSolution(status=INFEASIBLE, nodes=1 << k, lp_solves=eng.solves)
    return MilpSolution(status=OPTIMAL, x=best_x, objective=float(best_obj), best_bound=float(best_obj), gap=0.0,
                        nodes=1 << k, lp_solves=eng.solves)
