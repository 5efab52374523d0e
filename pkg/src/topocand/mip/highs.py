"""LP backend delegating to HiGHS through ``scipy.optimize.linprog``."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .problem import EQ, GE, INFEASIBLE, LE, OPTIMAL, UNBOUNDED, LpProblem, LpSolution, SolverError


def solve_highs(problem: LpProblem, lb: np.ndarray | None = None, ub: np.ndarray | None = None) -> LpSolution:
    lb = problem.lb if lb is None else np.asarray(lb, dtype=float)
    ub = problem.ub if ub is None else np.asarray(ub, dtype=float)
    if np.any(lb > ub):
        return LpSolution(status=INFEASIBLE)
    sense = np.asarray(problem.sense)
    le = np.flatnonzero(sense == LE)
    ge = np.flatnonzero(sense == GE)
    eq = np.flatnonzero(sense == EQ)
    A = problem.A.tocsr()
    ub_rows = np.concatenate([le, ge])
    A_ub = sp.vstack([A[le], -A[ge]]).tocsr() if ub_rows.size else None
    b_ub = np.concatenate([problem.rhs[le], -problem.rhs[ge]]) if ub_rows.size else None
    A_eq = A[eq] if eq.size else None
    b_eq = problem.rhs[eq] if eq.size else None
    bounds = np.column_stack([np.where(np.isfinite(lb), lb, -np.inf), np.where(np.isfinite(ub), ub, np.inf)])
    res = linprog(problem.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status == 2:
        return LpSolution(status=INFEASIBLE, iterations=int(res.nit))
    if res.status == 3:
        return LpSolution(status=UNBOUNDED, iterations=int(res.nit))
    if res.status != 0:
        raise SolverError(f"HiGHS failed: {res.message}")
    duals = np.zeros(problem.n_rows)
    if ub_rows.size:
        m = res.ineqlin.marginals
        duals[le] = m[: le.size]
        duals[ge] = -m[le.size:]
    if eq.size:
        duals[eq] = res.eqlin.marginals
    rc = res.lower.marginals + res.upper.marginals
    x = np.asarray(res.x, dtype=float)
    return LpSolution(status=OPTIMAL, x=x, duals=duals, objective=problem.objective(x), reduced_costs=rc,
                      iterations=int(res.nit))
