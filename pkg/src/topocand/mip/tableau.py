"""Dense two-phase tableau simplex with Bland's rule.

Deliberately naive and independent of the revised engine: every bound is
turned into an explicit row, every variable is split into non-negative
parts, and the full tableau is pivoted. Used only as a test oracle on small
problems.
"""

from __future__ import annotations

import numpy as np

from .problem import EQ, GE, INFEASIBLE, LE, OPTIMAL, UNBOUNDED, LpProblem


def tableau_simplex(problem: LpProblem, tol: float = 1e-9, max_iter: int = 100000) -> tuple[str, np.ndarray | None, float]:
    """Return (status, x, objective) for ``problem``."""
    A = problem.A.toarray()
    m0, n = A.shape
    # x = x_plus - x_minus, both >= 0
    cols = np.hstack([A, -A])
    cost = np.concatenate([problem.c, -problem.c])
    rows, rhs, kinds = [], [], []
    for i in range(m0):
        rows.append(cols[i])
        rhs.append(problem.rhs[i])
        kinds.append(problem.sense[i])
    for j in range(n):
        e = np.zeros(2 * n)
        e[j], e[n + j] = 1.0, -1.0
        if np.isfinite(problem.lb[j]):
            rows.append(e.copy())
            rhs.append(problem.lb[j])
            kinds.append(GE)
        if np.isfinite(problem.ub[j]):
            rows.append(e.copy())
            rhs.append(problem.ub[j])
            kinds.append(LE)
    R = np.array(rows) if rows else np.zeros((0, 2 * n))
    b = np.array(rhs, dtype=float)
    m = R.shape[0]
    # slack/surplus columns, then make rhs non-negative
    n_slack = sum(1 for k in kinds if k != EQ)
    S = np.zeros((m, n_slack))
    s = 0
    for i, k in enumerate(kinds):
        if k == LE:
            S[i, s] = 1.0
            s += 1
        elif k == GE:
            S[i, s] = -1.0
            s += 1
    T = np.hstack([R, S])
    neg = b < 0
    T[neg] *= -1.0
    b = np.where(neg, -b, b)
    nv = T.shape[1]
    # phase 1 with one artificial per row
    tab = np.zeros((m + 1, nv + m + 1))
    tab[:m, :nv] = T
    tab[:m, nv:nv + m] = np.eye(m)
    tab[:m, -1] = b
    basis = list(range(nv, nv + m))
    obj1 = np.zeros(nv + m + 1)
    obj1[nv:nv + m] = 1.0
    tab[m] = obj1
    for i in range(m):
        tab[m] -= tab[i]

    def run(allowed: int) -> str:
        for _ in range(max_iter):
            row = tab[m, :allowed]
            enter = next((j for j in range(allowed) if row[j] < -tol), None)
            if enter is None:
                return OPTIMAL
            col = tab[:m, enter]
            best, leave = np.inf, None
            for i in range(m):
                if col[i] > tol:
                    ratio = tab[i, -1] / col[i]
                    if ratio < best - 1e-12 or (abs(ratio - best) <= 1e-12 and basis[i] < basis[leave]):
                        best, leave = ratio, i
            if leave is None:
                return UNBOUNDED
            tab[leave] /= tab[leave, enter]
            for i in range(m + 1):
                if i != leave and tab[i, enter] != 0.0:
                    tab[i] -= tab[i, enter] * tab[leave]
            basis[leave] = enter
        raise RuntimeError("tableau simplex iteration limit")

    run(nv + m)
    if tab[m, -1] < -1e-7:
        return INFEASIBLE, None, float("nan")
    # drive remaining artificials out of the basis
    for i in range(m):
        if basis[i] >= nv:
            nz = [j for j in range(nv) if abs(tab[i, j]) > tol]
            if nz:
                j = nz[0]
                tab[i] /= tab[i, j]
                for k in range(m + 1):
                    if k != i and tab[k, j] != 0.0:
                        tab[k] -= tab[k, j] * tab[i]
                basis[i] = j
    keep = [i for i in range(m) if basis[i] < nv]
    tab = np.vstack([tab[keep], np.zeros(nv + m + 1)])
    basis = [basis[i] for i in keep]
    m = len(keep)
    full_cost = np.concatenate([cost, np.zeros(nv - 2 * n)])
    tab[m, :nv] = full_cost
    tab[m, nv:] = 0.0
    for i in range(m):
        if tab[m, basis[i]] != 0.0:
            tab[m] -= tab[m, basis[i]] * tab[i]
    tab[m, nv:nv + len(rows)] = 0.0
    status = run(nv)
    if status == UNBOUNDED:
        return UNBOUNDED, None, float("nan")
    z = np.zeros(nv)
    for i in range(m):
        z[basis[i]] = tab[i, -1]
    x = z[:n] - z[n:2 * n]
    return OPTIMAL, x, problem.objective(x)
