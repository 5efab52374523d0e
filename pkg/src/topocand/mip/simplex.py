"""Bounded revised simplex (primal and dual) with warm starts.

The basis inverse is held as a sparse LU factorization plus a product-form
eta file, refactorized every ``refactor_every`` pivots. The problem is
geometric-mean scaled internally; primal values, duals and reduced costs are
returned unscaled. Row duals follow the convention "objective change per
unit increase of the row's right-hand side".
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .. import _kernels as K
from .problem import EQ, GE, INFEASIBLE, LE, OPTIMAL, UNBOUNDED, LpProblem, LpSolution, SolverError

logger = logging.getLogger(__name__)


@dataclass
class Basis:
    """Opaque warm-start data: basic column per row and per-column state."""

    head: np.ndarray
    state: np.ndarray

    def copy(self) -> "Basis":
        return Basis(self.head.copy(), self.state.copy())


def _pow2(v: np.ndarray) -> np.ndarray:
    return np.exp2(np.round(np.log2(v)))


def geometric_scaling(A: sp.spmatrix, passes: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Row and column factors (powers of two) equilibrating |A|."""
    absA = abs(sp.csr_matrix(A, dtype=float))
    m, n = absA.shape
    R = np.ones(m)
    C = np.ones(n)
    if absA.nnz == 0:
        return R, C
    for _ in range(passes):
        S = sp.diags(R) @ absA @ sp.diags(C)
        S = S.tocsr()
        mx = np.asarray(S.max(axis=1).todense()).ravel()
        S.data = 1.0 / S.data
        mn = 1.0 / np.maximum(np.asarray(S.max(axis=1).todense()).ravel(), 1e-300)
        ok = mx > 0
        R[ok] /= np.sqrt(mx[ok] * mn[ok])
        S = (sp.diags(R) @ absA @ sp.diags(C)).tocsc()
        mx = np.asarray(S.max(axis=0).todense()).ravel()
        S.data = 1.0 / S.data
        mn = 1.0 / np.maximum(np.asarray(S.max(axis=0).todense()).ravel(), 1e-300)
        ok = mx > 0
        C[ok] /= np.sqrt(mx[ok] * mn[ok])
    return _pow2(R), _pow2(C)


class RevisedSimplex:
    """Reusable solver bound to one constraint matrix; bounds vary per call."""

    def __init__(self, problem: LpProblem, refactor_every: int = 50, bland_after: int = 1000,
                 feas_tol: float = 1e-9, opt_tol: float = 1e-9, piv_tol: float = 1e-9,
                 max_iter: int | None = None, scale: bool = True):
        self.problem = problem
        self.refactor_every = refactor_every
        self.bland_after = bland_after
        self.feas_tol = feas_tol
        self.opt_tol = opt_tol
        self.piv_tol = piv_tol
        m, n = problem.A.shape
        self.m, self.n = m, n
        self.max_iter = max_iter or 50 * (m + n) + 10000
        if scale:
            R, C = geometric_scaling(problem.A)
        else:
            R, C = np.ones(m), np.ones(n)
        self.R, self.C = R, C
        As = (sp.diags(R) @ problem.A @ sp.diags(C)).tocsc()
        self.M = sp.hstack([As, -sp.identity(m, format="csc")], format="csc")
        self.MT = self.M.T.tocsr()
        cs = problem.c * C
        cmax = np.abs(cs).max() if n else 0.0
        self.sigma = float(_pow2(np.array([1.0 / cmax]))[0]) if cmax > 0 else 1.0
        self.cost = np.concatenate([cs * self.sigma, np.zeros(m)])
        lo_row = np.full(m, -np.inf)
        hi_row = np.full(m, np.inf)
        sense = np.asarray(problem.sense)
        rhs_s = problem.rhs * R
        lo_row[(sense == GE) | (sense == EQ)] = rhs_s[(sense == GE) | (sense == EQ)]
        hi_row[(sense == LE) | (sense == EQ)] = rhs_s[(sense == LE) | (sense == EQ)]
        self._row_lo, self._row_hi = lo_row, hi_row
        self.iterations = 0

    # -- basis factorization ------------------------------------------------
    def _factor(self):
        B = self.M[:, self.head].tocsc()
        try:
            self.lu = spla.splu(B, permc_spec="COLAMD")
            if not np.all(np.isfinite(self.lu.U.diagonal())) or np.min(np.abs(self.lu.U.diagonal())) < 1e-13:
                raise RuntimeError("near-singular basis")
        except RuntimeError:
            self._repair_basis()
            B = self.M[:, self.head].tocsc()
            self.lu = spla.splu(B, permc_spec="COLAMD")
        self.n_eta = 0
        self.eta_rows = np.zeros(self.refactor_every + 1, dtype=np.int64)
        self.eta_mat = np.zeros((self.refactor_every + 1, self.m))

    def _repair_basis(self):
        """Swap dependent basic columns for logicals so the basis is regular."""
        B = self.M[:, self.head].toarray()
        _, Rq, piv = la.qr(B, pivoting=True, mode="economic")
        diag = np.abs(np.diag(Rq))
        rank = int(np.sum(diag > 1e-9 * max(diag.max(), 1.0)))
        keep = np.sort(piv[:rank])
        Q, _ = la.qr(B[:, keep], mode="full")
        comp = Q[:, rank:]
        _, _, rows = la.qr(comp.T, pivoting=True, mode="economic")
        new_rows = rows[: self.m - rank]
        dropped = np.setdiff1d(np.arange(self.m), keep)
        for pos, row in zip(dropped, new_rows):
            old = self.head[pos]
            self._set_nonbasic(old)
            self.head[pos] = self.n + row
            self.state[self.n + row] = K.BASIC
        logger.debug("basis repaired: %d column(s) replaced", len(dropped))

    def _ftran(self, v: np.ndarray) -> np.ndarray:
        w = self.lu.solve(v)
        if self.n_eta:
            K.ftran_etas(w, self.eta_rows, self.eta_mat, self.n_eta)
        return w

    def _btran(self, v: np.ndarray) -> np.ndarray:
        v = np.array(v, dtype=float)
        if self.n_eta:
            K.btran_etas(v, self.eta_rows, self.eta_mat, self.n_eta)
        return self.lu.solve(v, trans="T")

    def _column(self, j: int) -> np.ndarray:
        col = np.zeros(self.m)
        lo, hi = self.M.indptr[j], self.M.indptr[j + 1]
        col[self.M.indices[lo:hi]] = self.M.data[lo:hi]
        return col

    def _pivot(self, r: int, q: int, alpha: np.ndarray, leaving_value: float, leaving_upper: bool):
        leaving = self.head[r]
        self.head[r] = q
        self.state[q] = K.BASIC
        self.x[leaving] = leaving_value
        if self.lo[leaving] == self.hi[leaving]:
            self.state[leaving] = K.FIXED
        else:
            self.state[leaving] = K.AT_UB if leaving_upper else K.AT_LB
        if self.n_eta >= self.refactor_every:
            self._factor()
            self._recompute_xb()
            return leaving
        eta = -alpha / alpha[r]
        eta[r] = 1.0 / alpha[r]
        self.eta_rows[self.n_eta] = r
        self.eta_mat[self.n_eta] = eta
        self.n_eta += 1
        return leaving

    # -- primal state -------------------------------------------------------
    def _set_nonbasic(self, j: int, prefer_upper: bool = False):
        lo, hi = self.lo[j], self.hi[j]
        if lo == hi:
            self.state[j], self.x[j] = K.FIXED, lo
        elif prefer_upper and np.isfinite(hi):
            self.state[j], self.x[j] = K.AT_UB, hi
        elif np.isfinite(lo):
            self.state[j], self.x[j] = K.AT_LB, lo
        elif np.isfinite(hi):
            self.state[j], self.x[j] = K.AT_UB, hi
        else:
            self.state[j], self.x[j] = K.FREE, 0.0

    def _recompute_xb(self):
        xn = self.x.copy()
        xn[self.head] = 0.0
        self.x[self.head] = self._ftran(-(self.M @ xn))

    def _reduced_costs(self, cb: np.ndarray, cvec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        y = self._btran(cb)
        d = cvec - self.MT @ y
        d[self.head] = 0.0
        return y, d

    def _primal_infeasibility(self):
        xb = self.x[self.head]
        lo, hi = self.lo[self.head], self.hi[self.head]
        return xb < lo - self.feas_tol, xb > hi + self.feas_tol

    # -- main entry ---------------------------------------------------------
    def solve(self, lb: np.ndarray | None = None, ub: np.ndarray | None = None,
              basis: Basis | None = None) -> LpSolution:
        p = self.problem
        lb = p.lb if lb is None else np.asarray(lb, dtype=float)
        ub = p.ub if ub is None else np.asarray(ub, dtype=float)
        if np.any(lb > ub):
            return LpSolution(status=INFEASIBLE)
        with np.errstate(invalid="ignore"):
            self.lo = np.concatenate([lb / self.C, self._row_lo])
            self.hi = np.concatenate([ub / self.C, self._row_hi])
        if self.m == 0:
            return self._solve_unconstrained(lb, ub)
        N = self.n + self.m
        self.x = np.zeros(N)
        self.iterations = 0
        if basis is not None and len(basis.head) == self.m:
            self.head = basis.head.copy()
            self.state = basis.state.copy()
            for j in np.flatnonzero(self.state != K.BASIC):
                st = self.state[j]
                self._set_nonbasic(j, prefer_upper=(st == K.AT_UB))
        else:
            self.head = np.arange(self.n, N)
            self.state = np.zeros(N, dtype=np.int8)
            for j in range(self.n):
                self._set_nonbasic(j)
            self.state[self.head] = K.BASIC
        self._factor()
        self._recompute_xb()

        status = None
        for _attempt in range(4):
            below, above = self._primal_infeasibility()
            if (below.any() or above.any()) and self._dual_feasible():
                status = self._dual_loop()
                if status == INFEASIBLE:
                    self._factor()
                    self._recompute_xb()
                    status = self._dual_loop()
            else:
                status = self._primal_loop()
            if status != OPTIMAL:
                break
            self._factor()
            self._recompute_xb()
            below, above = self._primal_infeasibility()
            _, d = self._reduced_costs(self.cost[self.head], self.cost)
            if not (below.any() or above.any()) and not self._dual_violations(d).any():
                break
        else:
            raise SolverError("simplex failed to converge after refactorization retries")
        return self._result(status)

    def _solve_unconstrained(self, lb, ub) -> LpSolution:
        c = self.problem.c
        x = np.where(c > 0, lb, np.where(c < 0, ub, np.where(np.isfinite(lb), lb, np.where(np.isfinite(ub), ub, 0.0))))
        if not np.all(np.isfinite(x)):
            return LpSolution(status=UNBOUNDED)
        return LpSolution(status=OPTIMAL, x=x, duals=np.zeros(0), objective=self.problem.objective(x),
                          reduced_costs=c.copy())

    def _dual_violations(self, d):
        tol = self.opt_tol * 10
        st = self.state
        return (((st == K.AT_LB) & (d < -tol)) | ((st == K.AT_UB) & (d > tol))
                | ((st == K.FREE) & (np.abs(d) > tol)))

    def _dual_feasible(self) -> bool:
        _, d = self._reduced_costs(self.cost[self.head], self.cost)
        return not self._dual_violations(d).any()

    def _primal_loop(self) -> str:
        degenerate = 0
        stalls = 0
        zero = np.zeros(self.n + self.m)
        while True:
            self.iterations += 1
            if self.iterations > self.max_iter:
                raise SolverError("simplex iteration limit reached")
            below, above = self._primal_infeasibility()
            phase1 = bool(below.any() or above.any())
            if phase1:
                cb = np.where(below, -1.0, np.where(above, 1.0, 0.0))
                _, d = self._reduced_costs(cb, zero)
            else:
                _, d = self._reduced_costs(self.cost[self.head], self.cost)
            bland = degenerate >= self.bland_after
            q, direction = K.price(d, self.state, self.opt_tol, bland)
            if q < 0:
                return INFEASIBLE if phase1 else OPTIMAL
            alpha = self._ftran(self._column(q))
            delta = -direction * alpha
            xb = self.x[self.head]
            r, t, hits_upper = K.primal_ratio(xb, self.lo[self.head], self.hi[self.head], delta,
                                              self.feas_tol, self.piv_tol, bland)
            span = self.hi[q] - self.lo[q]
            if r < 0 and not np.isfinite(span):
                if phase1:
                    stalls += 1
                    if stalls > 3:
                        raise SolverError("phase 1 found an unbounded improving ray")
                    self._factor()
                    self._recompute_xb()
                    continue
                return UNBOUNDED
            if np.isfinite(span) and (r < 0 or span <= t):
                self.x[self.head] = xb + span * delta
                if self.state[q] == K.AT_LB:
                    self.state[q], self.x[q] = K.AT_UB, self.hi[q]
                else:
                    self.state[q], self.x[q] = K.AT_LB, self.lo[q]
                degenerate = 0
                continue
            degenerate = degenerate + 1 if t <= self.feas_tol else 0
            self.x[self.head] = xb + t * delta
            self.x[q] += direction * t
            leaving = self.head[r]
            bound = self.hi[leaving] if hits_upper else self.lo[leaving]
            self._pivot(r, q, alpha, bound, hits_upper)

    def _dual_loop(self) -> str:
        while True:
            self.iterations += 1
            if self.iterations > self.max_iter:
                raise SolverError("dual simplex iteration limit reached")
            xb = self.x[self.head]
            lo_b, hi_b = self.lo[self.head], self.hi[self.head]
            infeas = np.maximum(lo_b - xb, 0.0) + np.maximum(xb - hi_b, 0.0)
            r = int(np.argmax(infeas))
            if infeas[r] <= self.feas_tol:
                return OPTIMAL
            going_up = xb[r] < lo_b[r]
            e = np.zeros(self.m)
            e[r] = 1.0
            rho = self._btran(e)
            alpha_row = self.MT @ rho
            alpha_row[self.head] = 0.0
            _, d = self._reduced_costs(self.cost[self.head], self.cost)
            q = K.dual_ratio(d, alpha_row, self.state, 1 if going_up else -1, self.opt_tol, self.piv_tol)
            if q < 0:
                return INFEASIBLE
            alpha = self._ftran(self._column(q))
            if abs(alpha[r]) <= self.piv_tol:
                self._factor()
                self._recompute_xb()
                continue
            target = lo_b[r] if going_up else hi_b[r]
            step = (xb[r] - target) / alpha[r]
            self.x[self.head] = xb - step * alpha
            self.x[q] += step
            self._pivot(r, q, alpha, target, not going_up)

    def _result(self, status: str) -> LpSolution:
        basis = Basis(self.head.copy(), self.state.copy())
        if status != OPTIMAL:
            return LpSolution(status=status, iterations=self.iterations, basis=basis)
        y, d = self._reduced_costs(self.cost[self.head], self.cost)
        x = self.x[: self.n] * self.C
        duals = y * self.R / self.sigma
        rc = d[: self.n] / (self.C * self.sigma)
        p = self.problem
        return LpSolution(status=OPTIMAL, x=x, duals=duals, objective=p.objective(x), reduced_costs=rc,
                          iterations=self.iterations, basis=basis)


def solve_revised(problem: LpProblem, basis: Basis | None = None, **opts) -> LpSolution:
    return RevisedSimplex(problem, **opts).solve(basis=basis)
