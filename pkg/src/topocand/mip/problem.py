"""LP/MILP containers, an incremental builder and LP-format export."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

LE, EQ, GE = "<=", "==", ">="
_SENSES = (LE, EQ, GE)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
GAP_REACHED = "gap_reached"
NODE_LIMIT = "node_limit"


class SolverError(RuntimeError):
    """Numerical failure that survived the solver's refactorization retries."""


@dataclass
class LpProblem:
    """min c @ x + c0  s.t.  rows (A @ x  sense  rhs),  lb <= x <= ub."""

    c: np.ndarray
    A: sp.csr_matrix
    sense: tuple[str, ...]
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    names: tuple[str, ...] = ()
    row_names: tuple[str, ...] = ()
    c0: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        self.A = sp.csr_matrix(self.A, dtype=float)
        self.sense = tuple(self.sense)
        n = self.c.shape[0]
        m = self.rhs.shape[0]
        if self.A.shape != (m, n):
            raise ValueError(f"A has shape {self.A.shape}, expected {(m, n)}")
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ValueError("bound arrays must match the number of variables")
        if len(self.sense) != m or any(s not in _SENSES for s in self.sense):
            raise ValueError("one sense in {'<=', '==', '>='} required per row")
        if np.any(self.lb > self.ub):
            bad = int(np.flatnonzero(self.lb > self.ub)[0])
            raise ValueError(f"variable {self.var_name(bad)} has lower bound above upper bound")
        if not self.names:
            self.names = tuple(f"x{j}" for j in range(n))
        if not self.row_names:
            self.row_names = tuple(f"r{i}" for i in range(m))

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]

    @property
    def n_rows(self) -> int:
        return self.rhs.shape[0]

    def var_name(self, j: int) -> str:
        return self.names[j] if self.names else f"x{j}"

    def with_bounds(self, lb: np.ndarray, ub: np.ndarray) -> "LpProblem":
        out = object.__new__(LpProblem)
        out.__dict__.update(self.__dict__)
        out.lb = np.asarray(lb, dtype=float)
        out.ub = np.asarray(ub, dtype=float)
        return out

    def residuals(self, x: np.ndarray) -> np.ndarray:
        """Per-row violation (>= 0) of ``x``; bounds are not included."""
        ax = self.A @ x
        viol = np.zeros_like(ax)
        sense = np.asarray(self.sense)
        le, ge, eq = sense == LE, sense == GE, sense == EQ
        viol[le] = np.maximum(ax[le] - self.rhs[le], 0.0)
        viol[ge] = np.maximum(self.rhs[ge] - ax[ge], 0.0)
        viol[eq] = np.abs(ax[eq] - self.rhs[eq])
        return viol

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x + self.c0)


@dataclass
class LpSolution:
    status: str
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    objective: float = float("nan")
    reduced_costs: np.ndarray | None = None
    iterations: int = 0
    basis: object = None

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class MilpProblem:
    base: LpProblem
    integer_vars: np.ndarray

    def __post_init__(self):
        self.integer_vars = np.asarray(sorted(set(int(j) for j in self.integer_vars)), dtype=int)
        if self.integer_vars.size:
            if self.integer_vars.min() < 0 or self.integer_vars.max() >= self.base.n_vars:
                raise ValueError("integer variable index out of range")
            lo, hi = self.base.lb[self.integer_vars], self.base.ub[self.integer_vars]
            if np.any(lo < 0) or np.any(hi > 1):
                raise ValueError("integer variables must be binaries with bounds inside [0, 1]")


@dataclass
class NodeRecord:
    node: int
    depth: int
    bound: float
    best_bound: float
    incumbent: float
    status: str


@dataclass
class MilpSolution:
    status: str
    x: np.ndarray | None = None
    objective: float = float("inf")
    best_bound: float = -float("inf")
    gap: float = float("inf")
    nodes: int = 0
    lp_solves: int = 0
    node_log: list[NodeRecord] = field(default_factory=list)

    @property
    def has_incumbent(self) -> bool:
        return self.x is not None


def relative_gap(objective: float, bound: float) -> float:
    if not np.isfinite(objective):
        return float("inf")
    return max(objective - bound, 0.0) / max(abs(objective), 1e-10)


class LpBuilder:
    """Incremental row/column assembly into an :class:`LpProblem`."""

    def __init__(self):
        self._names: list[str] = []
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._c: list[float] = []
        self._rows: list[int] = []
        self._cols: list[int] = []
        self._vals: list[float] = []
        self._sense: list[str] = []
        self._rhs: list[float] = []
        self._row_names: list[str] = []
        self.c0 = 0.0
        self.integer: list[int] = []

    @property
    def n_vars(self) -> int:
        return len(self._names)

    @property
    def n_rows(self) -> int:
        return len(self._rhs)

    def add_var(self, name: str, lb: float = 0.0, ub: float = np.inf, cost: float = 0.0,
                binary: bool = False) -> int:
        j = len(self._names)
        self._names.append(name)
        self._lb.append(0.0 if binary else lb)
        self._ub.append(1.0 if binary else ub)
        self._c.append(cost)
        if binary:
            self.integer.append(j)
        return j

    def add_cost(self, j: int, cost: float) -> None:
        self._c[j] += cost

    def set_bounds(self, j: int, lb: float | None = None, ub: float | None = None) -> None:
        if lb is not None:
            self._lb[j] = lb
        if ub is not None:
            self._ub[j] = ub

    def add_row(self, terms: Mapping[int, float] | Iterable[tuple[int, float]], sense: str, rhs: float,
                name: str = "") -> int:
        i = len(self._rhs)
        items = terms.items() if isinstance(terms, Mapping) else terms
        for j, v in items:
            if v != 0.0:
                self._rows.append(i)
                self._cols.append(j)
                self._vals.append(float(v))
        self._sense.append(sense)
        self._rhs.append(float(rhs))
        self._row_names.append(name or f"r{i}")
        return i

    def build(self) -> LpProblem:
        n, m = len(self._names), len(self._rhs)
        A = sp.coo_matrix((self._vals, (self._rows, self._cols)), shape=(m, n)).tocsr()
        A.sum_duplicates()
        return LpProblem(c=np.array(self._c), A=A, sense=tuple(self._sense), rhs=np.array(self._rhs),
                         lb=np.array(self._lb), ub=np.array(self._ub), names=tuple(self._names),
                         row_names=tuple(self._row_names), c0=self.c0)

    def build_milp(self) -> MilpProblem:
        return MilpProblem(self.build(), np.array(self.integer, dtype=int))


def _num(v: float) -> str:
    return format(float(v), ".17g")


def _lp_name(name: str) -> str:
    bad = " :+-*/<>=[](){}^,;\\\"'"
    out = "".join("_" if ch in bad else ch for ch in name)
    if not out or out[0].isdigit() or out[0] in ".eE":
        out = "v_" + out
    return out


def _lin(terms: Sequence[tuple[str, float]]) -> str:
    parts = []
    for k, (name, v) in enumerate(terms):
        mag = _num(abs(v))
        if k == 0:
            parts.append(("-" if v < 0 else "") + f"{mag} {name}")
        else:
            parts.append(f"{'-' if v < 0 else '+'} {mag} {name}")
    return " ".join(parts)


def write_lp(problem: LpProblem | MilpProblem, name: str = "topocand") -> str:
    """Render a problem in CPLEX LP text format with 17 significant digits.

    Empty expressions use a placeholder ``__zero`` fixed at 0; a nonzero
    objective constant is carried by ``__one`` fixed at 1.
    """
    milp = problem if isinstance(problem, MilpProblem) else None
    lp = milp.base if milp else problem
    names = [_lp_name(n) for n in lp.names]
    need_zero = False
    out = [f"\\ {name}", "Minimize"]
    obj = [(names[j], lp.c[j]) for j in np.flatnonzero(lp.c)]
    if lp.c0:
        obj.append(("__one", lp.c0))
    if not obj:
        obj, need_zero = [("__zero", 0.0)], True
    out.append(" obj: " + _lin(obj))
    out.append("Subject To")
    A = lp.A.tocsr()
    op = {LE: "<=", GE: ">=", EQ: "="}
    for i in range(lp.n_rows):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        terms = [(names[j], v) for j, v in zip(A.indices[lo:hi], A.data[lo:hi])]
        if not terms:
            terms, need_zero = [("__zero", 0.0)], True
        out.append(f" {_lp_name(lp.row_names[i])}: {_lin(terms)} {op[lp.sense[i]]} {_num(lp.rhs[i])}")
    out.append("Bounds")
    if lp.c0:
        out.append(" __one = 1")
    if need_zero:
        out.append(" __zero = 0")
    for j, nm in enumerate(names):
        lo, hi = lp.lb[j], lp.ub[j]
        if np.isneginf(lo) and np.isposinf(hi):
            out.append(f" {nm} free")
        elif lo == hi:
            out.append(f" {nm} = {_num(lo)}")
        else:
            left = "-inf" if np.isneginf(lo) else _num(lo)
            right = "+inf" if np.isposinf(hi) else _num(hi)
            out.append(f" {left} <= {nm} <= {right}")
    if milp is not None and milp.integer_vars.size:
        out.append("Binaries")
        out.append(" " + " ".join(names[j] for j in milp.integer_vars))
    out.append("End")
    return "\n".join(out) + "\n"
