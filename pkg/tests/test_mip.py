import itertools
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from topocand import _kernels as K
from topocand._kernels import _py
from topocand.mip import (EQ, GE, INFEASIBLE, LE, NODE_LIMIT, OPTIMAL, UNBOUNDED, LpBuilder, LpProblem,
                          enumerate_exhaustive, solve_lp, solve_milp, write_lp)
from topocand.mip.bnb import MAX_ENUM_BINARIES
from topocand.mip.tableau import tableau_simplex


def lp(c, rows, lb, ub, c0=0.0):
    """rows: list of (coeff list, sense, rhs)."""
    A = np.array([r[0] for r in rows], dtype=float).reshape(len(rows), len(c))
    return LpProblem(c=np.array(c, float), A=A, sense=tuple(r[1] for r in rows), rhs=np.array([r[2] for r in rows]),
                     lb=np.array(lb, float), ub=np.array(ub, float), c0=c0)


def random_lp(rng, m=20, n=40):
    A = rng.normal(size=(m, n)) * (rng.random((m, n)) < 0.4)
    lb = -rng.random(n) * 5
    ub = rng.random(n) * 5 + 1
    x0 = lb + (ub - lb) * rng.random(n)
    ax = A @ x0
    sense = tuple(rng.choice([LE, GE, EQ], size=m, p=[0.45, 0.45, 0.1]))
    rhs = np.array([ax[i] + (rng.random() if s == LE else -rng.random() if s == GE else 0.0)
                    for i, s in enumerate(sense)])
    return LpProblem(c=rng.normal(size=n), A=A, sense=sense, rhs=rhs, lb=lb, ub=ub)


def dual_objective(p, sol):
    d = p.c - p.A.T @ sol.duals
    bound = np.where(d > 0, p.lb, p.ub)
    bound = np.where(np.abs(d) <= 1e-12, 0.0, bound)
    return float(p.rhs @ sol.duals + d @ bound + p.c0)


# ---- LP examples ------------------------------------------------------------------------------------

@pytest.mark.parametrize("engine", ["revised", "highs"])
def test_single_variable_ge_row(engine):
    sol = solve_lp(lp([1.0], [([1.0], GE, 3.0)], [0], [10]), engine=engine)
    assert sol.status == OPTIMAL
    assert sol.x[0] == pytest.approx(3.0)
    assert sol.objective == pytest.approx(3.0)
    assert sol.duals[0] == pytest.approx(1.0)


@pytest.mark.parametrize("engine", ["revised", "highs"])
def test_symmetric_le_row(engine):
    sol = solve_lp(lp([-1.0, -1.0], [([1.0, 1.0], LE, 1.0)], [0, 0], [1, 1]), engine=engine)
    assert sol.objective == pytest.approx(-1.0)
    assert sol.duals[0] == pytest.approx(-1.0)


def test_equality_dual_is_rhs_sensitivity():
    p = lp([2.0, 3.0], [([1.0, 1.0], EQ, 4.0)], [0, 0], [10, 10])
    sol = solve_lp(p)
    bumped = solve_lp(lp([2.0, 3.0], [([1.0, 1.0], EQ, 4.5)], [0, 0], [10, 10]))
    assert sol.duals[0] == pytest.approx(2.0)
    assert (bumped.objective - sol.objective) / 0.5 == pytest.approx(sol.duals[0])


def test_statuses():
    assert solve_lp(lp([1.0], [([1.0], GE, 3.0)], [0], [2])).status == INFEASIBLE
    assert solve_lp(lp([-1.0], [([1.0], GE, 3.0)], [0], [np.inf])).status == UNBOUNDED
    free = solve_lp(lp([1.0, 0.0], [], [-1, -np.inf], [1, np.inf]))
    assert free.status == OPTIMAL and free.objective == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        solve_lp(lp([1.0], [], [0], [1]), engine="nope")


@pytest.mark.parametrize("seed", range(8))
def test_random_lp_matches_tableau_oracle(seed):
    rng = np.random.default_rng(seed)
    p = random_lp(rng)
    status, x_ref, obj_ref = tableau_simplex(p)
    sol = solve_lp(p)
    assert status == OPTIMAL and sol.status == OPTIMAL
    assert sol.objective == pytest.approx(obj_ref, rel=1e-7, abs=1e-7)
    assert np.max(p.residuals(sol.x)) <= 1e-7
    assert np.all(sol.x >= p.lb - 1e-7) and np.all(sol.x <= p.ub + 1e-7)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12), st.integers(2, 16))
def test_kkt_and_weak_duality_property(seed, m, n):
    rng = np.random.default_rng(seed)
    p = random_lp(rng, m, n)
    sol = solve_lp(p)
    assert sol.status == OPTIMAL
    assert np.max(p.residuals(sol.x), initial=0.0) <= 1e-7
    dual = dual_objective(p, sol)
    assert dual == pytest.approx(sol.objective, rel=1e-6, abs=1e-6)
    slack = p.A @ sol.x - p.rhs
    assert np.max(np.abs(sol.duals * slack), initial=0.0) <= 1e-6
    sense = np.asarray(p.sense)
    assert np.all(sol.duals[sense == LE] <= 1e-9) and np.all(sol.duals[sense == GE] >= -1e-9)
    ref = solve_lp(p, engine="highs")
    assert ref.objective == pytest.approx(sol.objective, rel=1e-7, abs=1e-7)


def test_write_lp_prints_17_digits():
    b = LpBuilder()
    x = b.add_var("x", 0, 1, cost=0.1)
    y = b.add_var("y", binary=True)
    b.add_row({x: 1.0 / 3.0, y: 1.0}, LE, 1.0, "cap")
    text = write_lp(b.build_milp())
    assert "0.10000000000000001 x" in text
    assert "0.33333333333333331 x" in text
    assert "Binaries" in text and " y" in text


# ---- branch-and-bound -------------------------------------------------------------------------------

def knapsack(values, weights, cap):
    b = LpBuilder()
    z = [b.add_var(f"z{i}", binary=True, cost=-v) for i, v in enumerate(values)]
    b.add_row(dict(zip(z, weights)), LE, cap, "cap")
    return b.build_milp()


def brute_knapsack(values, weights, cap):
    best = 0.0
    for pick in itertools.product((0, 1), repeat=len(values)):
        if np.dot(pick, weights) <= cap:
            best = max(best, float(np.dot(pick, values)))
    return -best


def test_knapsack_matches_subset_enumeration():
    values, weights = [10, 13, 7, 8, 4], [5, 6, 3, 4, 2]
    sol = solve_milp(knapsack(values, weights, 10))
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(brute_knapsack(values, weights, 10))
    assert sol.objective >= sol.best_bound - 1e-9


def test_integral_root_needs_no_branching():
    b = LpBuilder()
    z = b.add_var("z", binary=True, cost=1.0)
    b.add_row({z: 1.0}, GE, 1.0)
    sol = solve_milp(b.build_milp())
    assert sol.status == OPTIMAL and sol.nodes == 0 and sol.x[z] == 1.0


def test_infeasible_and_node_limit():
    b = LpBuilder()
    z = [b.add_var(f"z{i}", binary=True) for i in range(2)]
    b.add_row({z[0]: 1.0, z[1]: 1.0}, GE, 3.0)
    assert solve_milp(b.build_milp()).status == INFEASIBLE
    rng = np.random.default_rng(3)
    values, weights = rng.integers(5, 30, 14), rng.integers(3, 15, 14)
    sol = solve_milp(knapsack(values, weights, 40), gap=0.0, node_limit=2)
    assert sol.status == NODE_LIMIT
    assert sol.nodes <= 2 + 1


def random_milp(rng, k, n_cont=4, m=5):
    b = LpBuilder()
    zs = [b.add_var(f"z{i}", binary=True, cost=float(rng.normal())) for i in range(k)]
    xs = [b.add_var(f"x{i}", 0.0, 5.0, cost=float(rng.normal())) for i in range(n_cont)]
    for _ in range(m):
        terms = {j: float(rng.normal()) for j in zs + xs if rng.random() < 0.6}
        b.add_row(terms, LE, float(rng.random() * 3 + 0.5))
    return b.build_milp()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 8))
def test_bnb_matches_enumeration_property(seed, k):
    prob = random_milp(np.random.default_rng(seed), k)
    ref = enumerate_exhaustive(prob)
    sol = solve_milp(prob, gap=1e-4)
    assert ref.status == sol.status == OPTIMAL
    assert abs(sol.objective - ref.objective) <= 1e-4 * max(abs(ref.objective), 1e-10) + 1e-9
    bounds = [r.best_bound for r in sol.node_log]
    assert all(a <= b + 1e-12 for a, b in zip(bounds, bounds[1:]))


def test_bnb_is_deterministic():
    prob = random_milp(np.random.default_rng(11), 10)
    a, b = solve_milp(prob), solve_milp(prob)
    assert a.nodes == b.nodes and np.array_equal(a.x, b.x)


def test_incumbent_is_used():
    values, weights = [10, 13, 7, 8, 4], [5, 6, 3, 4, 2]
    prob = knapsack(values, weights, 10)
    start = np.zeros(prob.base.n_vars)
    sol = solve_milp(prob, incumbent=start)
    assert sol.objective == pytest.approx(brute_knapsack(values, weights, 10))


# ---- enumeration ------------------------------------------------------------------------------------

def test_enumeration_without_binaries_is_lp():
    b = LpBuilder()
    x = b.add_var("x", 0, 10, cost=1.0)
    b.add_row({x: 1.0}, GE, 3.0)
    prob = b.build_milp()
    sol = enumerate_exhaustive(prob)
    assert sol.status == OPTIMAL and sol.objective == pytest.approx(solve_lp(prob.base).objective)


def test_enumeration_skips_infeasible_assignment():
    b = LpBuilder()
    z1 = b.add_var("z1", binary=True, cost=-3.0)
    z2 = b.add_var("z2", binary=True, cost=-2.0)
    x = b.add_var("x", 0, 1, cost=0.0)
    b.add_row({z1: 1.0, z2: 1.0, x: 1.0}, LE, 1.5)
    sol = enumerate_exhaustive(b.build_milp(), screen=False)
    assert sol.objective == pytest.approx(-3.0)
    assert sol.lp_solves == 4


def test_enumeration_guard():
    b = LpBuilder()
    for i in range(MAX_ENUM_BINARIES + 1):
        b.add_var(f"z{i}", binary=True)
    with pytest.raises(ValueError):
        enumerate_exhaustive(b.build_milp())


# ---- kernel backends --------------------------------------------------------------------------------

def _compiled():
    try:
        from topocand._kernels import _ckernels
    except ImportError:
        pytest.skip("compiled kernels not built")
    return _ckernels


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_kernel_backends_agree(seed):
    ck = _compiled()
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 12))
    d = rng.normal(size=m)
    state = rng.integers(0, 5, size=m).astype(np.int8)
    for bland in (False, True):
        assert ck.price(d, state, 1e-9, bland) == _py.price(d, state, 1e-9, bland)
    x = rng.normal(size=m)
    lo, hi = x - rng.random(m), x + rng.random(m)
    lo[0] = -np.inf
    delta = rng.normal(size=m)
    for bland in (False, True):
        a, b = ck.primal_ratio(x, lo, hi, delta, 1e-9, 1e-9, bland), _py.primal_ratio(x, lo, hi, delta, 1e-9, 1e-9, bland)
        assert a[0] == b[0] and a[2] == b[2] and a[1] == pytest.approx(b[1])
    alpha = rng.normal(size=m)
    for sign in (-1, 1):
        assert ck.dual_ratio(d, alpha, state, sign, 1e-9, 1e-9) == _py.dual_ratio(d, alpha, state, sign, 1e-9, 1e-9)
    k = int(rng.integers(1, m + 1))
    rows = np.ascontiguousarray(rng.normal(size=(k, m)))
    rowidx = rng.integers(0, m, size=k).astype(np.int64)
    w1 = rng.normal(size=m)
    w2 = w1.copy()
    ck.ftran_etas(w1, rowidx, rows, k)
    _py.ftran_etas(w2, rowidx, rows, k)
    assert np.allclose(w1, w2)
    ck.btran_etas(w1, rowidx, rows, k)
    _py.btran_etas(w2, rowidx, rows, k)
    assert np.allclose(w1, w2)
    nb = int(rng.integers(1, 8))
    brow = np.ascontiguousarray(rng.integers(-1, 2, size=(3, nb)).astype(float))
    rhs = rng.integers(0, 2, size=3).astype(float)
    sense = rng.integers(-1, 2, size=3).astype(np.int8)
    assert np.array_equal(ck.binary_screen(brow, rhs, sense, nb), _py.binary_screen(brow, rhs, sense, nb))


def test_pure_python_backend_solves_same_lps():
    script = ("import numpy as np, sys; sys.path.insert(0, 'tests'); from test_mip import random_lp; "
              "from topocand.mip import solve_lp; from topocand import _kernels as K; "
              "print(K.BACKEND, *[repr(solve_lp(random_lp(np.random.default_rng(s))).objective) for s in range(4)])")
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, TOPOCAND_PURE_PYTHON=flag)
        res = subprocess.run([sys.executable, "-c", script], capture_output=True, text=True, env=env, cwd=root,
                             check=True)
        name, *vals = res.stdout.split()
        out[name] = [float(v) for v in vals]
    assert "python" in out
    if len(out) == 2:
        assert np.allclose(out["python"], out["cython"], rtol=1e-9, atol=1e-9)
    assert K.BACKEND in ("python", "cython")
