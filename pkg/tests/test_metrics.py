import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import branch, bus, gen, two_bus
from topocand.grid import PQ, SLACK, Grid
from topocand.lpac import OpfSolution, solve_lpac_opf
from topocand.metrics import (MetricRecord, MetricTable, SelectionPolicy, metric_table, phi_metric, rank_by_phi,
                              select_candidates, table_from_csv, table_to_csv, xi_metric, zeta_metric)
from topocand.pipeline import validate_fixtures


def star_grid(n_leaves=3, rates=None):
    """Bus 1 in the middle, leaves 2..n+1, plus an isolated bus at the end."""
    n = n_leaves + 2
    buses = tuple(bus(i, SLACK if i == 1 else PQ) for i in range(1, n + 1))
    rates = rates or [0.0] * n_leaves
    brs = tuple(branch(k, 1, k + 1, rate=rates[k - 1], angmin=-0.5, angmax=0.5) for k in range(1, n_leaves + 1))
    return Grid(100.0, buses, brs, (gen(1, 1, 1.0),))


def fake_solution(grid, lmp, flows=None, vm=None, va=None):
    ids = grid.bus_ids
    return OpfSolution(objective=0.0, dispatch={}, angles=va or {b: 0.0 for b in ids},
                       vmags=vm or {b: 1.0 for b in ids},
                       flows=flows or {br.id: (0.0, 0.0, 0.0, 0.0) for br in grid.branches},
                       lmp=lmp, q_lmp={b: 0.0 for b in ids}, binding={})


def test_phi_examples():
    g = star_grid(2)
    sol = fake_solution(g, {1: 10.0, 2: 12.0, 3: 9.0, 4: 50.0})
    assert phi_metric(g, sol, 1) == pytest.approx(3.0)
    assert phi_metric(g, sol, 4) == 0.0
    with pytest.raises(KeyError):
        phi_metric(g, sol, 99)


def test_xi_example():
    g = star_grid(2, rates=[1.0, 1.0])
    flows = {1: (0.9, 0.0, -0.9, 0.0), 2: (0.3, 0.4, -0.3, -0.4)}
    sol = fake_solution(g, {b: 0.0 for b in g.bus_ids}, flows=flows)
    assert xi_metric(g, sol, 1) == 1
    assert xi_metric(g, sol, 1, threshold=0.4) == 2
    assert xi_metric(g, sol, 4) == 0
    with pytest.raises(ValueError):
        xi_metric(g, sol, 1, threshold=0.0)
    unlimited = star_grid(2)
    assert xi_metric(unlimited, fake_solution(unlimited, sol.lmp, flows=flows), 1) == 0


def test_zeta_examples():
    g = star_grid(2)
    lmp = {b: 0.0 for b in g.bus_ids}
    assert zeta_metric(g, fake_solution(g, lmp), 1) == ()
    vm = {b: 1.0 for b in g.bus_ids}
    vm[2] = 1.1
    vm[3] = 0.9
    sol = fake_solution(g, lmp, vm=vm)
    assert zeta_metric(g, sol, 2) == ("vmag-upper",)
    assert zeta_metric(g, sol, 3) == ("vmag-lower",)
    va = {b: 0.0 for b in g.bus_ids}
    va[1] = 0.5
    sol = fake_solution(g, lmp, va=va)
    assert zeta_metric(g, sol, 1) == ("angle-diff",)
    assert zeta_metric(g, sol, 2) == ("angle-diff",)
    assert zeta_metric(g, sol, 4) == ()
    with pytest.raises(ValueError):
        zeta_metric(g, sol, 1, tol=0.0)


def test_uniform_price_two_bus_ranks():
    g = two_bus()
    table = metric_table(g, solve_lpac_opf(g))
    assert [(r.bus, r.phi_rank) for r in table] == [(1, 1), (2, 2)]
    assert all(r.phi == pytest.approx(0.0, abs=1e-9) for r in table)


def test_rank_ties_break_by_id():
    assert rank_by_phi({5: 1.0, 3: 1.0, 7: 2.0}) == {7: 1, 3: 2, 5: 3}


def test_bus69_metrics(case118, opf118):
    table = metric_table(case118, opf118)
    rec = table.by_bus()[69]
    assert rec.phi_rank == 1 and rec.xi == 2
    assert (rec.n_branches, rec.n_elements) == (6, 7)
    for r in table:
        assert r.phi >= 0 and r.xi <= r.n_branches
    assert sorted(r.phi_rank for r in table) == list(range(1, 119))


def test_published_fixtures():
    checks = {c.name: c for c in validate_fixtures()}
    for name, size in (("case793_published", 15), ("case3374_published", 20)):
        c = checks[name]
        assert c.ok, c.diff()
        assert len(c.selected) == size == len(c.expected)
    assert checks["case793_published"].selected[:4] == [693, 470, 406, 649]


def record(b, phi, rank, xi=0, zeta=(), nb=4, ne=4):
    return MetricRecord(b, phi, rank, xi, tuple(zeta), nb, ne)


def test_empty_and_single_bus_policies():
    table = MetricTable([record(1, 5.0, 1), record(2, 1.0, 2)])
    assert select_candidates(table, SelectionPolicy.empty()) == []
    single = MetricTable([record(1, 5.0, 1, ne=2, nb=2)])
    assert select_candidates(single, SelectionPolicy(min_elements=3, top_k_elements=0)) == []
    with pytest.raises(ValueError):
        select_candidates(MetricTable([]), SelectionPolicy())
    with pytest.raises(ValueError):
        SelectionPolicy(top_k_phi=-1)


def test_selection_order_and_filters():
    recs = [record(10, 9.0, 1), record(11, 8.0, 2, xi=2), record(12, 7.0, 3, zeta=("vmag-upper",)),
            record(15, 6.5, 4, ne=9, nb=8), record(13, 6.0, 5, ne=3), record(14, 1.0, 6, ne=9, nb=8)]
    table = MetricTable(recs)
    pol = SelectionPolicy(top_k_phi=4, min_elements=4, max_xi=1, top_k_elements=2)
    # mean phi is 6.25, so bus 14 is outside group (b)
    assert select_candidates(table, pol) == [10, 15]
    loose = SelectionPolicy(top_k_phi=4, min_elements=3, max_xi=2, require_zeta_empty=False, top_k_elements=2,
                            phi_above_mean=False)
    assert select_candidates(table, loose) == [10, 11, 12, 15, 14]


def test_csv_round_trip(case39, opf39):
    table = metric_table(case39, opf39).with_cost_decrease({2: 0.25})
    text = table_to_csv(table)
    assert text.splitlines()[0] == "bus,phi,phi_rank,n_branches,xi,n_elements,zeta,cost_decrease_pct"
    back = table_from_csv(text)
    assert table_to_csv(back) == text
    assert back.by_bus()[2].cost_decrease_pct == 0.25
    with pytest.raises(ValueError):
        table_from_csv("bus,phi\n1,2\n")


# ---- properties ---------------------------------------------------------------------------------------

lmp_values = st.lists(st.floats(-100, 100, allow_nan=False), min_size=5, max_size=5)


@settings(max_examples=80, deadline=None)
@given(lmp_values, st.floats(0.01, 100))
def test_phi_scale_covariance(values, c):
    g = star_grid(3)
    lmp = dict(zip(g.bus_ids, values))
    sol = fake_solution(g, lmp)
    scaled = fake_solution(g, {b: c * v for b, v in lmp.items()})
    for b in g.bus_ids:
        assert phi_metric(g, scaled, b) == pytest.approx(c * phi_metric(g, sol, b), rel=1e-9, abs=1e-9)
    ranks = rank_by_phi({b: phi_metric(g, sol, b) for b in g.bus_ids})
    ranks_c = rank_by_phi({b: phi_metric(g, scaled, b) for b in g.bus_ids})
    gaps = sorted(phi_metric(g, sol, b) for b in g.bus_ids)
    if min(b - a for a, b in zip(gaps, gaps[1:])) > 1e-6:
        assert ranks == ranks_c


@settings(max_examples=80, deadline=None)
@given(lmp_values, st.floats(-100, 100))
def test_phi_locality(values, new):
    g = star_grid(3)
    lmp = dict(zip(g.bus_ids, values))
    before = phi_metric(g, fake_solution(g, lmp), 2)
    # bus 3 and bus 5 are not adjacent to leaf bus 2
    for far in (3, 5):
        moved = dict(lmp)
        moved[far] = new
        assert phi_metric(g, fake_solution(g, moved), 2) == before


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1.5), min_size=3, max_size=3), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_xi_monotone_in_threshold(utils, t1, t2):
    lo, hi = sorted((t1, t2))
    g = star_grid(3, rates=[1.0, 1.0, 1.0])
    flows = {k + 1: (u, 0.0, -u, 0.0) for k, u in enumerate(utils)}
    sol = fake_solution(g, {b: 0.0 for b in g.bus_ids}, flows=flows)
    for b in g.bus_ids:
        assert xi_metric(g, sol, b, lo) >= xi_metric(g, sol, b, hi)


@st.composite
def tables(draw):
    n = draw(st.integers(1, 12))
    phis = draw(st.lists(st.floats(0, 1000), min_size=n, max_size=n))
    ranks = rank_by_phi(dict(enumerate(phis, 1)))
    recs = []
    for b, phi in enumerate(phis, 1):
        nb = draw(st.integers(0, 6))
        recs.append(MetricRecord(b, phi, ranks[b], draw(st.integers(0, nb)),
                                 draw(st.sampled_from([(), ("vmag-upper",)])), nb, nb + draw(st.integers(0, 3))))
    return MetricTable(recs)


@st.composite
def policies(draw):
    return SelectionPolicy(draw(st.integers(0, 8)), draw(st.integers(0, 6)), draw(st.integers(0, 3)),
                           draw(st.booleans()), draw(st.integers(0, 8)), draw(st.booleans()))


@settings(max_examples=100, deadline=None)
@given(tables(), policies())
def test_selection_is_pure_and_sound(table, policy):
    snapshot = [dataclasses.replace(r) for r in table]
    out = select_candidates(table, policy)
    assert out == select_candidates(table, policy)
    assert list(table) == snapshot
    assert len(out) == len(set(out))
    by_bus = table.by_bus()
    for b in out:
        r = by_bus[b]
        assert r.xi <= policy.max_xi
        assert not (policy.require_zeta_empty and r.zeta_flags)
