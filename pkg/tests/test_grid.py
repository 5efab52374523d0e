import math
import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import branch, bus, three_bus_grid, gen, two_bus
from topocand.grid import (PQ, SLACK, CaseParseError, Grid, GridValidationError, Load, Shunt, bundled_case,
                           count_elements, grid_from_json, grid_to_json, load_case, parse_matpower, resolve_case,
                           validate_grid)

TWO_BUS_CASE = """
function mpc = tiny
mpc.baseMVA = 100;
mpc.bus = [
 1 3 0  0  0 0 1 1.0 0 230 1 1.1 0.9;
 2 1 50 10 0 0 1 1.0 0 230 1 1.1 0.9;
];
mpc.gen = [
 1 0 0 50 -50 1.0 100 1 100 0;
];
mpc.branch = [
 1 2 0.01 0.1 0.02 120 120 120 0 0 1 -30 30;
];
mpc.gencost = [
 2 0 0 3 0.01 20 5;
];
"""


@pytest.mark.parametrize("name,counts", [
    ("pglib_opf_case39_epri", (39, 46, 10, 21)),
    ("pglib_opf_case118_ieee", (118, 186, 54, 99)),
])
def test_pglib_dimensions(name, counts):
    g = load_case(resolve_case(name))
    assert (len(g.buses), len(g.branches), len(g.generators), len(g.loads)) == counts


def test_two_bus_text_counts_and_units():
    g = parse_matpower(TWO_BUS_CASE)
    assert (len(g.buses), len(g.branches), len(g.generators), len(g.loads)) == (2, 1, 1, 1)
    assert g.loads[0].pd == pytest.approx(0.5)
    assert g.branches[0].rate_a == pytest.approx(1.2)
    assert g.branches[0].ang_max == pytest.approx(math.radians(30))
    assert g.generators[0].cost.evaluate(10.0) == pytest.approx(0.01 * 100 + 200 + 5)
    assert g.slack_bus == 1


def test_malformed_row_reports_line():
    bad = TWO_BUS_CASE.replace("2 1 50 10 0 0 1 1.0 0 230 1 1.1 0.9;", "2 1 50 x 0 0 1 1.0 0 230 1 1.1 0.9;")
    with pytest.raises(CaseParseError) as info:
        parse_matpower(bad)
    assert info.value.line == 6


def test_dangling_reference_is_validation_error():
    bad = TWO_BUS_CASE.replace(" 1 2 0.01", " 1 7 0.01")
    with pytest.raises(GridValidationError):
        parse_matpower(bad)


def test_count_elements_examples(case118):
    g = three_bus_grid()
    c = count_elements(g, 2)
    assert (c.n_branches, c.n_elements) == (2, 4)
    c = count_elements(case118, 69)
    assert (c.n_branches, c.n_elements) == (6, 7)
    lone = Grid(100.0, (bus(1, SLACK), bus(2)), (), (gen(1, 1, 1.0),))
    assert count_elements(lone, 2).n_elements == 0
    with pytest.raises(KeyError):
        count_elements(lone, 99)


def test_validate_examples(case39):
    assert validate_grid(case39).ok
    g = two_bus()
    bad = Grid(g.base_mva, g.buses, g.branches + (branch(9, 1, 999),), g.generators, g.loads)
    rep = validate_grid(bad)
    assert len(rep) == 1 and rep.violations[0].kind == "reference"
    bad = Grid(g.base_mva, g.buses, g.branches, (gen(1, 1, 1.0, pmin=5.0, pmax=1.0),), g.loads)
    rep = validate_grid(bad)
    assert len(rep) == 1 and rep.violations[0].kind == "bound"


def test_json_round_trip(case118):
    assert grid_from_json(grid_to_json(case118)) == case118


def _raw_bus_rows(text):
    block = re.search(r"mpc\.bus\s*=\s*\[(.*?)\]", text, re.S).group(1)
    rows = []
    for line in block.splitlines():
        line = line.split("%")[0].strip().rstrip(";")
        if line:
            rows.append([float(t) for t in line.split()])
    return rows


@pytest.mark.parametrize("name", ["pglib_opf_case39_epri", "pglib_opf_case118_ieee"])
def test_per_unit_consistency(name):
    path = bundled_case(name)
    g = load_case(path)
    base = g.base_mva
    mw = {int(r[0]): r[2] for r in _raw_bus_rows(path.read_text()) if r[2] or r[3]}
    assert {ld.bus for ld in g.loads} == set(mw)
    for ld in g.loads:
        assert ld.pd * base == pytest.approx(mw[ld.bus], rel=1e-9, abs=1e-12)


def test_element_count_sum(case118):
    total = sum(count_elements(case118, b).n_elements for b in case118.bus_ids)
    n_br = sum(1 for br in case118.branches if br.in_service)
    others = len(case118.generators) + len(case118.loads) + len(case118.shunts)
    assert total == 2 * n_br + others


@st.composite
def random_grids(draw):
    n = draw(st.integers(2, 8))
    buses = tuple(bus(i + 1, SLACK if i == 0 else PQ) for i in range(n))
    brs = []
    for k in range(draw(st.integers(1, 12))):
        f = draw(st.integers(1, n))
        t = draw(st.integers(1, n).filter(lambda v: v != f))
        brs.append(branch(k + 1, f, t, r=draw(st.floats(0, 0.1)), x=draw(st.floats(0.01, 0.5)),
                          rate=draw(st.floats(0, 5))))
    gens = tuple(gen(k + 1, draw(st.integers(1, n)), draw(st.floats(0, 50))) for k in range(draw(st.integers(1, 3))))
    loads = tuple(Load(k + 1, draw(st.integers(1, n)), draw(st.floats(0, 2)), draw(st.floats(-1, 1)))
                  for k in range(draw(st.integers(0, 4))))
    shunts = tuple(Shunt(k + 1, draw(st.integers(1, n)), 0.0, draw(st.floats(-0.5, 0.5)))
                   for k in range(draw(st.integers(0, 2))))
    return Grid(100.0, buses, tuple(brs), gens, loads, shunts, name="random")


@settings(max_examples=60, deadline=None)
@given(random_grids())
def test_round_trip_and_counts_property(g):
    assert grid_from_json(grid_to_json(g)) == g
    total = sum(count_elements(g, b).n_elements for b in g.bus_ids)
    assert total == 2 * len(g.branches) + len(g.generators) + len(g.loads) + len(g.shunts)
    for b in g.bus_ids:
        c = count_elements(g, b)
        assert c.n_elements >= c.n_branches >= 0


def test_voltage_band_override(case39):
    g = case39.with_voltage_band(0.9, 1.1)
    assert all((b.vmin, b.vmax) == (0.9, 1.1) for b in g.buses)
    with pytest.raises(ValueError):
        case39.with_voltage_band(1.1, 0.9)
