"""Shared fixtures: toy grids built in code and cached bundled cases."""

from __future__ import annotations

import functools

import pytest

from topocand.grid import PQ, SLACK, Branch, Bus, GenCost, Generator, Grid, Load, Shunt, load_case, resolve_case
from topocand.lpac import solve_lpac_opf


def bus(i, role=PQ, vmin=0.9, vmax=1.1):
    return Bus(id=i, role=role, vmin=vmin, vmax=vmax, base_kv=230.0)


def branch(i, f, t, r=0.0, x=0.1, b=0.0, rate=0.0, tap=1.0, shift=0.0, angmin=-1.0, angmax=1.0):
    return Branch(id=i, from_bus=f, to_bus=t, r=r, x=x, b_charge=b, rate_a=rate, tap=tap, shift=shift,
                  ang_min=angmin, ang_max=angmax)


def gen(i, b, marginal, pmax=10.0, pmin=0.0, qmin=-10.0, qmax=10.0, vg=1.0):
    return Generator(id=i, bus=b, pmin=pmin, pmax=pmax, qmin=qmin, qmax=qmax, cost=GenCost(2, (marginal, 0.0)),
                     vg=vg)


def two_bus(rate=0.0, load=1.0, cheap=10.0, dear=None, r=0.0, b=0.0):
    """Slack bus 1 with a cheap unit, load at bus 2, optional local unit at bus 2."""
    gens = [gen(1, 1, cheap)]
    if dear is not None:
        gens.append(gen(2, 2, dear))
    return Grid(base_mva=100.0, buses=(bus(1, SLACK), bus(2)), branches=(branch(1, 1, 2, r=r, b=b, rate=rate),),
                generators=tuple(gens), loads=(Load(1, 2, load, 0.0),), name="two_bus")


def three_bus_grid():
    """Bus 2 carries two branches, one generator and one load."""
    buses = (bus(1, SLACK), bus(2), bus(3))
    branches = (branch(1, 1, 2, r=0.01, rate=2.0), branch(2, 2, 3, r=0.01, rate=2.0), branch(3, 1, 3, r=0.01, rate=2.0))
    gens = (gen(1, 1, 10.0), gen(2, 2, 30.0, pmax=1.0))
    loads = (Load(1, 2, 0.8, 0.1), Load(2, 3, 0.6, 0.1))
    return Grid(base_mva=100.0, buses=buses, branches=branches, generators=gens, loads=loads, name="fig1")


@functools.lru_cache(maxsize=None)
def cached_case(name: str) -> Grid:
    return load_case(resolve_case(name))


@functools.lru_cache(maxsize=None)
def cached_opf(name: str):
    return solve_lpac_opf(cached_case(name))


@pytest.fixture(scope="session")
def case39():
    return cached_case("pglib_opf_case39_epri")


@pytest.fixture(scope="session")
def case118():
    return cached_case("pglib_opf_case118_ieee")


@pytest.fixture(scope="session")
def opf39():
    return cached_opf("pglib_opf_case39_epri")


@pytest.fixture(scope="session")
def opf118():
    return cached_opf("pglib_opf_case118_ieee")


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def report(criterion: str, ok: bool, detail: str) -> bool:
    line = f"{criterion} {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)


__all__ = ["report", "bus", "branch", "gen", "two_bus", "three_bus_grid", "cached_case", "cached_opf", "Shunt", "Load"]
