"""Immutable per-unit network model, Matpower case parsing and JSON snapshots."""

from __future__ import annotations

import json
import logging
import math
import re
from collections import defaultdict
from dataclasses import asdict, dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable

logger = logging.getLogger(__name__)

SLACK, PV, PQ = "slack", "pv", "pq"
_ROLE_FROM_TYPE = {1: PQ, 2: PV, 3: SLACK, 4: PQ}

# Matpower column positions (0-based) that this package consumes.
_BUS_COLS = 13
_GEN_COLS = 10
_BRANCH_COLS = 13


class CaseParseError(ValueError):
    """Raised for malformed case files; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class GridValidationError(ValueError):
    def __init__(self, report: "ValidationReport"):
        self.report = report
        super().__init__("; ".join(v.message for v in report.violations))


@dataclass(frozen=True)
class Bus:
    id: int
    role: str
    vmin: float
    vmax: float
    base_kv: float
    vm: float = 1.0
    va: float = 0.0
    in_service: bool = True


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charge: float
    rate_a: float
    tap: float = 1.0
    shift: float = 0.0
    ang_min: float = -2 * math.pi
    ang_max: float = 2 * math.pi
    in_service: bool = True

    @property
    def series_admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)


@dataclass(frozen=True)
class GenCost:
    """Generator cost in Matpower units (P in MW, cost in currency/h).

    ``model`` 2 holds polynomial coefficients, highest order first; model 1
    holds flattened (MW, cost) breakpoints.
    """

    model: int
    coeffs: tuple[float, ...]
    startup: float = 0.0
    shutdown: float = 0.0

    def evaluate(self, p_mw: float) -> float:
        if self.model == 2:
            value = 0.0
            for c in self.coeffs:
                value = value * p_mw + c
            return value
        xs, ys = self.coeffs[0::2], self.coeffs[1::2]
        for k in range(len(xs) - 1):
            if p_mw <= xs[k + 1] or k == len(xs) - 2:
                slope = (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k])
                return ys[k] + slope * (p_mw - xs[k])
        return ys[0]


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    pmin: float
    pmax: float
    qmin: float
    qmax: float
    cost: GenCost
    pg: float = 0.0
    qg: float = 0.0
    vg: float = 1.0
    in_service: bool = True


@dataclass(frozen=True)
class Load:
    id: int
    bus: int
    pd: float
    qd: float
    in_service: bool = True


@dataclass(frozen=True)
class Shunt:
    id: int
    bus: int
    gs: float
    bs: float
    in_service: bool = True


@dataclass(frozen=True)
class ElementCount:
    bus: int
    n_branches: int
    n_elements: int


@dataclass(frozen=True)
class Violation:
    kind: str
    element: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self) -> int:
        return len(self.violations)


@dataclass(frozen=True)
class Grid:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...] = ()
    shunts: tuple[Shunt, ...] = ()
    name: str = ""

    def __post_init__(self):
        for attr in ("buses", "branches", "generators", "loads", "shunts"):
            value = getattr(self, attr)
            if not isinstance(value, tuple):
                object.__setattr__(self, attr, tuple(value))

    @cached_property
    def bus_ids(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.buses)

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    @cached_property
    def bus_by_id(self) -> dict[int, Bus]:
        return {b.id: b for b in self.buses}

    @cached_property
    def slack_bus(self) -> int:
        slack = [b.id for b in self.buses if b.role == SLACK]
        if len(slack) != 1:
            raise GridValidationError(validate_grid(self))
        return slack[0]

    @cached_property
    def _incidence(self) -> dict[str, dict[int, list]]:
        inc: dict[str, dict[int, list]] = {k: defaultdict(list) for k in ("branch", "gen", "load", "shunt")}
        for br in self.branches:
            if br.in_service:
                inc["branch"][br.from_bus].append(br)
                if br.to_bus != br.from_bus:
                    inc["branch"][br.to_bus].append(br)
        for key, items in (("gen", self.generators), ("load", self.loads), ("shunt", self.shunts)):
            for el in items:
                if el.in_service:
                    inc[key][el.bus].append(el)
        return inc

    def branches_at(self, bus: int) -> list[Branch]:
        return list(self._incidence["branch"].get(bus, ()))

    def generators_at(self, bus: int) -> list[Generator]:
        return list(self._incidence["gen"].get(bus, ()))

    def loads_at(self, bus: int) -> list[Load]:
        return list(self._incidence["load"].get(bus, ()))

    def shunts_at(self, bus: int) -> list[Shunt]:
        return list(self._incidence["shunt"].get(bus, ()))

    def neighbors(self, bus: int) -> list[int]:
        out = []
        for br in self.branches_at(bus):
            other = br.to_bus if br.from_bus == bus else br.from_bus
            if other not in out:
                out.append(other)
        return out

    def with_ratings(self, rate_a: float | None = None, **branch_changes) -> "Grid":
        """Copy with every branch updated (used for relaxed-limit studies)."""
        changes = dict(branch_changes)
        if rate_a is not None:
            changes["rate_a"] = rate_a
        return replace(self, branches=tuple(replace(br, **changes) for br in self.branches))

    def with_voltage_band(self, vmin: float, vmax: float) -> "Grid":
        """Copy with every bus held to the same magnitude band."""
        if not 0 < vmin < vmax:
            raise ValueError(f"invalid voltage band [{vmin}, {vmax}]")
        return replace(self, buses=tuple(replace(b, vmin=vmin, vmax=vmax) for b in self.buses))


def count_elements(grid: Grid, bus: int) -> ElementCount:
    if bus not in grid.bus_index:
        raise KeyError(f"unknown bus id {bus}")
    n_br = len(grid.branches_at(bus))
    n_other = len(grid.generators_at(bus)) + len(grid.loads_at(bus)) + len(grid.shunts_at(bus))
    return ElementCount(bus=bus, n_branches=n_br, n_elements=n_br + n_other)


def validate_grid(grid: Grid) -> ValidationReport:
    out: list[Violation] = []
    if not grid.base_mva > 0:
        out.append(Violation("bound", "grid", f"base_mva must be positive, got {grid.base_mva}"))
    ids = [b.id for b in grid.buses]
    known = set(ids)
    if len(known) != len(ids):
        out.append(Violation("reference", "grid", "duplicate bus ids"))
    n_slack = sum(1 for b in grid.buses if b.role == SLACK)
    if n_slack != 1:
        out.append(Violation("slack", "grid", f"expected exactly one slack bus, found {n_slack}"))
    for b in grid.buses:
        if b.role not in (SLACK, PV, PQ):
            out.append(Violation("bound", f"bus {b.id}", f"unknown role {b.role!r}"))
        if not 0 < b.vmin <= b.vmax:
            out.append(Violation("bound", f"bus {b.id}", f"voltage bounds {b.vmin}..{b.vmax} invalid"))
    for br in grid.branches:
        tag = f"branch {br.id}"
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                out.append(Violation("reference", tag, f"{tag} references missing bus {end}"))
        if br.in_service and br.x == 0 and br.r == 0:
            out.append(Violation("bound", tag, f"{tag} has zero impedance"))
        if br.rate_a < 0:
            out.append(Violation("bound", tag, f"{tag} has negative rate_a"))
        if not br.ang_min <= 0 <= br.ang_max:
            out.append(Violation("bound", tag, f"{tag} angle bounds must bracket 0"))
    for kind, items in (("generator", grid.generators), ("load", grid.loads), ("shunt", grid.shunts)):
        for el in items:
            if el.bus not in known:
                out.append(Violation("reference", f"{kind} {el.id}", f"{kind} {el.id} references missing bus {el.bus}"))
    for g in grid.generators:
        if g.pmin > g.pmax:
            out.append(Violation("bound", f"generator {g.id}", f"generator {g.id} has pmin > pmax"))
        if g.qmin > g.qmax:
            out.append(Violation("bound", f"generator {g.id}", f"generator {g.id} has qmin > qmax"))
    return ValidationReport(tuple(out))


# -- Matpower parsing -------------------------------------------------------

_ASSIGN = re.compile(r"^\s*mpc\.(\w+)\s*=\s*(.*)$")


def _strip_comment(line: str) -> str:
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def _read_blocks(text: str) -> tuple[dict[str, float], dict[str, list[tuple[int, list[float]]]]]:
    scalars: dict[str, float] = {}
    matrices: dict[str, list[tuple[int, list[float]]]] = {}
    lines = text.splitlines()
    k = 0
    while k < len(lines):
        line = _strip_comment(lines[k])
        m = _ASSIGN.match(line)
        if not m:
            k += 1
            continue
        name, rest = m.group(1), m.group(2).strip()
        if rest.startswith("["):
            rows: list[tuple[int, list[float]]] = []
            body = rest[1:]
            lineno = k + 1
            while True:
                closed = "]" in body
                chunk = body.split("]")[0] if closed else body
                for piece in chunk.split(";"):
                    tokens = piece.replace(",", " ").split()
                    if not tokens:
                        continue
                    try:
                        rows.append((lineno, [float(t) for t in tokens]))
                    except ValueError as exc:
                        raise CaseParseError(f"malformed row in mpc.{name}: {piece.strip()!r}", lineno) from exc
                if closed:
                    break
                k += 1
                if k >= len(lines):
                    raise CaseParseError(f"unterminated matrix mpc.{name}", lineno)
                body = _strip_comment(lines[k])
                lineno = k + 1
            matrices[name] = rows
        elif rest.startswith("{"):
            logger.warning("ignoring cell array mpc.%s", name)
            while "}" not in _strip_comment(lines[k]) and k < len(lines) - 1:
                k += 1
        else:
            value = rest.rstrip(";").strip().strip("'\"")
            try:
                scalars[name] = float(value)
            except ValueError:
                pass
        k += 1
    return scalars, matrices


def _check_width(name: str, rows, need: int, optional_from: int | None = None):
    widths = {len(r) for _, r in rows}
    for lineno, r in rows:
        if len(r) < (optional_from or need):
            raise CaseParseError(f"mpc.{name} row has {len(r)} columns, need {optional_from or need}", lineno)
    if widths and max(widths) > need:
        logger.debug("mpc.%s: ignoring %d extra column(s)", name, max(widths) - need)


def parse_matpower(text: str, name: str = "", validate: bool = True) -> Grid:
    """Parse Matpower case text into a per-unit Grid.

    Bus ids are kept as in the file. Loads and shunts become one record per
    bus with nonzero Pd/Qd resp. Gs/Bs. Out-of-service branches and
    generators are retained with ``in_service=False``.
    """
    scalars, mats = _read_blocks(text)
    for required in ("bus", "gen", "branch"):
        if required not in mats:
            raise CaseParseError(f"missing mpc.{required} matrix")
    base = scalars.get("baseMVA")
    if base is None:
        raise CaseParseError("missing mpc.baseMVA")
    known = {"bus", "gen", "branch", "gencost"}
    for extra in sorted(set(mats) - known):
        logger.warning("ignoring unsupported matrix mpc.%s", extra)

    _check_width("bus", mats["bus"], _BUS_COLS)
    _check_width("gen", mats["gen"], _GEN_COLS, optional_from=10)
    _check_width("branch", mats["branch"], _BRANCH_COLS, optional_from=11)

    buses, loads, shunts = [], [], []
    for lineno, r in mats["bus"]:
        btype = int(r[1])
        if btype not in _ROLE_FROM_TYPE:
            raise CaseParseError(f"unknown bus type {btype}", lineno)
        bus_id = int(r[0])
        buses.append(Bus(id=bus_id, role=_ROLE_FROM_TYPE[btype], vmin=r[12], vmax=r[11], base_kv=r[9],
                         vm=r[7], va=math.radians(r[8]), in_service=btype != 4))
        if r[2] != 0 or r[3] != 0:
            loads.append(Load(id=len(loads) + 1, bus=bus_id, pd=r[2] / base, qd=r[3] / base))
        if r[4] != 0 or r[5] != 0:
            shunts.append(Shunt(id=len(shunts) + 1, bus=bus_id, gs=r[4] / base, bs=r[5] / base))

    costs: list[GenCost] = []
    for lineno, r in mats.get("gencost", []):
        model, n = int(r[0]), int(r[3])
        width = 4 + (2 * n if model == 1 else n)
        if model not in (1, 2) or len(r) < width:
            raise CaseParseError("malformed gencost row", lineno)
        costs.append(GenCost(model=model, coeffs=tuple(r[4:width]), startup=r[1], shutdown=r[2]))

    generators = []
    for k, (lineno, r) in enumerate(mats["gen"]):
        cost = costs[k] if k < len(costs) else GenCost(model=2, coeffs=(0.0,))
        generators.append(Generator(id=k + 1, bus=int(r[0]), pg=r[1] / base, qg=r[2] / base,
                                    qmax=r[3] / base, qmin=r[4] / base, vg=r[5],
                                    in_service=r[7] > 0, pmax=r[8] / base, pmin=r[9] / base, cost=cost))

    branches = []
    for k, (lineno, r) in enumerate(mats["branch"]):
        tap = r[8] if r[8] != 0 else 1.0
        ang_min = math.radians(r[11]) if len(r) > 11 else -2 * math.pi
        ang_max = math.radians(r[12]) if len(r) > 12 else 2 * math.pi
        if len(r) > 12 and r[11] == 0 and r[12] == 0:
            ang_min, ang_max = -2 * math.pi, 2 * math.pi
        branches.append(Branch(id=k + 1, from_bus=int(r[0]), to_bus=int(r[1]), r=r[2], x=r[3],
                               b_charge=r[4], rate_a=r[5] / base, tap=tap, shift=math.radians(r[9]),
                               ang_min=ang_min, ang_max=ang_max, in_service=r[10] > 0))

    grid = Grid(base_mva=base, buses=tuple(buses), branches=tuple(branches),
                generators=tuple(generators), loads=tuple(loads), shunts=tuple(shunts), name=name)
    if validate:
        report = validate_grid(grid)
        if not report.ok:
            raise GridValidationError(report)
    return grid


def load_case(path: str | Path, validate: bool = True) -> Grid:
    """Load a Matpower ``.m`` case or a JSON snapshot written by :func:`grid_to_json`."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        return grid_from_json(text)
    return parse_matpower(text, name=path.stem, validate=validate)


# -- JSON snapshot ----------------------------------------------------------

SCHEMA_VERSION = 1


def grid_to_dict(grid: Grid) -> dict:
    return {
        "schema": "topocand.grid",
        "version": SCHEMA_VERSION,
        "name": grid.name,
        "base_mva": grid.base_mva,
        "buses": [asdict(b) for b in grid.buses],
        "branches": [asdict(b) for b in grid.branches],
        "generators": [asdict(g) for g in grid.generators],
        "loads": [asdict(l) for l in grid.loads],
        "shunts": [asdict(s) for s in grid.shunts],
    }


def grid_to_json(grid: Grid, indent: int | None = 1) -> str:
    return json.dumps(grid_to_dict(grid), indent=indent)


def grid_from_dict(data: dict) -> Grid:
    if data.get("schema") != "topocand.grid":
        raise ValueError("not a topocand grid snapshot")

    def gen(d):
        cost = d["cost"]
        return Generator(**{**d, "cost": GenCost(model=cost["model"], coeffs=tuple(cost["coeffs"]),
                                                  startup=cost["startup"], shutdown=cost["shutdown"])})

    return Grid(
        base_mva=data["base_mva"],
        buses=tuple(Bus(**d) for d in data["buses"]),
        branches=tuple(Branch(**d) for d in data["branches"]),
        generators=tuple(gen(d) for d in data["generators"]),
        loads=tuple(Load(**d) for d in data["loads"]),
        shunts=tuple(Shunt(**d) for d in data["shunts"]),
        name=data.get("name", ""),
    )


def grid_from_json(text: str) -> Grid:
    return grid_from_dict(json.loads(text))


def bundled_case(name: str) -> Path:
    """Path of a case file shipped with the package.

    Accepts ``case39``, ``case39_epri``, ``pglib_opf_case118_ieee`` or a file
    name; pglib-opf cases are tried before the plain Matpower ones.
    """
    folder = Path(__file__).parent / "data" / "cases"
    stem = name[:-2] if name.endswith(".m") else name
    for cand in (stem, f"pglib_opf_{stem}"):
        path = folder / f"{cand}.m"
        if path.exists():
            return path
    raise FileNotFoundError(f"no bundled case named {name!r} in {folder}")


def resolve_case(spec: str | Path) -> Path:
    """A case file path, or the bundled case of that name."""
    path = Path(spec)
    if path.exists():
        return path
    return bundled_case(str(spec))


def connected_components(n: int, edges: Iterable[tuple[int, int]]) -> list[int]:
    """Component label per node index (union-find)."""
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return [find(a) for a in range(n)]
