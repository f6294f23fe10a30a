"""Radial low-voltage network model with per-unit normalization.

Buses, lines and the per-unit system used by the power flow and the
coordination model. Voltages are carried squared (v = |V|^2) throughout;
magnitudes are computed on output only. Lines are directed away from the
slack bus; loaders accept either orientation and reorient on ingest.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

SLACK = "slack"
JUNCTION = "junction"
HOUSEHOLD = "household"

DEFAULT_VMIN = 0.9**2  # pu^2
DEFAULT_VMAX = 1.1**2  # pu^2


class TopologyError(ValueError):
    """Raised when a grid's line set is not a tree rooted at the slack bus."""


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str = HOUSEHOLD
    vmin: float = DEFAULT_VMIN  # pu^2 lower bound
    vmax: float = DEFAULT_VMAX  # pu^2 upper bound
    household: int | None = None  # household id, household buses only

    def __post_init__(self):
        if self.kind not in (SLACK, JUNCTION, HOUSEHOLD):
            raise ValueError(f"unknown bus kind {self.kind!r} on bus {self.id}")
        if self.kind == HOUSEHOLD and self.household is None:
            # household id defaults to the bus id (parameter files key on it)
            object.__setattr__(self, "household", self.id)


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    r: float  # pu
    x: float  # pu
    l_max: float  # pu^2 current-squared limit (ampacity squared)


@dataclass(frozen=True)
class Grid:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    base_power: float = 1.0e5  # VA
    base_voltage: float = 230.0  # V
    slack_v: float = 1.0  # pu^2 at the slack bus

    # -- per-unit system -------------------------------------------------

    @property
    def z_base(self) -> float:
        return self.base_voltage**2 / self.base_power

    @property
    def i_base(self) -> float:
        return self.base_power / self.base_voltage

    def ohm_to_pu(self, z_ohm: float) -> float:
        return z_ohm / self.z_base

    def pu_to_ohm(self, z_pu: float) -> float:
        return z_pu * self.z_base

    def amp_to_pu2(self, i_amp: float) -> float:
        """Ampacity in A -> per-unit current-squared limit."""
        return (i_amp / self.i_base) ** 2

    def pu2_to_amp(self, l_pu2: float) -> float:
        return (l_pu2**0.5) * self.i_base

    def watt_to_pu(self, p_watt: float) -> float:
        return p_watt / self.base_power

    def pu_to_watt(self, p_pu: float) -> float:
        return p_pu * self.base_power

    def kw_to_pu(self, p_kw: float) -> float:
        return p_kw * 1e3 / self.base_power

    def pu_to_kw(self, p_pu: float) -> float:
        return p_pu * self.base_power / 1e3

    # -- lookups ---------------------------------------------------------

    @property
    def slack_bus(self) -> Bus:
        for b in self.buses:
            if b.kind == SLACK:
                return b
        raise ValueError("grid has no slack bus")

    @property
    def household_buses(self) -> tuple[Bus, ...]:
        return tuple(b for b in self.buses if b.kind == HOUSEHOLD)

    def bus_index(self) -> dict[int, int]:
        """Bus id -> position in ``buses``."""
        return {b.id: i for i, b in enumerate(self.buses)}


def validate(grid: Grid) -> list[str]:
    """Check all grid invariants; return human-readable violations.

    An empty list means the grid is valid. Violations are data, not
    failures: each entry names the offending element.
    """
    out: list[str] = []
    ids = [b.id for b in grid.buses]
    if len(set(ids)) != len(ids):
        out.append("duplicate bus ids")
    slack_ids = [b.id for b in grid.buses if b.kind == SLACK]
    if len(slack_ids) != 1:
        out.append(f"grid must have exactly one slack bus, found {len(slack_ids)}")
    for b in grid.buses:
        if not (0.0 < b.vmin < b.vmax):
            out.append(f"bus {b.id}: voltage bounds must satisfy 0 < vmin < vmax")
        if b.kind == HOUSEHOLD and b.household is None:
            out.append(f"bus {b.id}: household bus without household id")
        if b.kind != HOUSEHOLD and b.household is not None:
            out.append(f"bus {b.id}: {b.kind} bus carries a household id")
    known = set(ids)
    for ln in grid.lines:
        tag = f"({ln.from_bus},{ln.to_bus})"
        if ln.from_bus not in known or ln.to_bus not in known:
            out.append(f"line {tag} references unknown bus")
            continue
        if ln.r < 0 or ln.x < 0:
            out.append(f"negative impedance on line {tag}")
        if ln.r + ln.x <= 0:
            out.append(f"degenerate impedance on line {tag}")
        if ln.l_max <= 0:
            out.append(f"nonpositive ampacity on line {tag}")
    if grid.slack_v <= 0:
        out.append("slack voltage-squared must be positive")
    if grid.base_power <= 0 or grid.base_voltage <= 0:
        out.append("base quantities must be positive")

    if len(slack_ids) == 1 and not any("unknown bus" in v for v in out):
        out.extend(_tree_violations(grid, slack_ids[0]))
    return out


def _tree_violations(grid: Grid, slack_id: int) -> list[str]:
    out: list[str] = []
    n = len(grid.buses)
    if len(grid.lines) != n - 1:
        out.append(f"{len(grid.lines)} lines for {n} buses (tree needs {n - 1})")
    parents: dict[int, list[Line]] = {}
    for ln in grid.lines:
        parents.setdefault(ln.to_bus, []).append(ln)
    if slack_id in parents:
        out.append(f"slack bus {slack_id} has a parent line")
    for b in grid.buses:
        if b.id == slack_id:
            continue
        k = len(parents.get(b.id, []))
        if k > 1:
            out.append(f"bus {b.id} has {k} parent lines")
    # reachability from the slack along line directions
    children: dict[int, list[int]] = {}
    for ln in grid.lines:
        children.setdefault(ln.from_bus, []).append(ln.to_bus)
    seen = {slack_id}
    stack = [slack_id]
    while stack:
        for nxt in children.get(stack.pop(), []):
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    for b in grid.buses:
        if b.id not in seen:
            out.append(f"disconnected bus {b.id}")
    return out


def downstream_order(grid: Grid) -> list[Line]:
    """Lines ordered leaves-to-slack; reversing gives slack-to-leaf order.

    Every line appears after all lines in its subtree. Raises
    TopologyError on cycles or disconnected buses.
    """
    slack_id = grid.slack_bus.id
    by_from: dict[int, list[Line]] = {}
    for ln in grid.lines:
        by_from.setdefault(ln.from_bus, []).append(ln)
    depth: dict[Line, int] = {}
    seen = {slack_id}
    frontier = [(slack_id, 0)]
    while frontier:
        bus, d = frontier.pop()
        for ln in by_from.get(bus, []):
            if ln.to_bus in seen:
                raise TopologyError(f"cycle through line ({ln.from_bus},{ln.to_bus})")
            seen.add(ln.to_bus)
            depth[ln] = d + 1
            frontier.append((ln.to_bus, d + 1))
    if len(depth) != len(grid.lines):
        missing = [ln for ln in grid.lines if ln not in depth]
        ln = missing[0]
        raise TopologyError(f"line ({ln.from_bus},{ln.to_bus}) unreachable from slack")
    return sorted(grid.lines, key=lambda ln: (-depth[ln], ln.from_bus, ln.to_bus))


def _orient_lines(buses: list[Bus], lines: list[Line], slack_id: int) -> list[Line]:
    """Flip lines so each points away from the slack. Input order preserved."""
    adj: dict[int, list[tuple[int, int]]] = {}
    for i, ln in enumerate(lines):
        adj.setdefault(ln.from_bus, []).append((ln.to_bus, i))
        adj.setdefault(ln.to_bus, []).append((ln.from_bus, i))
    parent_side: dict[int, int] = {}  # line index -> bus id that is nearer the slack
    seen = {slack_id}
    stack = [slack_id]
    while stack:
        bus = stack.pop()
        for other, i in adj.get(bus, []):
            if other in seen:
                continue
            seen.add(other)
            parent_side[i] = bus
            stack.append(other)
    out = []
    for i, ln in enumerate(lines):
        near = parent_side.get(i)
        if near is None or ln.from_bus == near:
            out.append(ln)
        else:
            out.append(Line(ln.to_bus, ln.from_bus, ln.r, ln.x, ln.l_max))
    return out


def load_grid(path: str) -> Grid:
    """Load a grid from the JSON file format (SI units: ohm, A, V)."""
    with open(path) as fh:
        doc = json.load(fh)
    return grid_from_dict(doc)


def grid_from_dict(doc: dict) -> Grid:
    base_power = float(doc.get("base_power_va", 1.0e5))
    base_voltage = float(doc.get("base_voltage_v", 230.0))
    slack_v = float(doc.get("slack_v_pu2", 1.0))
    buses = []
    for rec in doc["buses"]:
        kind = rec.get("kind", HOUSEHOLD)
        vmin = (float(rec["vmin_v"]) / base_voltage) ** 2 if "vmin_v" in rec else DEFAULT_VMIN
        vmax = (float(rec["vmax_v"]) / base_voltage) ** 2 if "vmax_v" in rec else DEFAULT_VMAX
        household = rec.get("household")
        buses.append(Bus(int(rec["id"]), kind, vmin, vmax,
                         int(household) if household is not None else None))
    z_base = base_voltage**2 / base_power
    i_base = base_power / base_voltage
    lines = []
    for rec in doc["lines"]:
        lines.append(Line(
            int(rec["from"]), int(rec["to"]),
            float(rec["r_ohm"]) / z_base, float(rec["x_ohm"]) / z_base,
            (float(rec["i_max_a"]) / i_base) ** 2,
        ))
    slack_ids = [b.id for b in buses if b.kind == SLACK]
    if len(slack_ids) == 1:
        lines = _orient_lines(buses, lines, slack_ids[0])
    return Grid(tuple(buses), tuple(lines), base_power, base_voltage, slack_v)


def grid_to_dict(grid: Grid) -> dict:
    doc = {
        "base_power_va": grid.base_power,
        "base_voltage_v": grid.base_voltage,
        "slack_v_pu2": grid.slack_v,
        "buses": [],
        "lines": [],
    }
    for b in grid.buses:
        rec: dict = {"id": b.id, "kind": b.kind}
        if b.vmin != DEFAULT_VMIN:
            rec["vmin_v"] = b.vmin**0.5 * grid.base_voltage
        if b.vmax != DEFAULT_VMAX:
            rec["vmax_v"] = b.vmax**0.5 * grid.base_voltage
        if b.kind == HOUSEHOLD:
            rec["household"] = b.household
        doc["buses"].append(rec)
    for ln in grid.lines:
        doc["lines"].append({
            "from": ln.from_bus, "to": ln.to_bus,
            "r_ohm": grid.pu_to_ohm(ln.r), "x_ohm": grid.pu_to_ohm(ln.x),
            "i_max_a": grid.pu2_to_amp(ln.l_max),
        })
    return doc


def save_grid(grid: Grid, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(grid_to_dict(grid), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_grid_csv(path: str, base_power: float = 1.0e5,
                  base_voltage: float = 230.0, slack_v: float = 1.0) -> Grid:
    """Load a grid from CSV rows ``from,to,r_ohm,x_ohm,i_max_a``.

    Bus 0 is the slack; every other bus is a household. Junctions and
    custom voltage bounds need the JSON format.
    """
    z_base = base_voltage**2 / base_power
    i_base = base_power / base_voltage
    lines: list[Line] = []
    bus_ids: set[int] = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["from", "to", "r_ohm", "x_ohm", "i_max_a"]:
            raise ValueError(f"{path}: expected header from,to,r_ohm,x_ohm,i_max_a")
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise ValueError(f"{path}: row {rownum} has {len(row)} columns, expected 5")
            try:
                f, t = int(row[0]), int(row[1])
                r, x, imax = float(row[2]), float(row[3]), float(row[4])
            except ValueError as exc:
                raise ValueError(f"{path}: row {rownum}: {exc}") from exc
            lines.append(Line(f, t, r / z_base, x / z_base, (imax / i_base) ** 2))
            bus_ids.update((f, t))
    buses = [Bus(i, SLACK if i == 0 else HOUSEHOLD) for i in sorted(bus_ids)]
    lines = _orient_lines(buses, lines, 0)
    return Grid(tuple(buses), tuple(lines), base_power, base_voltage, slack_v)
