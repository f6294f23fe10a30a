"""Exact branch-flow power flow for radial networks.

Backward/forward sweep on the DistFlow variables (P, Q, l, v): the
backward pass accumulates sending-end flows leaf-to-slack with
l = (P^2 + Q^2) / v_sending solved exactly per line from the current
voltage estimates, the forward pass propagates voltage-squared values
slack-to-leaf. The converged result satisfies the equality form of the
apparent-power relation, never its relaxation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .grid import Grid, Line, downstream_order

V_TOLERANCE = 1e-10  # pu^2 change between sweeps
MAX_ITERATIONS = 100


class PowerFlowError(Exception):
    pass


class DivergenceError(PowerFlowError):
    """Load exceeds what the feeder can physically deliver."""


@dataclass(frozen=True)
class Injection:
    bus: int
    p: float = 0.0  # pu, positive = into the grid
    q: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.p) and math.isfinite(self.q)):
            raise ValueError(f"non-finite injection at bus {self.bus}")


@dataclass(frozen=True)
class PowerFlowResult:
    v: np.ndarray  # pu^2 per bus, grid.buses order
    P: np.ndarray  # pu per line, grid.lines order, sending end
    Q: np.ndarray
    l: np.ndarray  # pu^2 per line
    losses: float  # total r*l, pu
    iterations: int
    converged: bool


@dataclass(frozen=True)
class Violation:
    kind: str  # under_voltage | over_voltage | overload
    element: object  # bus id, or (from, to) for lines
    magnitude: float  # voltage in pu, loading in percent

    def __str__(self):
        if self.kind == "overload":
            return f"overload on line {self.element}: {self.magnitude:.1f}%"
        side = "under" if self.kind == "under_voltage" else "over"
        return f"{side}-voltage at bus {self.element}: {self.magnitude:.4f} pu"


@dataclass(frozen=True)
class _SweepPlan:
    """Precompiled topology: line order and index maps for one grid."""
    bus_pos: dict[int, int]
    line_pos: dict[Line, int]
    order: tuple[Line, ...]  # leaves first
    parent_of: tuple[int, ...]  # per line: bus position of the sending bus
    child_of: tuple[int, ...]  # per line: bus position of the receiving bus
    children_lines: tuple[tuple[int, ...], ...]  # per line: line positions below its to_bus


@lru_cache(maxsize=32)
def _plan(grid: Grid) -> _SweepPlan:
    bus_pos = grid.bus_index()
    line_pos = {ln: i for i, ln in enumerate(grid.lines)}
    order = tuple(downstream_order(grid))
    by_from: dict[int, list[int]] = {}
    for ln in grid.lines:
        by_from.setdefault(ln.from_bus, []).append(line_pos[ln])
    return _SweepPlan(
        bus_pos=bus_pos,
        line_pos=line_pos,
        order=order,
        parent_of=tuple(bus_pos[ln.from_bus] for ln in grid.lines),
        child_of=tuple(bus_pos[ln.to_bus] for ln in grid.lines),
        children_lines=tuple(tuple(by_from.get(ln.to_bus, ())) for ln in grid.lines),
    )


def _injection_arrays(grid: Grid, injections: list[Injection]) -> tuple[np.ndarray, np.ndarray]:
    bus_pos = grid.bus_index()
    slack_id = grid.slack_bus.id
    p = np.zeros(len(grid.buses))
    q = np.zeros(len(grid.buses))
    seen: set[int] = set()
    for inj in injections:
        if inj.bus == slack_id:
            raise ValueError("slack bus carries no specified injection")
        if inj.bus not in bus_pos:
            raise ValueError(f"injection references unknown bus {inj.bus}")
        if inj.bus in seen:
            raise ValueError(f"duplicate injection for bus {inj.bus}")
        seen.add(inj.bus)
        p[bus_pos[inj.bus]] = inj.p
        q[bus_pos[inj.bus]] = inj.q
    missing = {b.id for b in grid.buses if b.id != slack_id} - seen
    if missing:
        raise ValueError(f"missing injections for buses {sorted(missing)}")
    return p, q


def solve(grid: Grid, injections: list[Injection],
          tol: float = V_TOLERANCE, max_iter: int = MAX_ITERATIONS) -> PowerFlowResult:
    """Run the backward/forward sweep to a fixed point.

    Raises DivergenceError when the load exceeds feeder capability
    (voltage-squared collapses or the per-line current equation loses
    its real solution). Hitting the iteration cap is not an error: the
    result comes back with ``converged=False``.
    """
    plan = _plan(grid)
    p, q = _injection_arrays(grid, injections)
    nl = len(grid.lines)
    v = np.full(len(grid.buses), grid.slack_v)  # flat start
    v[plan.bus_pos[grid.slack_bus.id]] = grid.slack_v
    P = np.zeros(nl)
    Q = np.zeros(nl)
    l = np.zeros(nl)

    iterations = 0
    converged = False
    while iterations < max_iter:
        iterations += 1
        # backward: leaves to slack, flows from net downstream demand
        for ln in plan.order:
            e = plan.line_pos[ln]
            j = plan.child_of[e]
            ap = -p[j]
            aq = -q[j]
            for ce in plan.children_lines[e]:
                ap += P[ce]
                aq += Q[ce]
            vi = v[plan.parent_of[e]]
            l[e] = _line_current_sq(ln, ap, aq, vi)
            P[e] = ap + ln.r * l[e]
            Q[e] = aq + ln.x * l[e]
        # forward: slack to leaves, voltage relation
        dv = 0.0
        for ln in reversed(plan.order):
            e = plan.line_pos[ln]
            vi = v[plan.parent_of[e]]
            vj = vi - 2.0 * (ln.r * P[e] + ln.x * Q[e]) + (ln.r**2 + ln.x**2) * l[e]
            if vj <= 0.0:
                raise DivergenceError(
                    f"voltage-squared collapsed at bus {ln.to_bus}: load exceeds feeder capability")
            jpos = plan.child_of[e]
            dv = max(dv, abs(vj - v[jpos]))
            v[jpos] = vj
        if dv < tol:
            converged = True
            break

    return PowerFlowResult(
        v=v, P=P, Q=Q, l=l,
        losses=float(np.dot([ln.r for ln in grid.lines], l)) if nl else 0.0,
        iterations=iterations, converged=converged,
    )


def _line_current_sq(ln: Line, ap: float, aq: float, vi: float) -> float:
    """Solve l*vi = (ap + r*l)^2 + (aq + x*l)^2 for the physical root.

    ap/aq are the flows that must arrive at the receiving end. The
    smaller root is the normal operating point; a negative discriminant
    means no real solution exists at this voltage, i.e. the demand is
    beyond the line's deliverable power.
    """
    a = ln.r**2 + ln.x**2
    b = 2.0 * (ln.r * ap + ln.x * aq) - vi
    c = ap**2 + aq**2
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        raise DivergenceError(
            f"no power flow solution on line ({ln.from_bus},{ln.to_bus}): "
            "load exceeds feeder capability")
    return (-b - math.sqrt(disc)) / (2.0 * a)


def check_limits(grid: Grid, result: PowerFlowResult) -> list[Violation]:
    """List voltage-band and ampacity violations of a converged result."""
    if not result.converged:
        raise PowerFlowError("cannot check limits of an unconverged power flow")
    out: list[Violation] = []
    for i, b in enumerate(grid.buses):
        if result.v[i] < b.vmin:
            out.append(Violation("under_voltage", b.id, float(result.v[i] ** 0.5)))
        elif result.v[i] > b.vmax:
            out.append(Violation("over_voltage", b.id, float(result.v[i] ** 0.5)))
    for e, ln in enumerate(grid.lines):
        if result.l[e] > ln.l_max:
            loading = 100.0 * float((result.l[e] / ln.l_max) ** 0.5)
            out.append(Violation("overload", (ln.from_bus, ln.to_bus), loading))
    return out


def loading_percent(grid: Grid, result: PowerFlowResult) -> np.ndarray:
    """Per-line loading: current magnitude over ampacity, in percent."""
    lmax = np.array([ln.l_max for ln in grid.lines])
    if len(lmax) == 0:
        return np.zeros(0)
    return 100.0 * np.sqrt(result.l / lmax)


def slack_injection(grid: Grid, result: PowerFlowResult) -> tuple[float, float]:
    """Active/reactive power entering the feeder at the slack bus (pu)."""
    plan = _plan(grid)
    slack_pos = plan.bus_pos[grid.slack_bus.id]
    ps = sum(result.P[e] for e in range(len(grid.lines)) if plan.parent_of[e] == slack_pos)
    qs = sum(result.Q[e] for e in range(len(grid.lines)) if plan.parent_of[e] == slack_pos)
    return float(ps), float(qs)
