"""DER coordination model as a standard-form second-order cone program.

The model minimizes loss cost plus priced deviations from the collected
schedules, subject to household injection definitions, device apparent
power and power-factor limits, heat-pump regulation definitions, the
branch-flow network equations with the conic relaxation of the
apparent-power relation, and voltage/ampacity boxes. Powers are handled
in per-unit internally; a single documented factor converts the
objective to euros.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import conic
from .conic import ConicProgram, ConicSolution, ProgramBuilder
from .der import CostTerms, HouseholdParams, ScheduleSlot
from .grid import SLACK, Grid

# tolerated primal slop when validating extracted values, in kW
EXTRACT_TOL_KW = 1e-5

solve = conic.solve  # solver adapter seam; see conic module


class BuildError(ValueError):
    pass


class ExtractionError(RuntimeError):
    pass


@dataclass(frozen=True)
class CoordinationProblem:
    grid: Grid
    schedule: dict[int, ScheduleSlot]  # by household id
    costs: CostTerms
    params: dict[int, HouseholdParams]
    dt_hours: float = 0.25


@dataclass(frozen=True)
class Setpoints:
    """Optimized household device powers, kW / kvar."""
    p_ev: float = 0.0
    p_hp: float = 0.0
    p_pv: float = 0.0
    q_ev: float = 0.0
    q_pv: float = 0.0
    q_hp: float = 0.0


@dataclass(frozen=True)
class Curtailments:
    """Deviations from schedule, kW: curtailed EV/PV power, HP regulation."""
    ev_down: float = 0.0
    pv_down: float = 0.0
    hp_up: float = 0.0
    hp_down: float = 0.0


@dataclass(frozen=True)
class CoordinationResult:
    grid: Grid
    setpoints: dict[int, Setpoints]
    curtailments: dict[int, Curtailments]
    v: np.ndarray  # pu^2 per bus
    P: np.ndarray  # pu per line
    Q: np.ndarray
    l: np.ndarray  # pu^2 per line
    objective_value: float  # EUR
    objective_breakdown: dict[str, float]
    solver_status: str


@dataclass
class _HouseholdVars:
    p_inj: int | None = None
    q_inj: int | None = None
    p_pv: int | None = None
    q_pv: int | None = None
    pv_cut: int | None = None
    p_ev: int | None = None
    q_ev: int | None = None
    ev_cut: int | None = None
    p_hp: int | None = None
    q_hp: int | None = None
    hp_up: int | None = None
    hp_dn: int | None = None


@dataclass
class _ModelIndex:
    v: list[int]
    P: list[int]
    Q: list[int]
    l: list[int]
    households: dict[int, _HouseholdVars]
    euro_per_pu: float  # EUR per (pu power * EUR/MWh price) over one slot


def build(problem: CoordinationProblem) -> ConicProgram:
    """Assemble the coordination model for one slot."""
    return assemble(problem)[0]


def assemble(problem: CoordinationProblem) -> tuple[ConicProgram, _ModelIndex]:
    grid = problem.grid
    hh_buses = {b.household: b for b in grid.household_buses}
    for hid in problem.schedule:
        if hid not in hh_buses:
            raise BuildError(f"household {hid} references unknown bus")
    for hid in hh_buses:
        if hid not in problem.schedule or hid not in problem.params:
            raise BuildError(f"household bus {hid} missing schedule or parameters")

    bb = ProgramBuilder()
    bus_pos = grid.bus_index()
    nb, nl = len(grid.buses), len(grid.lines)
    # EUR per pu of power priced at 1 EUR/MWh over one slot
    euro_per_pu = grid.base_power / 1e6 * problem.dt_hours

    v = [bb.var(f"v[{b.id}]") for b in grid.buses]
    P = [bb.var(f"P[{ln.from_bus},{ln.to_bus}]") for ln in grid.lines]
    Q = [bb.var(f"Q[{ln.from_bus},{ln.to_bus}]") for ln in grid.lines]
    l = [bb.nonneg_var(f"l[{ln.from_bus},{ln.to_bus}]") for ln in grid.lines]

    slack_pos = bus_pos[grid.slack_bus.id]
    bb.add_eq({v[slack_pos]: 1.0}, grid.slack_v)
    for i, b in enumerate(grid.buses):
        bb.add_le({v[i]: -1.0}, -b.vmin, f"s.vlo[{b.id}]")
        bb.add_le({v[i]: 1.0}, b.vmax, f"s.vhi[{b.id}]")
    for e, ln in enumerate(grid.lines):
        bb.add_le({l[e]: 1.0}, ln.l_max, f"s.lmax[{ln.from_bus},{ln.to_bus}]")
        # voltage relation along the line (exact)
        bb.add_eq({
            v[bus_pos[ln.to_bus]]: 1.0,
            v[bus_pos[ln.from_bus]]: -1.0,
            P[e]: 2.0 * ln.r,
            Q[e]: 2.0 * ln.x,
            l[e]: -(ln.r**2 + ln.x**2),
        }, 0.0)
        # relaxed apparent-power relation as a plain second-order cone:
        # ||(2P, 2Q, l - v_i)|| <= l + v_i
        vi = v[bus_pos[ln.from_bus]]
        bb.soc_of_expr(
            f"line[{ln.from_bus},{ln.to_bus}]",
            ({l[e]: 1.0, vi: 1.0}, 0.0),
            [({P[e]: 2.0}, 0.0), ({Q[e]: 2.0}, 0.0), ({l[e]: 1.0, vi: -1.0}, 0.0)],
        )

    households: dict[int, _HouseholdVars] = {}
    const_p = np.zeros(nb)  # fixed injections folded into the flow balances, pu
    const_q = np.zeros(nb)
    for hid, bus in sorted(hh_buses.items()):
        par = problem.params[hid]
        sched = problem.schedule[hid]
        hv = _HouseholdVars()
        pos = bus_pos[bus.id]
        p_load = grid.kw_to_pu(sched.p_load)
        q_load = grid.kw_to_pu(sched.q_load)

        has_pv, has_ev, has_hp = par.pv_rating > 0, par.ev_rating > 0, par.hp_p_max > 0
        if not has_pv and sched.p_pv_fore > 0:
            raise BuildError(f"household {hid}: PV forecast without a PV rating")
        if not has_ev and sched.p_ev_max > 0:
            raise BuildError(f"household {hid}: EV demand without an EV rating")
        if not has_hp and sched.p_hp_set > 0:
            raise BuildError(f"household {hid}: HP schedule without HP capacity")

        if has_pv:
            hv.p_pv = bb.nonneg_var(f"p_pv[{hid}]")
            hv.q_pv = bb.var(f"q_pv[{hid}]")
            hv.pv_cut = bb.nonneg_var(f"pv_cut[{hid}]")
            bb.add_eq({hv.p_pv: 1.0, hv.pv_cut: 1.0}, grid.kw_to_pu(sched.p_pv_fore))
            tan = par.pv_pf_limit
            bb.add_le({hv.q_pv: 1.0, hv.p_pv: -tan}, 0.0, f"s.pvpf+[{hid}]")
            bb.add_le({hv.q_pv: -1.0, hv.p_pv: -tan}, 0.0, f"s.pvpf-[{hid}]")
            bb.soc_of_expr(
                f"pv[{hid}]",
                ({}, grid.kw_to_pu(par.pv_rating)),
                [({hv.p_pv: 1.0}, 0.0), ({hv.q_pv: 1.0}, 0.0)],
            )
        if has_ev:
            hv.p_ev = bb.nonneg_var(f"p_ev[{hid}]")
            hv.q_ev = bb.var(f"q_ev[{hid}]")
            hv.ev_cut = bb.nonneg_var(f"ev_cut[{hid}]")
            bb.add_eq({hv.p_ev: 1.0, hv.ev_cut: 1.0}, grid.kw_to_pu(sched.p_ev_max))
            tan = par.ev_pf_limit
            bb.add_le({hv.q_ev: 1.0, hv.p_ev: -tan}, 0.0, f"s.evpf+[{hid}]")
            bb.add_le({hv.q_ev: -1.0, hv.p_ev: -tan}, 0.0, f"s.evpf-[{hid}]")
            bb.soc_of_expr(
                f"ev[{hid}]",
                ({}, grid.kw_to_pu(par.ev_rating)),
                [({hv.p_ev: 1.0}, 0.0), ({hv.q_ev: 1.0}, 0.0)],
            )
        if has_hp:
            hv.p_hp = bb.nonneg_var(f"p_hp[{hid}]")
            hv.q_hp = bb.var(f"q_hp[{hid}]")
            bb.add_eq({hv.q_hp: 1.0, hv.p_hp: -par.hp_tan_phi}, 0.0)
            bb.add_le({hv.p_hp: 1.0}, grid.kw_to_pu(par.hp_p_max), f"s.hpmax[{hid}]")
            hv.hp_dn = bb.nonneg_var(f"hp_dn[{hid}]")
            hv.hp_up = bb.nonneg_var(f"hp_up[{hid}]")
            p_set = grid.kw_to_pu(sched.p_hp_set)
            bb.add_le({hv.p_hp: -1.0, hv.hp_dn: -1.0}, -p_set, f"s.hpdn[{hid}]")
            bb.add_le({hv.p_hp: 1.0, hv.hp_up: -1.0}, p_set, f"s.hpup[{hid}]")

        if has_pv or has_ev or has_hp:
            hv.p_inj = bb.var(f"p[{hid}]")
            hv.q_inj = bb.var(f"q[{hid}]")
            # injection definitions: p = p_pv - p_load - p_ev - p_hp,
            #                        q = q_pv + q_ev - q_hp - q_load
            eq_p = {hv.p_inj: 1.0}
            eq_q = {hv.q_inj: 1.0}
            if has_pv:
                eq_p[hv.p_pv] = -1.0
                eq_q[hv.q_pv] = -1.0
            if has_ev:
                eq_p[hv.p_ev] = 1.0
                eq_q[hv.q_ev] = -1.0
            if has_hp:
                eq_p[hv.p_hp] = 1.0
                eq_q[hv.q_hp] = 1.0
            bb.add_eq(eq_p, -p_load)
            bb.add_eq(eq_q, -q_load)
        else:
            const_p[pos] = -p_load
            const_q[pos] = -q_load
        households[hid] = hv

    # nodal balances: net flow into the bus plus its injection feeds the
    # sending-end flows of all child lines
    children: dict[int, list[int]] = {}
    parent: dict[int, int] = {}
    for e, ln in enumerate(grid.lines):
        children.setdefault(ln.from_bus, []).append(e)
        parent[ln.to_bus] = e
    hh_at_bus = {b.id: b.household for b in grid.household_buses}
    for b in grid.buses:
        if b.kind == SLACK:
            continue
        e = parent[b.id]
        ln = grid.lines[e]
        eq_p = {P[e]: -1.0, l[e]: ln.r}
        eq_q = {Q[e]: -1.0, l[e]: ln.x}
        for ce in children.get(b.id, []):
            eq_p[P[ce]] = eq_p.get(P[ce], 0.0) + 1.0
            eq_q[Q[ce]] = eq_q.get(Q[ce], 0.0) + 1.0
        rhs_p, rhs_q = 0.0, 0.0
        hid = hh_at_bus.get(b.id)
        if hid is not None and households[hid].p_inj is not None:
            eq_p[households[hid].p_inj] = -1.0
            eq_q[households[hid].q_inj] = -1.0
        else:
            rhs_p = const_p[bus_pos[b.id]]
            rhs_q = const_q[bus_pos[b.id]]
        bb.add_eq(eq_p, rhs_p)
        bb.add_eq(eq_q, rhs_q)

    for e, ln in enumerate(grid.lines):
        bb.add_objective(l[e], problem.costs.c_loss * ln.r * euro_per_pu)
    for hid, hv in households.items():
        if hv.ev_cut is not None:
            bb.add_objective(hv.ev_cut, problem.costs.c_ev[hid] * euro_per_pu)
        if hv.pv_cut is not None:
            bb.add_objective(hv.pv_cut, problem.costs.c_pv[hid] * euro_per_pu)
        if hv.hp_up is not None:
            bb.add_objective(hv.hp_up, problem.costs.c_hp_up[hid] * euro_per_pu)
            bb.add_objective(hv.hp_dn, problem.costs.c_hp_down[hid] * euro_per_pu)

    index = _ModelIndex(v=v, P=P, Q=Q, l=l, households=households,
                        euro_per_pu=euro_per_pu)
    return bb.build(), index


def extract(problem: CoordinationProblem,
            solution: ConicSolution) -> CoordinationResult:
    """Turn an optimal solution back into kW setpoints and diagnostics."""
    if solution.status != conic.OPTIMAL:
        raise ExtractionError(f"cannot extract from status {solution.status!r}")
    _, index = assemble(problem)
    grid = problem.grid
    x = solution.x
    kw = grid.pu_to_kw

    setpoints: dict[int, Setpoints] = {}
    curtail: dict[int, Curtailments] = {}
    for hid, hv in index.households.items():
        par = problem.params[hid]
        sched = problem.schedule[hid]

        def val(idx):
            return kw(float(x[idx])) if idx is not None else 0.0

        raw = {
            "p_pv": val(hv.p_pv), "q_pv": val(hv.q_pv),
            "p_ev": val(hv.p_ev), "q_ev": val(hv.q_ev),
            "p_hp": val(hv.p_hp), "q_hp": val(hv.q_hp),
            "ev_down": val(hv.ev_cut), "pv_down": val(hv.pv_cut),
            "hp_up": val(hv.hp_up), "hp_down": val(hv.hp_dn),
        }
        bounds = {
            "p_pv": (0.0, sched.p_pv_fore),
            "p_ev": (0.0, sched.p_ev_max),
            "p_hp": (0.0, par.hp_p_max),
        }
        for name, (lo, hi) in bounds.items():
            if raw[name] < lo - EXTRACT_TOL_KW or raw[name] > hi + EXTRACT_TOL_KW:
                raise ExtractionError(
                    f"household {hid}: {name}={raw[name]:.6g} kW outside [{lo}, {hi}]")
            raw[name] = min(max(raw[name], lo), hi)
        for name in ("ev_down", "pv_down", "hp_up", "hp_down"):
            if raw[name] < -EXTRACT_TOL_KW:
                raise ExtractionError(
                    f"household {hid}: {name}={raw[name]:.6g} kW negative")
            raw[name] = max(raw[name], 0.0)
        if min(raw["hp_up"], raw["hp_down"]) > kw(1e-7):
            raise ExtractionError(
                f"household {hid}: up and down HP regulation both active")
        setpoints[hid] = Setpoints(
            p_ev=raw["p_ev"], p_hp=raw["p_hp"], p_pv=raw["p_pv"],
            q_ev=raw["q_ev"], q_pv=raw["q_pv"], q_hp=raw["q_hp"])
        curtail[hid] = Curtailments(
            ev_down=raw["ev_down"], pv_down=raw["pv_down"],
            hp_up=raw["hp_up"], hp_down=raw["hp_down"])

    scale = index.euro_per_pu
    costs = problem.costs
    loss_cost = costs.c_loss * scale * float(sum(
        ln.r * x[index.l[e]] for e, ln in enumerate(grid.lines)))
    breakdown = {
        "loss_cost": loss_cost,
        "ev_curtailment_cost": sum(
            costs.c_ev[h] * scale * float(x[hv.ev_cut])
            for h, hv in index.households.items() if hv.ev_cut is not None),
        "pv_curtailment_cost": sum(
            costs.c_pv[h] * scale * float(x[hv.pv_cut])
            for h, hv in index.households.items() if hv.pv_cut is not None),
        "hp_up_cost": sum(
            costs.c_hp_up[h] * scale * float(x[hv.hp_up])
            for h, hv in index.households.items() if hv.hp_up is not None),
        "hp_down_cost": sum(
            costs.c_hp_down[h] * scale * float(x[hv.hp_dn])
            for h, hv in index.households.items() if hv.hp_dn is not None),
        "euro_per_pu_at_unit_price": scale,
    }
    total = sum(val for key, val in breakdown.items()
                if key != "euro_per_pu_at_unit_price")
    if abs(total - solution.objective) > 1e-6 * max(1.0, abs(solution.objective)):
        raise ExtractionError(
            f"objective breakdown {total} disagrees with solver value {solution.objective}")

    return CoordinationResult(
        grid=grid,
        setpoints=setpoints,
        curtailments=curtail,
        v=np.array([x[i] for i in index.v]),
        P=np.array([x[i] for i in index.P]),
        Q=np.array([x[i] for i in index.Q]),
        l=np.array([x[i] for i in index.l]),
        objective_value=solution.objective,
        objective_breakdown=breakdown,
        solver_status=solution.status,
    )


def relaxation_gap(result: CoordinationResult) -> np.ndarray:
    """Per-line l*v_sending - (P^2 + Q^2); zero means the cone is tight."""
    grid = result.grid
    bus_pos = grid.bus_index()
    gaps = np.empty(len(grid.lines))
    for e, ln in enumerate(grid.lines):
        vi = result.v[bus_pos[ln.from_bus]]
        gaps[e] = result.l[e] * vi - (result.P[e] ** 2 + result.Q[e] ** 2)
    return gaps
