"""The real-time operation loop and the day-long simulation driver.

Each slot: run a power flow on the collected schedules, check limits,
and if anything is violated price the fleet's urgency, solve the
coordination model, verify the optimized setpoints with a second power
flow, and apply them. Device states then advance, and future schedules
are rescheduled to catch up on any deviation.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import conic, der, powerflow, socp
from .der import HouseholdParams, HouseholdState, ScheduleSlot
from .grid import HOUSEHOLD, SLACK, Grid
from .powerflow import Injection, PowerFlowResult, Violation
from .socp import CoordinationProblem, Setpoints

log = logging.getLogger("dercoord.operation")


class OperationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimulationConfig:
    dt_hours: float = 0.25
    cop: float = 3.0
    c_loss: float = der.DEFAULT_C_LOSS
    c_pv: float = der.DEFAULT_C_PV
    ev_cost_c0: float = der.DEFAULT_EV_C0
    coordinate: bool = True  # False = uncontrolled evaluation only
    pf_tol: float = powerflow.V_TOLERANCE
    pf_max_iter: int = powerflow.MAX_ITERATIONS


@dataclass
class SlotRecord:
    slot: int
    pre_violations: list[Violation]
    post_violations: list[Violation]
    coordinated: bool
    unresolved: bool
    setpoints: dict[int, Setpoints]  # applied, kW
    curtailments: dict  # household id -> Curtailments when coordinated
    states_after: dict[int, HouseholdState]
    pf_result: PowerFlowResult  # power flow of the applied setpoints
    socp_v: np.ndarray | None = None  # SOCP voltages (pu^2) when coordinated
    socp_l: np.ndarray | None = None
    relaxation_gaps: np.ndarray | None = None
    objective: float | None = None
    objective_breakdown: dict | None = None
    solver_status: str | None = None
    solve_time: float = 0.0
    catch_up_risks: list[int] = field(default_factory=list)
    grid_state_source: str = "powerflow"  # provenance of reported grid states


def scheduled_setpoints(slot: ScheduleSlot, params: HouseholdParams) -> Setpoints:
    """Device powers when the schedule is applied as collected.

    PV and EV inverters schedule active power only; heat pumps always
    draw reactive power at their fixed power factor.
    """
    return Setpoints(
        p_ev=slot.p_ev_max, p_hp=slot.p_hp_set, p_pv=slot.p_pv_fore,
        q_ev=0.0, q_pv=0.0, q_hp=slot.p_hp_set * params.hp_tan_phi)


def injections_for(grid: Grid, schedule: dict[int, ScheduleSlot],
                   setpoints: dict[int, Setpoints]) -> list[Injection]:
    """Per-bus net injections (pu) for a set of applied device powers."""
    out = []
    for b in grid.buses:
        if b.kind == SLACK:
            continue
        if b.kind == HOUSEHOLD and b.household in schedule:
            s, sp = schedule[b.household], setpoints[b.household]
            p = sp.p_pv - s.p_load - sp.p_ev - sp.p_hp
            q = sp.q_pv + sp.q_ev - sp.q_hp - s.q_load
            out.append(Injection(b.id, grid.kw_to_pu(p), grid.kw_to_pu(q)))
        else:
            out.append(Injection(b.id, 0.0, 0.0))
    return out


def run_slot(grid: Grid, params: dict[int, HouseholdParams],
             states: dict[int, HouseholdState],
             schedule: dict[int, ScheduleSlot],
             t: int, t_max: int, config: SimulationConfig,
             heat_set: dict[int, float] | None = None,
             ) -> tuple[SlotRecord, dict[int, HouseholdState]]:
    """Evaluate, coordinate if violated, verify, apply, and update states.

    ``heat_set`` is the per-household thermal reference for the tank
    update; it defaults to the slot's HP schedule but diverges from it
    once catch-up rescheduling has adjusted future set points.
    """
    sched_sp = {h: scheduled_setpoints(schedule[h], params[h]) for h in schedule}
    try:
        pf_pre = powerflow.solve(grid, injections_for(grid, schedule, sched_sp),
                                 tol=config.pf_tol, max_iter=config.pf_max_iter)
    except powerflow.DivergenceError as exc:
        raise OperationError(f"slot {t}: {exc}") from exc
    if not pf_pre.converged:
        raise OperationError(f"slot {t}: power flow failed to converge")
    pre_violations = powerflow.check_limits(grid, pf_pre)

    coordinated = False
    unresolved = False
    applied = sched_sp
    curtailments: dict = {}
    pf_applied = pf_pre
    socp_v = socp_l = gaps = None
    objective = None
    breakdown = None
    solver_status = None
    solve_time = 0.0

    if pre_violations and config.coordinate:
        costs = der.cost_terms_for(states, params, t=t + 1, t_max=t_max,
                                   c_loss=config.c_loss, c_pv=config.c_pv,
                                   ev_c0=config.ev_cost_c0)
        problem = CoordinationProblem(grid=grid, schedule=schedule, costs=costs,
                                      params=params, dt_hours=config.dt_hours)
        program = socp.build(problem)
        tic = time.perf_counter()
        solution = socp.solve(program)
        solve_time = time.perf_counter() - tic
        solver_status = solution.status
        if solution.status == conic.OPTIMAL:
            result = socp.extract(problem, solution)
            applied = result.setpoints
            curtailments = result.curtailments
            try:
                pf_applied = powerflow.solve(
                    grid, injections_for(grid, schedule, applied),
                    tol=config.pf_tol, max_iter=config.pf_max_iter)
            except powerflow.DivergenceError as exc:
                raise OperationError(
                    f"slot {t}: verification power flow diverged: {exc}") from exc
            if not pf_applied.converged:
                raise OperationError(f"slot {t}: verification power flow failed to converge")
            coordinated = True
            socp_v, socp_l = result.v, result.l
            gaps = socp.relaxation_gap(result)
            objective = result.objective_value
            breakdown = result.objective_breakdown
        else:
            # no load-shedding fallback: flag and advance on the schedule
            unresolved = True
            log.warning("slot %d: coordination %s, applying schedule", t, solution.status)

    post_violations = (powerflow.check_limits(grid, pf_applied)
                       if (coordinated or unresolved) else [])

    new_states: dict[int, HouseholdState] = {}
    for hid, st in states.items():
        sp = applied[hid]
        st2 = der.step_ev(st, params[hid],
                          min(sp.p_ev, params[hid].ev_charger_p_max),
                          config.dt_hours)
        reference = heat_set[hid] if heat_set is not None else schedule[hid].p_hp_set
        st2 = der.step_tank(st2, params[hid], sp.p_hp, reference,
                            config.dt_hours, cop=config.cop)
        new_states[hid] = st2

    record = SlotRecord(
        slot=t,
        pre_violations=pre_violations,
        post_violations=post_violations,
        coordinated=coordinated,
        unresolved=unresolved,
        setpoints=applied,
        curtailments=curtailments,
        states_after=new_states,
        pf_result=pf_applied,
        socp_v=socp_v,
        socp_l=socp_l,
        relaxation_gaps=gaps,
        objective=objective,
        objective_breakdown=breakdown,
        solver_status=solver_status,
        solve_time=solve_time,
    )
    return record, new_states


def catch_up(states: dict[int, HouseholdState],
             params: dict[int, HouseholdParams],
             work: dict,  # household id -> Profile, mutated in place
             original: dict,  # household id -> Profile as generated
             deviated: dict[int, bool],
             t: int, dt: float) -> list[int]:
    """Reschedule future slots to cancel accumulated deviation.

    EV charging is extended at the charger maximum until the residual
    battery energy is delivered, never beyond the departure slot. Heat
    pump set points are re-planned from the original profile and the
    pending deviation is absorbed earliest-first within [0, hp_p_max];
    planning on top of stale adjustments would double-count. Returns
    household ids whose deviation cannot be absorbed in the remaining
    slots (a satisfaction risk, not an error).
    """
    risks: list[int] = []
    for hid, st in states.items():
        par = params[hid]
        prof = work[hid]
        slots = len(prof.p_ev)
        if st.ev_present and deviated.get(hid, False):
            end = min(st.ev_departure_slot, slots)
            remaining = (1.0 - st.ev_soc) * par.ev_capacity  # kWh into battery
            for k in range(t + 1, end):
                p = min(par.ev_charger_p_max, remaining / (par.ev_efficiency * dt))
                prof.p_ev[k] = p
                remaining -= par.ev_efficiency * p * dt
                if remaining <= 1e-12:
                    remaining = 0.0
                    prof.p_ev[k + 1:end] = 0.0
                    break
            if remaining > 1e-9:
                risks.append(hid)
        pending = st.pending_hp_deviation  # kWh electrical, >0 = consumption owed
        if abs(pending) > 1e-12:
            prof.p_hp[t + 1:] = original[hid].p_hp[t + 1:]
            for k in range(t + 1, slots):
                if pending > 0:
                    delta = min(par.hp_p_max - prof.p_hp[k], pending / dt)
                else:
                    delta = -min(prof.p_hp[k], -pending / dt)
                prof.p_hp[k] += delta
                pending -= delta * dt
                if abs(pending) <= 1e-12:
                    break
            if abs(pending) > 1e-9 and hid not in risks:
                risks.append(hid)
    return risks


def run_horizon(grid: Grid, params: dict[int, HouseholdParams],
                initial_states: dict[int, HouseholdState],
                profiles: dict,  # household id -> Profile
                config: SimulationConfig = SimulationConfig()) -> list[SlotRecord]:
    """Fold the per-slot loop and catch-up over a full schedule horizon."""
    work = {h: p.copy() for h, p in profiles.items()}
    heat_demand = {h: p.p_hp.copy() for h, p in profiles.items()}
    slot_counts = {len(p.p_ev) for p in profiles.values()}
    if len(slot_counts) != 1:
        raise ValueError("profiles disagree on slot count")
    t_max = slot_counts.pop()

    arrivals = {h: int(np.argmax(p.p_ev > 0)) if np.any(p.p_ev > 0) else None
                for h, p in profiles.items()}
    states = dict(initial_states)
    records: list[SlotRecord] = []
    for t in range(t_max):
        for hid, st in states.items():
            if arrivals[hid] is not None and t == arrivals[hid] and not st.ev_present:
                states[hid] = replace(st, ev_present=True)
            elif st.ev_present and t >= st.ev_departure_slot:
                states[hid] = replace(st, ev_present=False)
        schedule = {
            h: ScheduleSlot(
                p_load=float(work[h].p_load[t]), q_load=float(work[h].q_load[t]),
                p_pv_fore=float(work[h].p_pv[t]), p_ev_max=float(work[h].p_ev[t]),
                p_hp_set=float(work[h].p_hp[t]))
            for h in work
        }
        record, states = run_slot(
            grid, params, states, schedule, t, t_max, config,
            heat_set={h: float(heat_demand[h][t]) for h in work})
        if record.coordinated:
            deviated = {
                h: abs(record.setpoints[h].p_ev - schedule[h].p_ev_max) > 1e-12
                for h in schedule
            }
            record.catch_up_risks = catch_up(states, params, work, profiles,
                                             deviated, t, config.dt_hours)
        records.append(record)
    return records
