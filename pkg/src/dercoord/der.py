"""Household device models, per-timestep states, and dynamic cost terms.

The cost terms encode demand urgency: EV curtailment cost grows with the
unmet state of charge and the shrinking time to departure; heat-pump
regulation costs grow linearly with the water-tank temperature deviation,
with a floor so curtailment is never free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

WATER_CP = 4.186  # kJ/(kg K)
WATER_RHO = 1.0  # kg/L

COST_FLOOR_HP = 10.0  # EUR/MWh
HP_COST_SLOPE = 150.0  # EUR/MWh per unit of normalized deviation

DEFAULT_C_LOSS = 32.0  # EUR/MWh, average day-ahead price
DEFAULT_C_PV = 200.0  # EUR/MWh, behind-the-meter value
DEFAULT_EV_C0 = 1440.0  # EUR/MWh
DEFAULT_T_MAX = 96  # slots per day at 15 minutes

# cos(phi) = 0.9 for PV and EV inverters, 0.95 for heat pumps
DEFAULT_TAN_PHI_PV = math.tan(math.acos(0.9))
DEFAULT_TAN_PHI_EV = math.tan(math.acos(0.9))
DEFAULT_TAN_PHI_HP = math.tan(math.acos(0.95))


@dataclass(frozen=True)
class HouseholdParams:
    pv_rating: float = 0.0  # kVA apparent limit
    pv_pf_limit: float = DEFAULT_TAN_PHI_PV  # tan(phi) max
    ev_rating: float = 0.0  # kVA apparent limit
    ev_pf_limit: float = DEFAULT_TAN_PHI_EV
    ev_capacity: float = 7.5  # kWh
    ev_charger_p_max: float = 3.68  # kW
    ev_efficiency: float = 0.9  # grid-to-battery
    hp_p_max: float = 0.0  # kW electrical
    hp_tan_phi: float = DEFAULT_TAN_PHI_HP
    tank_volume: float = 1000.0  # liters
    tank_band: float = 5.0  # degC symmetric deviation limit

    def __post_init__(self):
        for name in ("pv_rating", "ev_rating", "ev_capacity",
                     "ev_charger_p_max", "hp_p_max"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 < self.ev_efficiency <= 1.0:
            raise ValueError("ev_efficiency must be in (0, 1]")
        if self.tank_volume <= 0:
            raise ValueError("tank_volume must be positive")
        if self.tank_band <= 0:
            raise ValueError("tank_band must be positive")


@dataclass(frozen=True)
class HouseholdState:
    ev_soc: float = 0.0  # fraction of ev_capacity
    ev_present: bool = False
    ev_departure_slot: int = 0
    tank_dT: float = 0.0  # degC from reference; tracked beyond the band
    pending_hp_deviation: float = 0.0  # kWh electrical still to catch up, signed

    def __post_init__(self):
        if not 0.0 <= self.ev_soc <= 1.0:
            raise ValueError(f"ev_soc {self.ev_soc} outside [0, 1]")


@dataclass(frozen=True)
class ScheduleSlot:
    """One household's intended operation for one slot (kW / kvar)."""
    p_load: float = 0.0
    q_load: float = 0.0
    p_pv_fore: float = 0.0
    p_ev_max: float = 0.0
    p_hp_set: float = 0.0

    def __post_init__(self):
        if self.p_pv_fore < 0 or self.p_ev_max < 0 or self.p_hp_set < 0:
            raise ValueError("device schedule entries must be nonnegative")


@dataclass(frozen=True)
class CostTerms:
    """Loss price plus per-household deviation prices, EUR/MWh."""
    c_loss: float
    c_pv: dict
    c_ev: dict
    c_hp_up: dict
    c_hp_down: dict

    def __post_init__(self):
        if self.c_loss < 0:
            raise ValueError("c_loss must be nonnegative")
        for label, table in (("c_pv", self.c_pv), ("c_ev", self.c_ev)):
            for hid, val in table.items():
                if val < 0:
                    raise ValueError(f"{label}[{hid}] must be nonnegative")
        for label, table in (("c_hp_up", self.c_hp_up), ("c_hp_down", self.c_hp_down)):
            for hid, val in table.items():
                if val < COST_FLOOR_HP:
                    raise ValueError(f"{label}[{hid}] below the {COST_FLOOR_HP} EUR/MWh floor")


def ev_cost(soc: float, t: int, t_max: int = DEFAULT_T_MAX,
            c0: float = DEFAULT_EV_C0) -> float:
    """Curtailment price for an EV at slot t (1-based) of t_max.

    c0 * (1 - soc) / (t_max - t + 1): urgency rises as the battery stays
    empty and the remaining charging window shrinks.
    """
    if not 0.0 <= soc <= 1.0:
        raise ValueError(f"soc {soc} outside [0, 1]")
    if t < 1:
        raise ValueError(f"slot index {t} must be >= 1")
    if t > t_max:
        raise ValueError(f"slot {t} past departure at {t_max}: departed EV must not enter the model")
    return c0 * (1.0 - soc) / (t_max - t + 1)


def hp_costs(tank_dT: float, band: float) -> tuple[float, float]:
    """(upward, downward) regulation prices for a heat pump.

    A hot tank makes extra heating expensive, a cold tank makes
    curtailment expensive; both are floored at 10 EUR/MWh.
    """
    if band <= 0:
        raise ValueError("band must be positive")
    dt_norm = tank_dT / band
    c_up = max(COST_FLOOR_HP, HP_COST_SLOPE * dt_norm)
    c_down = max(COST_FLOOR_HP, -HP_COST_SLOPE * dt_norm)
    return c_up, c_down


def step_ev(state: HouseholdState, params: HouseholdParams,
            p_ev: float, dt: float) -> HouseholdState:
    """Advance the EV state of charge after charging at p_ev kW for dt hours."""
    if p_ev < 0 or p_ev > params.ev_charger_p_max + 1e-9:
        raise ValueError(f"p_ev {p_ev} outside [0, {params.ev_charger_p_max}]")
    if p_ev == 0.0:
        return state
    if not state.ev_present:
        raise ValueError("charging an absent EV")
    soc = state.ev_soc + params.ev_efficiency * p_ev * dt / params.ev_capacity
    return replace(state, ev_soc=min(1.0, soc))


def step_tank(state: HouseholdState, params: HouseholdParams,
              p_hp: float, p_hp_set: float, dt: float,
              cop: float = 3.0) -> HouseholdState:
    """Advance tank temperature after consuming p_hp against a set point.

    First-order lumped energy balance: following the set profile exactly
    holds temperature (the set profile is assumed to meet heat demand);
    deviations integrate through the COP into the tank's water mass.
    """
    if p_hp < 0 or p_hp > params.hp_p_max + 1e-9:
        raise ValueError(f"p_hp {p_hp} outside [0, {params.hp_p_max}]")
    d_kwh = (p_hp - p_hp_set) * dt
    dT = cop * d_kwh * 3600.0 / (WATER_RHO * params.tank_volume * WATER_CP)
    return replace(
        state,
        tank_dT=state.tank_dT + dT,
        pending_hp_deviation=state.pending_hp_deviation - d_kwh,
    )


def tank_volume_for(heat_demand_peak: float) -> float:
    """Tank liters for a household's peak heating demand in kW (thermal)."""
    if heat_demand_peak < 0:
        raise ValueError("heat demand must be nonnegative")
    if heat_demand_peak <= 5.0:
        return 1000.0
    return 1000.0 + 200.0 * (heat_demand_peak - 5.0)


def cost_terms_for(states: dict[int, HouseholdState],
                   params: dict[int, HouseholdParams],
                   t: int, t_max: int = DEFAULT_T_MAX,
                   c_loss: float = DEFAULT_C_LOSS,
                   c_pv: float = DEFAULT_C_PV,
                   ev_c0: float = DEFAULT_EV_C0) -> CostTerms:
    """Assemble the slot's cost terms from the current fleet states.

    t is 1-based. Absent EVs price at zero; heat-pump prices follow the
    tank deviation of each household.
    """
    c_ev: dict[int, float] = {}
    c_up: dict[int, float] = {}
    c_down: dict[int, float] = {}
    pv: dict[int, float] = {}
    for hid, st in states.items():
        par = params[hid]
        pv[hid] = c_pv
        c_ev[hid] = ev_cost(st.ev_soc, t, t_max, ev_c0) if st.ev_present else 0.0
        c_up[hid], c_down[hid] = hp_costs(st.tank_dT, par.tank_band)
    return CostTerms(c_loss=c_loss, c_pv=pv, c_ev=c_ev, c_hp_up=c_up, c_hp_down=c_down)
