"""Real-time coordination of distributed energy resources in radial LV grids.

Library layout:

- ``grid``       network model, per-unit system, validation, file formats
- ``powerflow``  exact backward/forward sweep and limit checking
- ``der``        device models, states, dynamic cost terms
- ``conic``      standard-form cone programs and the solver adapter
- ``socp``       the coordination model build / solve / extract pipeline
- ``operation``  the per-slot DSO loop, catch-up rescheduling, full horizon
- ``scenario``   synthetic feeders, profiles, Monte Carlo EV arrivals
- ``report``     run summaries, CDFs, CSV/JSON emission
- ``cli``        command-line front end
"""

from .grid import Bus, Grid, Line, downstream_order, load_grid, load_grid_csv, validate
from .powerflow import Injection, PowerFlowResult, Violation, check_limits
from .powerflow import solve as solve_power_flow
from .der import (CostTerms, HouseholdParams, HouseholdState, ScheduleSlot,
                  ev_cost, hp_costs, step_ev, step_tank, tank_volume_for)
from .socp import (CoordinationProblem, CoordinationResult, Curtailments,
                   Setpoints, build, extract, relaxation_gap)
from .operation import SimulationConfig, SlotRecord, run_horizon, run_slot
from .scenario import Profile, ScenarioConfig, acceptance_feeder, generate
from .report import RunSummary, emit, summarize

__version__ = "0.1.0"

__all__ = [
    "Bus", "Grid", "Line", "downstream_order", "load_grid", "load_grid_csv",
    "validate", "Injection", "PowerFlowResult", "Violation", "check_limits",
    "solve_power_flow", "CostTerms", "HouseholdParams", "HouseholdState",
    "ScheduleSlot", "ev_cost", "hp_costs", "step_ev", "step_tank",
    "tank_volume_for", "CoordinationProblem", "CoordinationResult",
    "Curtailments", "Setpoints", "build", "extract", "relaxation_gap",
    "SimulationConfig", "SlotRecord", "run_horizon", "run_slot", "Profile",
    "ScenarioConfig", "acceptance_feeder", "generate", "RunSummary", "emit",
    "summarize", "__version__",
]
