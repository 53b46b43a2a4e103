"""Multi-period AC optimal power flow with aggregated electric-vehicle charging.

The workflow: parse a MATPOWER case, scale its loads over a day, synthesize EV
aggregators from trip diaries, then trace the cost/emission frontier by
pairing a convex relaxation (lower bounds) with per-period local AC solves
(feasible upper bounds).
"""

from .acopf import (BenchmarkInfeasible, LocalSolveError, ScheduleResult, benchmark_charging,
                    midnight_schedule, solve_local, solve_period, solve_schedule,
                    warm_start_from_socp)
from .case import CaseFormatError, Network, parse_case, read_case, validate
from .conic import CapInfeasibleError, ConicSolution, lower_bound_with_cap, solve_conic, solve_instance
from .fleet import FleetGroup, FleetModel, TripRecord, build_fleet, read_trips
from .formulation import ConicProgram, MopfInstance, assemble_instance, build_acopf_period, build_socp
from .pareto import (ParetoPoint, baseline_generation, benchmark_point, emission_bounds,
                     percent_changes, sweep)
from .timeseries import compute_weight, normalize_profile, scale_loads

__version__ = "0.1.0"
