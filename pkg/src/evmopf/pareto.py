"""Cost/emission trade-off: baseline dispatch, emission range and the cap sweep."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .acopf import (ScheduleResult, WarmStart, benchmark_charging, repair_schedule,
                    solve_schedule, warm_start_from_socp)
from .conic import CapInfeasibleError, ConicSolution, lower_bound_with_cap, solve_instance
from .formulation import ConicProgram, MopfInstance

log = logging.getLogger(__name__)

FRONTIER_FIELDS = ["cap_kg", "ub_cost", "lb_cost", "emission_kg", "gap_pct",
                   "cost_change_pct", "emission_change_pct", "valid", "tag"]
HOURLY_FIELDS = ["period", "gen_excl_ev", "gen_for_ev", "v2g_power"]
DEGENERATE_TOL = 1e-9


class BaseCaseInfeasible(RuntimeError):
    pass


@dataclass(frozen=True)
class BaselineGeneration:
    pg: np.ndarray          # (generator, period), per-unit
    cost: float

    def by_bus(self, network) -> np.ndarray:
        out = np.zeros((network.n_bus, self.pg.shape[1]))
        np.add.at(out, network.gen_bus, self.pg)
        return out


@dataclass
class ParetoPoint:
    cap: float
    ub: float
    lb: float
    emission: float
    gap: float
    ub_periods: np.ndarray
    emission_periods: np.ndarray
    valid: bool
    tag: str = "pareto"
    hourly: dict[str, np.ndarray] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    a: np.ndarray | None = None      # fixed EV schedule behind the upper bound, per-unit
    b: np.ndarray | None = None


def optimality_gap(lb: float, ub: float) -> float:
    return 100.0 * (1.0 - lb / ub)


def baseline_generation(instance: MopfInstance, **solver) -> BaselineGeneration:
    """Cost-minimizing dispatch of the relaxation with no EV load."""
    prog, sol = solve_instance(instance.without_ev().with_objective("cost"), **solver)
    if not sol.optimal:
        raise BaseCaseInfeasible(f"no-EV base case: solver status {sol.status}")
    return BaselineGeneration(sol.x[prog.index["pg"]], sol.objective)


def emission_bounds(instance: MopfInstance, **solver) -> tuple[float, float]:
    """``(LBE, UBE)``: least reachable marginal emission, and that of the cost optimum.

    Without EV groups the instance is the baseline problem itself and both
    bounds are zero.  (Minimizing emission there would only trade generator
    cost for lower network losses, which is not an EV effect.)
    """
    if instance.baseline is None:
        raise ValueError("store the baseline generation in the instance first")
    if instance.n_ev == 0:
        return 0.0, 0.0
    inst = instance.with_cap(None)
    _, low = solve_instance(inst.with_objective("emission"), **solver)
    if not low.optimal:
        raise BaseCaseInfeasible(f"emission minimization: solver status {low.status}")
    prog, high = solve_instance(inst.with_objective("cost"), **solver)
    if not high.optimal:
        raise BaseCaseInfeasible(f"cost minimization: solver status {high.status}")
    lbe = low.objective
    ube = inst.emission(high.x[prog.index["pg"]])
    return lbe, max(ube, lbe)


def _starts(instance: MopfInstance, program: ConicProgram, x: np.ndarray) -> list[WarmStart]:
    vi = program.index
    cii, cij, sij = x[vi["cii"]], x[vi["cij"]], x[vi["sij"]]
    pg, qg = x[vi["pg"]], x[vi["qg"]]
    return [warm_start_from_socp(instance.network, cii[:, t], cij[:, t], sij[:, t], pg[:, t], qg[:, t])
            for t in range(instance.horizon)]


def hourly_profile(instance: MopfInstance, pg: np.ndarray, b: np.ndarray) -> dict[str, np.ndarray]:
    """MW per period: baseline generation, extra generation for EVs, V2G injection."""
    base = instance.base_mva
    p0 = instance.baseline_or_zero()
    v2g = (instance.ev_eta[:, None] * b).sum(axis=0) if instance.n_ev else np.zeros(instance.horizon)
    return {"gen_excl_ev": p0.sum(axis=0) * base,
            "gen_for_ev": (pg - p0).sum(axis=0) * base,
            "v2g_power": v2g * base}


def evaluate_point(instance: MopfInstance, cap: float, sol: ConicSolution, program: ConicProgram,
                   threads: int | None = None, tag: str = "pareto", **solver) -> ParetoPoint:
    """Upper bound from a relaxed solution's EV schedule, then the matching lower bound."""
    vi = program.index
    a, b = repair_schedule(instance, sol.x[vi["a"]], sol.x[vi["b"]])
    result = solve_schedule(instance, a, b, _starts(instance, program, sol.x), threads=threads)
    return _finish_point(instance, cap, result, threads, tag, **solver)


def _finish_point(instance: MopfInstance, cap: float, result: ScheduleResult, threads, tag,
                  fixed_lb: bool = False, **solver) -> ParetoPoint:
    T = instance.horizon
    if not result.valid:
        notes = [str(f) for f in result.failures]
        log.warning("invalid point at cap %.6g: %s", cap, "; ".join(notes))
        nan = np.full(T, np.nan)
        return ParetoPoint(cap, math.nan, math.nan, math.nan, math.nan, result.period_costs, nan,
                           False, tag, notes=notes, a=result.a, b=result.b)
    pg = result.pg()
    em_t = np.array([instance.period_emission(pg[:, t], t) for t in range(T)])
    ub = result.cost
    emission = float(em_t.sum())
    inst = instance.with_schedule(result.a, result.b) if fixed_lb else instance
    try:
        lb_sol = lower_bound_with_cap(inst, emission, **solver)
    except CapInfeasibleError as exc:
        return ParetoPoint(cap, ub, math.nan, emission, math.nan, result.period_costs, em_t, False,
                           tag, hourly_profile(instance, pg, result.b), [str(exc)], result.a, result.b)
    notes = []
    if math.isfinite(cap) and emission > cap + instance.cap_tol * max(1.0, abs(cap)):
        notes.append(f"local solution emits {emission - cap:.6g} kg above the cap")
    if not lb_sol.optimal:
        notes.append(f"lower-bound solve status {lb_sol.status}")
    lb = lb_sol.bound
    gap = optimality_gap(lb, ub)
    return ParetoPoint(cap, ub, lb, emission, gap, result.period_costs, em_t, lb_sol.optimal, tag,
                       hourly_profile(instance, pg, result.b), notes, result.a, result.b)


def cap_grid(lbe: float, ube: float, n: int) -> np.ndarray:
    if n < 2:
        raise ValueError("need at least two sweep points")
    return np.linspace(lbe, ube, n)


def prepare(instance: MopfInstance, **solver) -> MopfInstance:
    """Instance with the no-EV baseline dispatch stored."""
    if instance.baseline is not None:
        return instance
    return instance.with_baseline(baseline_generation(instance, **solver).pg)


def sweep(instance: MopfInstance, n: int = 10, threads: int | None = None, **solver) -> list[ParetoPoint]:
    """Trace the frontier over ``n`` linearly spaced emission caps from LBE to UBE."""
    inst = prepare(instance, **solver)
    lbe, ube = emission_bounds(inst, **solver)
    caps = cap_grid(lbe, ube, n)
    if ube - lbe <= DEGENERATE_TOL * max(1.0, abs(ube)):
        log.warning("emission range [%.6g, %.6g] kg is empty; the frontier is a single point",
                    lbe, ube)
        caps = np.array([ube])
    points = []
    for cap in caps:
        capped = inst.with_cap(float(cap))
        prog, sol = solve_instance(capped, **solver)
        if not sol.optimal:
            points.append(ParetoPoint(float(cap), math.nan, math.nan, math.nan, math.nan,
                                      np.full(inst.horizon, np.nan), np.full(inst.horizon, np.nan),
                                      False, notes=[f"capped relaxation status {sol.status}"]))
            continue
        points.append(evaluate_point(inst, float(cap), sol, prog, threads, **solver))
    return points


def benchmark_point(instance: MopfInstance, threads: int | None = None, **solver) -> ParetoPoint:
    """Midnight charging evaluated like a sweep point.

    Its lower bound is the relaxation with the same fixed schedule.
    """
    inst = prepare(instance, **solver)
    a, b = benchmark_charging(inst)
    result = solve_schedule(inst, a, b, threads=threads)
    point = _finish_point(inst, math.nan, result, threads, "benchmark", fixed_lb=True, **solver)
    point.cap = point.emission
    return point


def no_ev_cost(instance: MopfInstance, threads: int | None = None) -> float:
    """Generation cost of the no-EV case along the same local-solve path."""
    result = solve_schedule(instance.without_ev(), threads=threads)
    if not result.valid:
        raise BaseCaseInfeasible("; ".join(str(f) for f in result.failures))
    return result.cost


def percent_changes(points: list[ParetoPoint], no_ev_cost: float, gasoline_gco2_per_mile: float,
                    total_miles: float) -> list[dict]:
    """Cost change against the no-EV case and emission change against gasoline cars."""
    if no_ev_cost <= 0:
        raise ValueError("no-EV cost must be positive")
    gasoline = gasoline_gco2_per_mile * total_miles / 1000.0
    if gasoline <= 0:
        raise ValueError("gasoline baseline emission must be positive")
    rows = []
    for p in points:
        rows.append({
            "cap_kg": p.cap, "ub_cost": p.ub, "lb_cost": p.lb, "emission_kg": p.emission,
            "gap_pct": p.gap, "cost_change_pct": 100.0 * (p.ub / no_ev_cost - 1.0),
            "emission_change_pct": 100.0 * (p.emission / gasoline - 1.0),
            "valid": p.valid, "tag": p.tag})
    return rows


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def write_frontier(path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRONTIER_FIELDS)
        for r in rows:
            w.writerow([_cell(r[k]) for k in FRONTIER_FIELDS])


def write_hourly(path, point: ParetoPoint) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HOURLY_FIELDS)
        if not point.hourly:
            return
        for t in range(len(point.hourly["gen_excl_ev"])):
            w.writerow([t] + [_cell(float(point.hourly[k][t])) for k in HOURLY_FIELDS[1:]])
