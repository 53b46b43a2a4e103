"""Acceptance criteria, each checked at its stated tolerance.

Every test records one PASS/FAIL line; the lines are repeated in the pytest
terminal summary under "acceptance criteria".
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from evmopf.case import read_case
from evmopf.conic import lower_bound_with_cap, solve_instance
from evmopf.fleet import TripRecord, build_fleet, duration_matrix, energy_matrix
from evmopf.formulation import assemble_instance, build_acopf_period
from evmopf.acopf import solve_local
from evmopf.pareto import benchmark_point, emission_bounds, evaluate_point, prepare, sweep
from evmopf.samples import data_path, load_case, season_shapes, synthetic_trips
from evmopf.timeseries import (EmissionSeries, PeriodLoads, compute_weight, read_emissions,
                               scale_loads)

from conftest import ACCEPTANCE, prepared_instance, verdict
from oracles import trip_energy_by_hand, two_bus_grid_optimum

FIXTURES = ["case1", "case2", "case3", "case5"]
SWEEP_POINTS = 10

WEIGHT_ROWS = {
    # grid daily demand, summer and winter household consumption (kWh), expected weight
    "IL": (29276, 149690, 129297, 0.19),
    "NY": (151214, 82575, 69901, 1.83),
    "TX": (1313994, 1256288, 923604, 1.05),
}


@pytest.mark.parametrize("state", [
    pytest.param("IL", marks=pytest.mark.xfail(
        strict=True, reason="29276/149690 = 0.19558 rounds to 0.20, not the expected 0.19")),
    "NY", "TX"])
def test_weight_reproduction(state):
    grid, summer, winter, expected = WEIGHT_ROWS[state]
    t0 = time.perf_counter()
    w = compute_weight(grid, summer, winter)
    elapsed = time.perf_counter() - t0
    ok = round(w, 2) == expected and elapsed < 1.0
    verdict(f"weight reproduction [{state}]", ok, f"{w:.6f} -> {round(w, 2)} vs {expected}")
    assert ok


@pytest.fixture(scope="module")
def sweeps():
    out, t0 = {}, time.perf_counter()
    for case in FIXTURES:
        inst = prepared_instance(case)
        out[case] = (inst, sweep(inst, SWEEP_POINTS))
    return out, time.perf_counter() - t0


def test_relaxation_bound(sweeps):
    results, elapsed = sweeps
    worst, bad = np.inf, []
    for case, (_, points) in results.items():
        for p in points:
            if not p.valid or not (p.lb <= p.ub and p.gap >= -1e-9):
                bad.append(f"{case}@{p.cap:.4g}")
            elif p.valid:
                worst = min(worst, p.gap)
    n = sum(len(pts) for _, pts in results.values())
    ok = not bad and elapsed < 120.0
    verdict("relaxation bound LB <= UB", ok,
            f"{n} points, min gap {worst:.3g}%, {elapsed:.1f}s" + (f", failing {bad}" if bad else ""))
    assert ok


def test_two_bus_oracle():
    t0 = time.perf_counter()
    net = load_case("case2")
    ln, g = net.lines[0], net.generators[0]
    best, point = two_bus_grid_optimum(ln.r, ln.x, ln.b_charge, net.buses[1].pd, net.buses[1].qd,
                                       net.vmin[0], net.vmax[0], g.cost, pmax=g.pmax, qmin=g.qmin,
                                       qmax=g.qmax, smax=ln.s_max, angle_max=ln.angle_max)
    inst = assemble_instance(net, PeriodLoads(net.pd[:, None], net.qd[:, None]), None,
                             EmissionSeries(np.array([400.0])), ev_enabled=False)
    _, relaxed = solve_instance(inst)
    local = solve_local(build_acopf_period(inst, 0))
    elapsed = time.perf_counter() - t0
    lb_ok = relaxed.bound <= best + 1e-4
    ub_ok = abs(local.objective - best) <= 1e-3 * abs(best)
    ok = lb_ok and ub_ok and elapsed < 60.0
    verdict("two-bus grid oracle", ok,
            f"oracle {best:.6f}, LB {relaxed.bound:.6f}, UB {local.objective:.6f}, {elapsed:.1f}s")
    assert ok


def test_trip_energy_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        trips = synthetic_trips(rng, int(rng.integers(3, 40)))
        c_avg = float(rng.uniform(0.2, 0.4))
        em = energy_matrix(duration_matrix(trips), trips, c_avg)
        for v, vid in enumerate(em.vehicle_ids):
            miles = sum(r.miles for r in trips if r.vehicle_id == vid)
            worst = max(worst, abs(em.omega[v].sum() - miles * c_avg))
    fixture = [TripRecord("a", "a1", 7.5, 8.25, 15.0), TripRecord("a", "a2", 17.0, 17.5, 10.0),
               TripRecord("b", "b1", 12.2, 13.7, 30.0)]
    em = energy_matrix(duration_matrix(fixture), fixture, 0.3)
    hand = np.array([np.add(trip_energy_by_hand(7.5, 8.25, 15.0, 0.3),
                            trip_energy_by_hand(17.0, 17.5, 10.0, 0.3)),
                     trip_energy_by_hand(12.2, 13.7, 30.0, 0.3)])
    fixture_err = float(np.max(np.abs(em.omega - hand)))
    ok = worst <= 1e-9 and fixture_err <= 4 * np.finfo(float).eps * float(hand.max())
    verdict("trip energy conservation", ok,
            f"20 sets max error {worst:.2g} kWh, fixture error {fixture_err:.2g}")
    assert ok


def test_stock_conservation(sweeps):
    # imbalance in the model's own unit, per-unit hours; kWh reported alongside
    results, _ = sweeps
    worst, worst_kwh, checked = 0.0, 0.0, 0
    for case, (inst, points) in results.items():
        schedules = [(p.a, p.b) for p in points if p.a is not None]
        prog, relaxed = solve_instance(inst)
        schedules.append((relaxed.x[prog.index["a"]], relaxed.x[prog.index["b"]]))
        bench = benchmark_point(inst)
        schedules.append((bench.a, bench.b))
        for a, b in schedules:
            net = np.abs((inst.ev_eta[:, None] * a - b - inst.ev_c).sum(axis=1))
            worst = max(worst, float(np.max(net, initial=0.0)))
            worst_kwh = max(worst_kwh, 1000.0 * inst.base_mva * float(np.max(net, initial=0.0)))
            checked += 1
    ok = worst <= 1e-6
    verdict("stock conservation", ok,
            f"{checked} schedules, max imbalance {worst:.2g} pu-h ({worst_kwh:.2g} kWh)")
    assert ok


def test_cap_monotonicity():
    worst, details = 0.0, []
    for case in FIXTURES:
        inst = prepared_instance(case)
        lbe, ube = emission_bounds(inst)
        lbs = [lower_bound_with_cap(inst, float(c)).bound for c in np.linspace(lbe, ube, 10)]
        rises = [(hi - lo) / max(1.0, abs(lo)) for lo, hi in zip(lbs[:-1], lbs[1:])]
        worst = max(worst, max(rises))
        details.append(f"{case} {lbs[0]:.6g}->{lbs[-1]:.6g}")
    ok = worst <= 1e-6
    verdict("cap monotonicity", ok, f"largest relative rise {worst:.2g}; " + ", ".join(details))
    assert ok


def test_frontier_beats_benchmark(sweeps):
    results, _ = sweeps
    inst, points = results["case5"]
    bench = benchmark_point(inst)
    winners = [p for p in points if p.valid and p.ub <= bench.ub and p.emission <= bench.emission]
    ok = bench.valid and bool(winners)
    best = min(winners, key=lambda p: p.ub) if winners else None
    verdict("frontier dominates benchmark", ok,
            f"benchmark cost {bench.ub:.2f} emission {bench.emission:.1f} kg; "
            + (f"{len(winners)} dominating points, e.g. cost {best.ub:.2f} emission {best.emission:.1f}"
               if best else "no dominating point"))
    assert ok


PGLIB_ENV = "EVMOPF_PGLIB_CASE200"


def test_large_case_stretch():
    path = os.environ.get(PGLIB_ENV, "")
    if not path or not Path(path).is_file():
        ACCEPTANCE.append(f"200-bus stretch: SKIPPED (set {PGLIB_ENV} to a 200-bus MATPOWER file)")
        pytest.skip(f"set {PGLIB_ENV} to a 200-bus MATPOWER file to run the stretch check")
    t0 = time.perf_counter()
    net = read_case(path)
    raw, shapes = season_shapes()
    loads = scale_loads(net, shapes["summer"])
    weight = compute_weight(float(loads.p.sum()) * net.base_mva, float(raw["summer"].sum()),
                            float(raw["winter"].sum()))
    trips = synthetic_trips(0, 2 * len(net.load_buses))
    fleet = build_fleet(net, trips, weight)
    inst = prepare(assemble_instance(net, loads, fleet,
                                     read_emissions(data_path("emissions_summer.csv"))))
    lbe, ube = emission_bounds(inst)
    cap = 0.5 * (lbe + ube)
    prog, sol = solve_instance(inst.with_cap(cap))
    point = evaluate_point(inst, cap, sol, prog)
    elapsed = time.perf_counter() - t0
    ok = point.valid and point.gap < 5.0 and elapsed < 900.0
    verdict("200-bus stretch", ok, f"gap {point.gap:.3g}%, {elapsed:.0f}s")
    assert ok
