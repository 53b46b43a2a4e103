"""Feasible upper bounds: per-period polar AC-OPF solves and the midnight benchmark."""

from __future__ import annotations

import logging
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .formulation import MopfInstance, PeriodProblem, build_acopf_period
from .nlp import interior_point

log = logging.getLogger(__name__)

FEAS_TOL = 1e-6


class LocalSolveError(RuntimeError):
    """A period subproblem did not reach a feasible local optimum."""

    def __init__(self, period: int, reason: str, residual: float, iterations: int = 0):
        self.period = period
        self.reason = reason
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"period {period}: {reason} (residual {residual:.3g})")


class BenchmarkInfeasible(ValueError):
    pass


@dataclass(frozen=True)
class PeriodSolution:
    period: int
    vm: np.ndarray
    va: np.ndarray
    pg: np.ndarray
    qg: np.ndarray
    flows: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]   # pf, qf, pt, qt
    objective: float
    residual: float
    iterations: int
    start: str = "warm"


@dataclass(frozen=True)
class WarmStart:
    vm: np.ndarray
    va: np.ndarray
    pg: np.ndarray | None = None
    qg: np.ndarray | None = None
    cycle_residuals: dict[tuple[int, int], float] = field(default_factory=dict)


def flat_start(problem: PeriodProblem) -> WarmStart:
    nb = problem.network.n_bus
    return WarmStart(np.ones(nb), np.zeros(nb))


def warm_start_from_socp(network, cii: np.ndarray, cij: np.ndarray, sij: np.ndarray,
                         pg: np.ndarray | None = None, qg: np.ndarray | None = None) -> WarmStart:
    """Recover a polar point from one period of a relaxed solution.

    Magnitudes are ``sqrt(cii)``; angles follow ``tj - ti = atan2(sij, cij)``
    along a breadth-first spanning tree from the reference bus.  Pairs off the
    tree report their wrapped angle mismatch in ``cycle_residuals``.
    """
    nb = network.n_bus
    vm = np.sqrt(np.maximum(cii, 0.0))
    diff = np.arctan2(sij, cij)           # theta_j - theta_i for pair (i, j), i < j
    adj: list[list[tuple[int, int, float]]] = [[] for _ in range(nb)]
    for k, (i, j) in enumerate(network.pairs):
        adj[i].append((j, k, diff[k]))
        adj[j].append((i, k, -diff[k]))
    va = np.full(nb, np.nan)
    tree = set()
    for root in [network.ref] + list(range(nb)):
        if not np.isnan(va[root]):
            continue
        va[root] = 0.0
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for w, k, d in adj[u]:
                if np.isnan(va[w]):
                    va[w] = va[u] + d
                    tree.add(k)
                    queue.append(w)
    cycles = {}
    for k, (i, j) in enumerate(network.pairs):
        if k not in tree:
            r = va[j] - va[i] - diff[k]
            cycles[(network.bus_ids[i], network.bus_ids[j])] = float(
                math.remainder(r, 2 * math.pi))
    return WarmStart(vm, va, pg, qg, cycles)


def solve_local(problem: PeriodProblem, start: WarmStart | None = None, *,
                max_iter: int = 200, label: str = "warm") -> PeriodSolution:
    """Locally optimal feasible point of one period subproblem.

    Raises :class:`LocalSolveError` when the interior-point iteration stops
    without a point meeting the feasibility tolerance.
    """
    start = start or flat_start(problem)
    lo, hi = problem.bounds()
    nb, ng = problem.network.n_bus, problem.network.n_gen
    pg0 = start.pg if start.pg is not None else 0.5 * (problem.pmin + problem.pmax)
    qg0 = start.qg if start.qg is not None else 0.5 * (problem.qmin + problem.qmax)
    x0 = np.concatenate([start.va, start.vm, pg0, qg0])
    x0 = np.clip(x0, lo, hi)
    span = np.isfinite(lo) & np.isfinite(hi) & (hi > lo)
    width = hi[span] - lo[span]
    x0[span] = np.clip(x0[span], lo[span] + 1e-4 * width, hi[span] - 1e-4 * width)

    grad0, _ = problem.objective_derivs(x0)
    obj_scale = 1.0 / max(1.0, float(np.max(np.abs(grad0), initial=0.0)))

    def f_fn(x):
        grad, _ = problem.objective_derivs(x)
        return problem.objective(x), grad

    def hess_fn(x, lam, mu, scale):
        return problem.lagrangian_hessian(x, lam, mu, scale)

    res = interior_point(f_fn, problem.equality, problem.inequality, hess_fn, x0, lo, hi,
                         max_iter=max_iter, obj_scale=obj_scale)
    x = res.x
    g, _ = problem.equality(x)
    h, _ = problem.inequality(x)
    resid = float(max(np.max(np.abs(g), initial=0.0), np.max(h, initial=0.0),
                      np.max(lo - x, initial=0.0), np.max(x - hi, initial=0.0)))
    if not res.converged or resid > FEAS_TOL:
        raise LocalSolveError(problem.period, res.message if not res.converged else "infeasible point",
                              resid, res.iterations)
    va, vm, pg, qg = problem.split(x)
    return PeriodSolution(problem.period, vm.copy(), va.copy(), pg.copy(), qg.copy(),
                          problem.flows(x), problem.objective(x), resid, res.iterations, label)


def solve_period(instance: MopfInstance, t: int, a_t=None, b_t=None,
                 start: WarmStart | None = None) -> PeriodSolution:
    """Warm-started solve with one retry from a flat start."""
    problem = build_acopf_period(instance, t, a_t, b_t)
    try:
        return solve_local(problem, start, label="warm" if start is not None else "flat")
    except LocalSolveError as exc:
        if start is None:
            raise
        log.info("period %d: warm start failed (%s), retrying flat", t, exc.reason)
        return solve_local(problem, None, label="flat")


@dataclass(frozen=True)
class ScheduleResult:
    """Per-period solves of one fixed EV schedule."""

    periods: list[PeriodSolution | LocalSolveError]
    a: np.ndarray
    b: np.ndarray

    @property
    def valid(self) -> bool:
        return all(isinstance(p, PeriodSolution) for p in self.periods)

    @property
    def failures(self) -> list[LocalSolveError]:
        return [p for p in self.periods if isinstance(p, LocalSolveError)]

    @property
    def period_costs(self) -> np.ndarray:
        return np.array([p.objective if isinstance(p, PeriodSolution) else np.nan
                         for p in self.periods])

    @property
    def cost(self) -> float:
        return float(np.sum(self.period_costs)) if self.valid else math.nan

    def pg(self) -> np.ndarray:
        return np.stack([p.pg for p in self.periods], axis=1)


def solve_schedule(instance: MopfInstance, a: np.ndarray | None = None, b: np.ndarray | None = None,
                   starts: list[WarmStart | None] | None = None,
                   threads: int | None = None) -> ScheduleResult:
    """Solve all periods with the EV schedule fixed; periods run concurrently."""
    T = instance.horizon
    ne = instance.n_ev
    a = np.zeros((ne, T)) if a is None else np.asarray(a)
    b = np.zeros((ne, T)) if b is None else np.asarray(b)
    starts = starts or [None] * T

    def one(t):
        try:
            return solve_period(instance, t, a[:, t], b[:, t], starts[t])
        except LocalSolveError as exc:
            return exc

    if threads is not None and threads <= 1:
        periods = [one(t) for t in range(T)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            periods = list(pool.map(one, range(T)))
    return ScheduleResult(periods, a, b)


def repair_schedule(instance: MopfInstance, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Clip a relaxed EV schedule to its power bounds and restore exact stock balance.

    Solver output can sit a hair outside ``[0, a_max]`` and the clipping then
    leaves a small end-of-day energy surplus or deficit.  That residual is
    spread over charging headroom (deficit) or charging volume (surplus),
    falling back to discharging.
    """
    a = np.clip(np.asarray(a, dtype=float), 0.0, instance.ev_a_max)
    b = np.clip(np.asarray(b, dtype=float), 0.0, instance.ev_b_max)
    for e in range(instance.n_ev):
        eta = instance.ev_eta[e]
        ae, be = a[e], b[e]
        d = float(np.sum(eta * ae - be - instance.ev_c[e]))   # end-of-day surplus
        if d < 0:       # more charging, then less discharging
            moves = ((ae, instance.ev_a_max[e] - ae, 1.0, eta), (be, be.copy(), -1.0, 1.0))
        else:           # less charging, then more discharging
            moves = ((ae, ae.copy(), -1.0, eta), (be, instance.ev_b_max[e] - be, 1.0, 1.0))
        for arr, room, sign, gain in moves:
            total = float(room.sum())
            if d == 0.0 or total <= 0.0:
                continue
            step = min(abs(d) / gain, total)
            arr += sign * step * room / total
            d += np.sign(-d) * step * gain
    return a, b


def midnight_schedule(c: np.ndarray, a_max: np.ndarray, eta: float, s_max: np.ndarray | float = np.inf,
                      s_min: np.ndarray | float = 0.0, initial: float = 0.0) -> np.ndarray:
    """Charge as fast as allowed from the first period until the day's demand is stored.

    Units are whatever the inputs use (kWh and kW, or per-unit).  Raises
    :class:`BenchmarkInfeasible` if the stock would leave its bounds.
    """
    c = np.asarray(c, dtype=float)
    T = len(c)
    a_max = np.broadcast_to(np.asarray(a_max, dtype=float), (T,))
    s_max = np.broadcast_to(np.asarray(s_max, dtype=float), (T,))
    s_min = np.broadcast_to(np.asarray(s_min, dtype=float), (T,))
    need = float(c.sum())
    a = np.zeros(T)
    s = initial
    tol = 1e-9 * max(1.0, need)
    for t in range(T):
        if s < s_min[t] - tol:
            raise BenchmarkInfeasible(f"stock {s:.6g} below minimum {s_min[t]:.6g} at period {t}")
        room = (s_max[t + 1] if t + 1 < T else np.inf) - (s - c[t])
        a[t] = max(0.0, min(a_max[t], need / eta, room / eta))
        need -= eta * a[t]
        s += eta * a[t] - c[t]
    if abs(s - initial) > tol:
        raise BenchmarkInfeasible(f"charging windows cannot cover demand, short by {-(s - initial):.6g}")
    return a


def benchmark_charging(instance: MopfInstance) -> tuple[np.ndarray, np.ndarray]:
    """Uncoordinated schedule: every group charges at full rate from midnight, no V2G."""
    ne, T = instance.n_ev, instance.horizon
    a = np.zeros((ne, T))
    for e in range(ne):
        try:
            a[e] = midnight_schedule(instance.ev_c[e], instance.ev_a_max[e], instance.ev_eta[e],
                                     instance.ev_s_max[e], instance.ev_s_min[e],
                                     instance.ev_initial[e])
        except BenchmarkInfeasible as exc:
            bus = instance.network.bus_ids[instance.ev_bus[e]]
            raise BenchmarkInfeasible(f"bus {bus}: {exc}") from None
    return a, np.zeros((ne, T))
