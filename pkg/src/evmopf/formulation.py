"""Multi-period EV-aware OPF instances and their mathematical programs.

Units: powers are per-unit on ``network.base_mva``; one period is one hour,
so EV energies are per-unit hours.  A kWh quantity enters the instance as
``kwh / (1000 * base_mva)``.  Emissions are kg: per-unit power times
``base_mva`` gives MW (= MWh per period), multiplied by the kg/MWh factors.

Variable counts of :func:`build_socp`, with ``T`` periods, ``G`` generators
(``Gq`` of them with a quadratic cost term), ``B`` buses, ``P`` distinct
connected bus pairs, ``L`` lines and ``E`` EV groups::

    n = T * (2G + Gq + B + 2P + 4L + 2E) + E * (T + 1)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
import scipy.sparse as sp

from .case import Network
from .fleet import FleetModel
from .timeseries import EmissionSeries, PeriodLoads

KWH_PER_MWH = 1000.0


@dataclass(frozen=True)
class MopfInstance:
    network: Network
    pd: np.ndarray                       # (bus, period)
    qd: np.ndarray
    pmin: np.ndarray                     # per generator
    pmax: np.ndarray
    qmin: np.ndarray
    qmax: np.ndarray
    emissions: np.ndarray | None = None  # kg/MWh per period
    ev_bus: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    ev_c: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    ev_a_max: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    ev_b_max: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    ev_s_min: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    ev_s_max: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    ev_eta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ev_initial: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ev_miles: float = 0.0
    cap: float | None = None
    cap_tol: float = 1e-7
    baseline: np.ndarray | None = None   # (generator, period)
    objective: Literal["cost", "emission"] = "cost"
    ev_enabled: bool = True
    v2g_enabled: bool = True
    fixed_a: np.ndarray | None = None
    fixed_b: np.ndarray | None = None

    @property
    def horizon(self) -> int:
        return self.pd.shape[1]

    @property
    def n_ev(self) -> int:
        return len(self.ev_bus)

    @property
    def base_mva(self) -> float:
        return self.network.base_mva

    def with_cap(self, cap: float | None) -> "MopfInstance":
        if cap is not None and self.emissions is None:
            raise ValueError("an emission cap needs an emission series")
        return replace(self, cap=None if cap is None or math.isinf(cap) else float(cap))

    def with_baseline(self, baseline: np.ndarray) -> "MopfInstance":
        return replace(self, baseline=np.asarray(baseline, dtype=float))

    def with_objective(self, objective: str) -> "MopfInstance":
        if objective not in ("cost", "emission"):
            raise ValueError(f"unknown objective {objective!r}")
        return replace(self, objective=objective)

    def with_schedule(self, a: np.ndarray | None, b: np.ndarray | None) -> "MopfInstance":
        return replace(self, fixed_a=a, fixed_b=b)

    def without_ev(self) -> "MopfInstance":
        return replace(self, ev_bus=np.zeros(0, dtype=int), ev_c=np.zeros((0, self.horizon)),
                       ev_a_max=np.zeros((0, self.horizon)), ev_b_max=np.zeros((0, self.horizon)),
                       ev_s_min=np.zeros((0, self.horizon)), ev_s_max=np.zeros((0, self.horizon)),
                       ev_eta=np.zeros(0), ev_initial=np.zeros(0), ev_enabled=False,
                       fixed_a=None, fixed_b=None, cap=None)

    def bus_generation_bounds(self) -> tuple[np.ndarray, ...]:
        """Summed generator bounds per bus; zero at buses without generators."""
        nb = self.network.n_bus
        gb = self.network.gen_bus
        return tuple(np.bincount(gb, weights=v, minlength=nb)
                     for v in (self.pmin, self.pmax, self.qmin, self.qmax))

    def baseline_or_zero(self) -> np.ndarray:
        if self.baseline is None:
            return np.zeros((self.network.n_gen, self.horizon))
        return self.baseline

    def emission_factors_pu(self) -> np.ndarray:
        """kg per per-unit-hour of generation, by period."""
        if self.emissions is None:
            raise ValueError("instance has no emission series")
        return self.emissions * self.base_mva

    def period_emission(self, pg: np.ndarray, t: int) -> float:
        """Marginal emission (kg) of generator outputs ``pg`` in period ``t``."""
        e = self.emission_factors_pu()[t]
        return float(e * np.sum(pg - self.baseline_or_zero()[:, t]))

    def emission(self, pg: np.ndarray) -> float:
        """Marginal emission (kg) of a full ``(generator, period)`` dispatch."""
        e = self.emission_factors_pu()
        return float(np.sum((pg - self.baseline_or_zero()) * e[None, :]))

    def generation_cost(self, pg: np.ndarray) -> float:
        cost = np.array([g.cost for g in self.network.generators]).reshape(-1, 3)
        pg = np.asarray(pg).reshape(len(cost), -1)
        return float(np.sum(cost[:, :1] * pg ** 2 + cost[:, 1:2] * pg + cost[:, 2:3]))


def assemble_instance(network: Network, loads: PeriodLoads, fleet: FleetModel | None = None,
                      emissions: EmissionSeries | None = None, *, cap: float | None = None,
                      baseline: np.ndarray | None = None, ev_enabled: bool = True,
                      v2g_enabled: bool = True, objective: str = "cost",
                      kwh_to_pu: float | None = None) -> MopfInstance:
    """Bind network, loads, fleet and emission factors into one instance.

    ``kwh_to_pu`` overrides the kWh to per-unit-hour factor
    (default ``1 / (1000 * base_mva)``).
    """
    T = loads.horizon
    if loads.p.shape[0] != network.n_bus:
        raise ValueError("load matrix does not match the network")
    if emissions is not None and emissions.horizon != T:
        raise ValueError(f"emission series has {emissions.horizon} periods, loads have {T}")
    if fleet is not None and fleet.groups and fleet.horizon != T:
        raise ValueError(f"fleet horizon {fleet.horizon} does not match loads ({T})")
    if cap is not None and emissions is None:
        raise ValueError("an emission cap needs an emission series")
    if objective not in ("cost", "emission"):
        raise ValueError(f"unknown objective {objective!r}")

    gens = network.generators
    pmin = np.array([0.0 if g.zero_cost else g.pmin for g in gens])
    pmax = np.array([g.pmax for g in gens])
    qmin = np.array([g.qmin for g in gens])
    qmax = np.array([g.qmax for g in gens])

    to_pu = kwh_to_pu if kwh_to_pu is not None else 1.0 / (KWH_PER_MWH * network.base_mva)
    groups = list(fleet.groups.values()) if (fleet is not None and ev_enabled) else []
    groups = [g for g in groups if network.buses[g.bus].pd != 0]

    def stack(attr):
        if not groups:
            return np.zeros((0, T))
        return np.array([getattr(g, attr) for g in groups], dtype=float) * to_pu

    b_max = stack("b_max")
    if not v2g_enabled:
        b_max = np.zeros_like(b_max)
    return MopfInstance(
        network=network, pd=loads.p.copy(), qd=loads.q.copy(),
        pmin=pmin, pmax=pmax, qmin=qmin, qmax=qmax,
        emissions=None if emissions is None else np.asarray(emissions.values, dtype=float),
        ev_bus=np.array([g.bus for g in groups], dtype=int),
        ev_c=stack("c"), ev_a_max=stack("a_max"), ev_b_max=b_max,
        ev_s_min=stack("s_min"), ev_s_max=stack("s_max"),
        ev_eta=np.array([g.eta for g in groups], dtype=float),
        ev_initial=np.array([g.initial for g in groups], dtype=float) * to_pu,
        ev_miles=float(sum(g.miles for g in groups)),
        cap=cap, baseline=baseline, objective=objective,
        ev_enabled=ev_enabled and bool(groups), v2g_enabled=v2g_enabled)


class VariableIndex:
    """Dense map from named variable blocks to column indices."""

    def __init__(self):
        self.blocks: dict[str, tuple[int, tuple[int, ...]]] = {}
        self.n = 0

    def add(self, name: str, shape: tuple[int, ...]) -> np.ndarray:
        size = int(np.prod(shape)) if shape else 1
        self.blocks[name] = (self.n, shape)
        self.n += size
        return self[name]

    def __getitem__(self, name: str) -> np.ndarray:
        off, shape = self.blocks[name]
        return off + np.arange(int(np.prod(shape))).reshape(shape)

    def __contains__(self, name: str) -> bool:
        return name in self.blocks

    def value(self, x: np.ndarray, name: str) -> np.ndarray:
        return x[self[name]]

    def names(self) -> list[str]:
        out = [""] * self.n
        for name, (off, shape) in self.blocks.items():
            for k, idx in enumerate(np.ndindex(*shape)):
                out[off + k] = f"{name}[{','.join(map(str, idx))}]"
        return out


def socp_variable_count(network: Network, horizon: int, n_ev: int) -> int:
    nq = sum(1 for g in network.generators if g.cost[0] > 0)
    return (horizon * (2 * network.n_gen + nq + network.n_bus + 2 * len(network.pairs)
                       + 4 * network.n_line + 2 * n_ev) + n_ev * (horizon + 1))


@dataclass
class ConicProgram:
    """``min c.x + c0`` s.t. ``A_eq x = b_eq``, ``A_ub x <= b_ub``, ``lb <= x <= ub`` and
    ``F x + g`` in a product of cones.

    ``cones`` lists ``(kind, dim)`` over consecutive rows of ``F``; ``"soc"`` is
    ``u0 >= ||u[1:]||`` and ``"rsoc"`` is ``2 u0 u1 >= ||u[2:]||**2, u0, u1 >= 0``.

    ``box_lo``/``box_hi`` are optional bounds implied by the constraints (or
    satisfied by some optimal point); they are never imposed, only used to
    turn an inexact dual solution into a valid lower bound.
    """

    c: np.ndarray
    c0: float
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    F: sp.csr_matrix
    g: np.ndarray
    cones: list[tuple[str, int]]
    index: VariableIndex | None = None
    names: list[str] | None = None
    box_lo: np.ndarray | None = None
    box_hi: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.c)

    def check(self) -> None:
        n = self.n
        for name, mat, rhs in (("eq", self.A_eq, self.b_eq), ("ub", self.A_ub, self.b_ub),
                               ("cone", self.F, self.g)):
            if mat.shape != (len(rhs), n):
                raise ValueError(f"{name} block has shape {mat.shape}, expected ({len(rhs)}, {n})")
        if sum(d for _, d in self.cones) != self.F.shape[0]:
            raise ValueError("cone dimensions do not cover the cone rows")
        for kind, d in self.cones:
            if kind not in ("soc", "rsoc") or d < (1 if kind == "soc" else 2):
                raise ValueError(f"bad cone ({kind}, {d})")
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ValueError("bound vectors have the wrong length")

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x + self.c0)

    def residuals(self, x: np.ndarray) -> dict[str, float]:
        """Largest violation of each constraint family at ``x``."""
        out = {
            "eq": float(np.max(np.abs(self.A_eq @ x - self.b_eq), initial=0.0)),
            "ub": float(np.max(self.A_ub @ x - self.b_ub, initial=0.0)),
            "bounds": float(max(np.max(self.lb - x, initial=0.0), np.max(x - self.ub, initial=0.0))),
        }
        u = self.F @ x + self.g
        worst = 0.0
        row = 0
        for kind, d in self.cones:
            v = u[row:row + d]
            row += d
            if kind == "soc":
                worst = max(worst, np.linalg.norm(v[1:]) - v[0])
            else:   # same cone written as a standard one, so the measure is in norm units
                lhs = np.hypot(np.linalg.norm(v[2:]), (v[0] - v[1]) * math.sqrt(0.5))
                worst = max(worst, lhs - (v[0] + v[1]) * math.sqrt(0.5))
        out["cone"] = float(max(worst, 0.0))
        return out


class _Rows:
    """Accumulates sparse rows as COO triplets."""

    def __init__(self, n: int):
        self.n = n
        self.m = 0
        self.i: list[np.ndarray] = []
        self.j: list[np.ndarray] = []
        self.v: list[np.ndarray] = []
        self.rhs: list[np.ndarray] = []

    def new(self, count: int, rhs) -> np.ndarray:
        rows = self.m + np.arange(count)
        self.m += count
        self.rhs.append(np.broadcast_to(np.asarray(rhs, dtype=float), (count,)).copy())
        return rows

    def add(self, rows, cols, vals=1.0) -> None:
        rows, cols, vals = np.broadcast_arrays(np.asarray(rows), np.asarray(cols),
                                               np.asarray(vals, dtype=float))
        self.i.append(rows.ravel())
        self.j.append(cols.ravel())
        self.v.append(vals.ravel())

    def matrix(self) -> tuple[sp.csr_matrix, np.ndarray]:
        if self.i:
            i, j, v = (np.concatenate(a) for a in (self.i, self.j, self.v))
        else:
            i = j = np.zeros(0, dtype=int)
            v = np.zeros(0)
        mat = sp.coo_matrix((v, (i, j)), shape=(self.m, self.n)).tocsr()
        mat.eliminate_zeros()
        rhs = np.concatenate(self.rhs) if self.rhs else np.zeros(0)
        return mat, rhs


def build_socp(instance: MopfInstance) -> ConicProgram:
    """Second-order cone relaxation of the multi-period problem.

    Voltage products are lifted to ``cii = |Vi|^2``, ``cij``, ``sij`` per bus
    pair and the rank condition is relaxed to ``cij^2 + sij^2 <= cii cjj``.
    Phase angles and their limits do not appear.
    """
    net = instance.network
    T = instance.horizon
    nb, ng, nl = net.n_bus, net.n_gen, net.n_line
    npair = len(net.pairs)
    ne = instance.n_ev
    la = net.line_arrays
    cost = np.array([g.cost for g in net.generators]).reshape(ng, 3)
    if np.any(cost[:, 0] < 0):
        raise ValueError("nonconvex generator cost")
    quad = np.flatnonzero(cost[:, 0] > 0)

    vi = VariableIndex()
    pg = vi.add("pg", (ng, T))
    qg = vi.add("qg", (ng, T))
    cii = vi.add("cii", (nb, T))
    cij = vi.add("cij", (npair, T))
    sij = vi.add("sij", (npair, T))
    pf = vi.add("pf", (nl, T))
    qf = vi.add("qf", (nl, T))
    pt = vi.add("pt", (nl, T))
    qt = vi.add("qt", (nl, T))
    a = vi.add("a", (ne, T))
    b = vi.add("b", (ne, T))
    s = vi.add("s", (ne, T + 1))
    z = vi.add("z", (len(quad), T))
    n = vi.n

    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    lb[pg] = instance.pmin[:, None]
    ub[pg] = instance.pmax[:, None]
    lb[qg] = instance.qmin[:, None]
    ub[qg] = instance.qmax[:, None]
    lb[cii] = (net.vmin ** 2)[:, None]
    ub[cii] = (net.vmax ** 2)[:, None]
    if ne:
        lb[a] = 0.0
        ub[a] = instance.ev_a_max
        lb[b] = 0.0
        ub[b] = instance.ev_b_max
        if instance.fixed_a is not None:
            lb[a] = ub[a] = instance.fixed_a
        if instance.fixed_b is not None:
            lb[b] = ub[b] = instance.fixed_b
        lb[s[:, :T]] = instance.ev_s_min
        ub[s[:, :T]] = instance.ev_s_max
        lb[s[:, 0]] = ub[s[:, 0]] = instance.ev_initial
        lb[s[:, T]] = ub[s[:, T]] = instance.ev_initial
    lb[z] = 0.0

    eq = _Rows(n)
    gs = np.array([bb.gs for bb in net.buses])
    bs = np.array([bb.bs for bb in net.buses])
    tt = np.arange(T)[None, :]

    # bus balances
    rp = eq.new(nb * T, instance.pd.ravel()).reshape(nb, T)
    eq.add(rp[net.gen_bus], pg, 1.0)
    eq.add(rp[la["f"]], pf, -1.0)
    eq.add(rp[la["t"]], pt, -1.0)
    eq.add(rp, cii, -gs[:, None])
    if ne:
        eq.add(rp[instance.ev_bus], a, -1.0)
        eq.add(rp[instance.ev_bus], b, instance.ev_eta[:, None])
    rq = eq.new(nb * T, instance.qd.ravel()).reshape(nb, T)
    eq.add(rq[net.gen_bus], qg, 1.0)
    eq.add(rq[la["f"]], qf, -1.0)
    eq.add(rq[la["t"]], qt, -1.0)
    eq.add(rq, cii, bs[:, None])

    # line flow definitions
    k = net.line_pair
    o = net.line_orientation[:, None].astype(float)
    f, t_ = la["f"], la["t"]
    col = lambda name: la[name][:, None]
    r = eq.new(nl * T, 0.0).reshape(nl, T)
    eq.add(r, pf, 1.0)
    eq.add(r, cii[f], -col("g_from"))
    eq.add(r, cij[k], col("g_ij"))
    eq.add(r, sij[k], -col("b_ij") * o)
    r = eq.new(nl * T, 0.0).reshape(nl, T)
    eq.add(r, qf, 1.0)
    eq.add(r, cii[f], col("b_from"))
    eq.add(r, cij[k], -col("b_ij"))
    eq.add(r, sij[k], -col("g_ij") * o)
    r = eq.new(nl * T, 0.0).reshape(nl, T)
    eq.add(r, pt, 1.0)
    eq.add(r, cii[t_], -col("g_to"))
    eq.add(r, cij[k], col("g_ji"))
    eq.add(r, sij[k], col("b_ji") * o)
    r = eq.new(nl * T, 0.0).reshape(nl, T)
    eq.add(r, qt, 1.0)
    eq.add(r, cii[t_], col("b_to"))
    eq.add(r, cij[k], -col("b_ji"))
    eq.add(r, sij[k], col("g_ji") * o)

    # EV stock balance: s[t+1] - s[t] - eta a[t] + b[t] = -c[t]
    if ne:
        r = eq.new(ne * T, -instance.ev_c.ravel()).reshape(ne, T)
        eq.add(r, s[:, 1:], 1.0)
        eq.add(r, s[:, :T], -1.0)
        eq.add(r, a, -instance.ev_eta[:, None])
        eq.add(r, b, 1.0)

    c = np.zeros(n)
    c0 = 0.0
    ineq = _Rows(n)
    if instance.objective == "cost":
        c[pg] = cost[:, 1:2]
        c[z] = 1.0
        c0 = float(cost[:, 2].sum() * T)
    else:
        e = instance.emission_factors_pu()
        c[pg] = e[None, :]
        c0 = -float(np.sum(instance.baseline_or_zero() * e[None, :]))
    if instance.cap is not None:
        e = instance.emission_factors_pu()
        rhs = (instance.cap + float(np.sum(instance.baseline_or_zero() * e[None, :]))
               + instance.cap_tol * max(1.0, abs(instance.cap)))
        r = ineq.new(1, rhs)
        ineq.add(np.full(pg.shape, r[0]), pg, np.broadcast_to(e[None, :], pg.shape))

    # cones
    cone = _Rows(n)
    kinds: list[tuple[str, int]] = []
    pi, pj = (np.array([p[0] for p in net.pairs], dtype=int),
              np.array([p[1] for p in net.pairs], dtype=int))
    # rows of one block of identical cones: (count, dim) index grid
    if npair:
        rows = cone.new(npair * T * 4, 0.0).reshape(npair, T, 4)
        cone.add(rows[..., 0], cii[pi], 1.0)
        cone.add(rows[..., 1], cii[pj], 0.5)
        cone.add(rows[..., 2], cij, 1.0)
        cone.add(rows[..., 3], sij, 1.0)
        kinds += [("rsoc", 4)] * (npair * T)
    finite = np.flatnonzero(np.isfinite(la["s_max"]))
    for pv, qv in ((pf, qf), (pt, qt)):
        if len(finite):
            cnt = len(finite) * T
            rhs = np.zeros((len(finite), T, 3))
            rhs[..., 0] = la["s_max"][finite, None]
            rows = cone.new(cnt * 3, rhs.ravel()).reshape(len(finite), T, 3)
            cone.add(rows[..., 1], pv[finite], 1.0)
            cone.add(rows[..., 2], qv[finite], 1.0)
            kinds += [("soc", 3)] * cnt
    if len(quad):
        rhs = np.zeros((len(quad), T, 3))
        rhs[..., 1] = 0.5
        rows = cone.new(len(quad) * T * 3, rhs.ravel()).reshape(len(quad), T, 3)
        cone.add(rows[..., 0], z, 1.0)
        cone.add(rows[..., 2], pg[quad], np.sqrt(cost[quad, 0])[:, None])
        kinds += [("rsoc", 3)] * (len(quad) * T)

    # implied boxes for the dual bound
    box_lo, box_hi = lb.copy(), ub.copy()
    vmax = net.vmax
    m = (vmax[pi] * vmax[pj])[:, None]
    for blk in (cij, sij):
        box_lo[blk], box_hi[blk] = -m, m
    vf, vt = vmax[f], vmax[t_]
    for blk, self_g, mut in ((pf, np.abs(la["g_from"]) * vf ** 2, np.abs(la["g_ij"]) + np.abs(la["b_ij"])),
                             (qf, np.abs(la["b_from"]) * vf ** 2, np.abs(la["g_ij"]) + np.abs(la["b_ij"])),
                             (pt, np.abs(la["g_to"]) * vt ** 2, np.abs(la["g_ji"]) + np.abs(la["b_ji"])),
                             (qt, np.abs(la["b_to"]) * vt ** 2, np.abs(la["g_ji"]) + np.abs(la["b_ji"]))):
        lim = np.minimum(self_g + mut * vf * vt, la["s_max"])[:, None]
        box_lo[blk], box_hi[blk] = -lim, lim
    if len(quad):
        # an optimal point has z = c2 pg^2
        pbig = np.maximum(np.abs(instance.pmin), np.abs(instance.pmax))[quad]
        box_hi[z] = (cost[quad, 0] * pbig ** 2)[:, None]

    A_eq, b_eq = eq.matrix()
    A_ub, b_ub = ineq.matrix()
    F, g = cone.matrix()
    prog = ConicProgram(c, c0, A_eq, b_eq, A_ub, b_ub, lb, ub, F, g, kinds, index=vi,
                        box_lo=box_lo, box_hi=box_hi)
    prog.check()
    return prog


def lift_polar(network: Network, vm: np.ndarray, va: np.ndarray) -> tuple[np.ndarray, ...]:
    """``(cii, cij, sij)`` of a polar voltage profile; trailing axes are periods."""
    pi = np.array([p[0] for p in network.pairs], dtype=int)
    pj = np.array([p[1] for p in network.pairs], dtype=int)
    d = va[pi] - va[pj]
    m = vm[pi] * vm[pj]
    return vm ** 2, m * np.cos(d), -m * np.sin(d)


def branch_flows(network: Network, vm: np.ndarray, va: np.ndarray) -> tuple[np.ndarray, ...]:
    """``(pf, qf, pt, qt)`` leaving each line end, computed from polar voltages."""
    la = network.line_arrays
    if np.ndim(vm) == 2:
        la = {k: v[:, None] for k, v in la.items()}
        f, t = network.line_arrays["f"], network.line_arrays["t"]
    else:
        f, t = la["f"], la["t"]
    d = va[f] - va[t]
    m = vm[f] * vm[t]
    cos, sin = np.cos(d), np.sin(d)
    pf = la["g_from"] * vm[f] ** 2 - m * (la["g_ij"] * cos + la["b_ij"] * sin)
    qf = -la["b_from"] * vm[f] ** 2 + m * (la["b_ij"] * cos - la["g_ij"] * sin)
    pt = la["g_to"] * vm[t] ** 2 - m * (la["g_ji"] * cos - la["b_ji"] * sin)
    qt = -la["b_to"] * vm[t] ** 2 + m * (la["b_ji"] * cos + la["g_ji"] * sin)
    return pf, qf, pt, qt


def lift_solution(instance: MopfInstance, vm: np.ndarray, va: np.ndarray, pg: np.ndarray,
                  qg: np.ndarray, a: np.ndarray | None = None, b: np.ndarray | None = None,
                  s: np.ndarray | None = None) -> np.ndarray:
    """Map a polar multi-period point into the SOCP variable space.

    Arrays are ``(element, period)``.  The stock trajectory is rebuilt from
    ``a`` and ``b`` when not given.
    """
    net = instance.network
    prog_index = _index_for(instance)
    x = np.zeros(prog_index.n)
    cii, cij, sij = lift_polar(net, vm, va)
    pf, qf, pt, qt = branch_flows(net, vm, va)
    for name, val in (("pg", pg), ("qg", qg), ("cii", cii), ("cij", cij), ("sij", sij),
                      ("pf", pf), ("qf", qf), ("pt", pt), ("qt", qt)):
        x[prog_index[name]] = val
    ne = instance.n_ev
    if ne:
        a = np.zeros((ne, instance.horizon)) if a is None else a
        b = np.zeros((ne, instance.horizon)) if b is None else b
        if s is None:
            steps = instance.ev_eta[:, None] * a - b - instance.ev_c
            s = instance.ev_initial[:, None] + np.concatenate(
                [np.zeros((ne, 1)), np.cumsum(steps, axis=1)], axis=1)
        x[prog_index["a"]] = a
        x[prog_index["b"]] = b
        x[prog_index["s"]] = s
    cost = np.array([g.cost for g in net.generators]).reshape(-1, 3)
    quad = np.flatnonzero(cost[:, 0] > 0)
    x[prog_index["z"]] = cost[quad, :1] * pg[quad] ** 2
    return x


def _index_for(instance: MopfInstance) -> VariableIndex:
    net = instance.network
    T = instance.horizon
    vi = VariableIndex()
    nq = sum(1 for g in net.generators if g.cost[0] > 0)
    for name, rows in (("pg", net.n_gen), ("qg", net.n_gen), ("cii", net.n_bus),
                       ("cij", len(net.pairs)), ("sij", len(net.pairs)), ("pf", net.n_line),
                       ("qf", net.n_line), ("pt", net.n_line), ("qt", net.n_line),
                       ("a", instance.n_ev), ("b", instance.n_ev)):
        vi.add(name, (rows, T))
    vi.add("s", (instance.n_ev, T + 1))
    vi.add("z", (nq, T))
    return vi


@dataclass(frozen=True)
class ConsistencyReport:
    residuals: np.ndarray     # (pair, period): cii cjj - (cij^2 + sij^2)
    max: float
    mean: float
    min: float
    exact: bool
    cone_violations: int


def consistency_residuals(network: Network, cii: np.ndarray, cij: np.ndarray, sij: np.ndarray,
                          tol: float = 1e-9) -> ConsistencyReport:
    """How far a relaxed solution is from satisfying ``cij^2 + sij^2 = cii cjj``."""
    pi = np.array([p[0] for p in network.pairs], dtype=int)
    pj = np.array([p[1] for p in network.pairs], dtype=int)
    prod = cii[pi] * cii[pj]
    res = prod - (cij ** 2 + sij ** 2)
    if res.size == 0:
        return ConsistencyReport(res, 0.0, 0.0, 0.0, True, 0)
    scale = float(np.max(np.abs(prod)))
    return ConsistencyReport(res, float(res.max()), float(res.mean()), float(res.min()),
                             bool(np.max(np.abs(res)) <= 1e-6 * scale),
                             int(np.sum(res < -tol)))


def socp_consistency(program: ConicProgram, x: np.ndarray, network: Network) -> ConsistencyReport:
    vi = program.index
    return consistency_residuals(network, x[vi["cii"]], x[vi["cij"]], x[vi["sij"]])


# ---------------------------------------------------------------------------
# single-period polar AC-OPF


@dataclass(frozen=True)
class PeriodProblem:
    """Single-period polar AC-OPF with the EV schedule folded into the loads.

    Decision vector is ``[va (B), vm (B), pg (G), qg (G)]``.
    """

    network: Network
    period: int
    pd: np.ndarray
    qd: np.ndarray
    pmin: np.ndarray
    pmax: np.ndarray
    qmin: np.ndarray
    qmax: np.ndarray
    cost: np.ndarray

    @property
    def n(self) -> int:
        return 2 * self.network.n_bus + 2 * self.network.n_gen

    def split(self, x):
        nb, ng = self.network.n_bus, self.network.n_gen
        return x[:nb], x[nb:2 * nb], x[2 * nb:2 * nb + ng], x[2 * nb + ng:]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        net = self.network
        nb = net.n_bus
        lo = np.concatenate([np.full(nb, -np.inf), net.vmin, self.pmin, self.qmin])
        hi = np.concatenate([np.full(nb, np.inf), net.vmax, self.pmax, self.qmax])
        lo[net.ref] = hi[net.ref] = 0.0
        return lo, hi

    def objective(self, x) -> float:
        pg = self.split(x)[2]
        c = self.cost
        return float(np.sum(c[:, 0] * pg ** 2 + c[:, 1] * pg + c[:, 2]))

    def objective_derivs(self, x):
        pg = self.split(x)[2]
        nb, ng = self.network.n_bus, self.network.n_gen
        grad = np.zeros(self.n)
        grad[2 * nb:2 * nb + ng] = 2 * self.cost[:, 0] * pg + self.cost[:, 1]
        hdiag = np.zeros(self.n)
        hdiag[2 * nb:2 * nb + ng] = 2 * self.cost[:, 0]
        return grad, sp.diags(hdiag)

    # per-line flow terms -------------------------------------------------
    def _line_terms(self, x):
        """Values, gradients (L,4) and Hessians (L,4,4) of the four end flows.

        Local variable order per line is ``(va_f, va_t, vm_f, vm_t)``.
        """
        net = self.network
        la = net.line_arrays
        va, vm = self.split(x)[:2]
        f, t = la["f"], la["t"]
        d = va[f] - va[t]
        vf, vt = vm[f], vm[t]
        cos, sin = np.cos(d), np.sin(d)
        specs = (  # (self coefficient, self at from end?, alpha, beta)
            (la["g_from"], True, -la["g_ij"], -la["b_ij"]),
            (-la["b_from"], True, la["b_ij"], -la["g_ij"]),
            (la["g_to"], False, -la["g_ji"], la["b_ji"]),
            (-la["b_to"], False, la["b_ji"], la["g_ji"]),
        )
        out = []
        m = vf * vt
        for kself, at_from, al, be in specs:
            h = al * cos + be * sin
            hp = -al * sin + be * cos
            vend = vf if at_from else vt
            val = kself * vend ** 2 + m * h
            grad = np.empty((len(f), 4))
            grad[:, 0] = m * hp
            grad[:, 1] = -m * hp
            grad[:, 2] = vt * h + (2 * kself * vf if at_from else 0.0)
            grad[:, 3] = vf * h + (0.0 if at_from else 2 * kself * vt)
            hess = np.empty((len(f), 4, 4))
            hess[:, 0, 0] = hess[:, 1, 1] = -m * h
            hess[:, 0, 1] = hess[:, 1, 0] = m * h
            hess[:, 0, 2] = hess[:, 2, 0] = vt * hp
            hess[:, 0, 3] = hess[:, 3, 0] = vf * hp
            hess[:, 1, 2] = hess[:, 2, 1] = -vt * hp
            hess[:, 1, 3] = hess[:, 3, 1] = -vf * hp
            hess[:, 2, 2] = 2 * kself if at_from else 0.0
            hess[:, 3, 3] = 0.0 if at_from else 2 * kself
            hess[:, 2, 3] = hess[:, 3, 2] = h
            out.append((val, grad, hess))
        return out

    def _line_cols(self):
        la = self.network.line_arrays
        nb = self.network.n_bus
        return np.stack([la["f"], la["t"], nb + la["f"], nb + la["t"]], axis=1)

    def flows(self, x):
        return tuple(v for v, _, _ in self._line_terms(x))

    def equality(self, x):
        """Bus power mismatches ``[P (B); Q (B)]`` and their Jacobian."""
        net = self.network
        nb, ng = net.n_bus, net.n_gen
        la = net.line_arrays
        va, vm, pg, qg = self.split(x)
        gs = np.array([b.gs for b in net.buses])
        bs = np.array([b.bs for b in net.buses])
        terms = self._line_terms(x)
        cols = self._line_cols()
        P = np.bincount(net.gen_bus, pg, nb) - self.pd - gs * vm ** 2
        Q = np.bincount(net.gen_bus, qg, nb) - self.qd + bs * vm ** 2
        rows, cc, vals = [], [], []
        for (val, grad, _), end, target in zip(terms, ("f", "f", "t", "t"), ("P", "Q", "P", "Q")):
            bus = la[end]
            offset = 0 if target == "P" else nb
            np.subtract.at(P if target == "P" else Q, bus, val)
            rows.append(np.repeat(offset + bus, 4))
            cc.append(cols.ravel())
            vals.append(-grad.ravel())
        gi = np.arange(ng)
        rows += [net.gen_bus, nb + net.gen_bus, np.arange(nb), nb + np.arange(nb)]
        cc += [2 * nb + gi, 2 * nb + ng + gi, nb + np.arange(nb), nb + np.arange(nb)]
        vals += [np.ones(ng), np.ones(ng), -2 * gs * vm, 2 * bs * vm]
        J = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cc))),
                          shape=(2 * nb, self.n)).tocsr()
        return np.concatenate([P, Q]), J

    def limited_lines(self) -> np.ndarray:
        return np.flatnonzero(np.isfinite(self.network.line_arrays["s_max"]))

    def inequality(self, x):
        """Squared apparent-power limits at both ends, then angle-difference limits."""
        net = self.network
        la = net.line_arrays
        nb = net.n_bus
        lim = self.limited_lines()
        terms = self._line_terms(x)
        cols = self._line_cols()
        vals, rows, cc, vv = [], [], [], []
        r = 0
        for (p, gp, _), (q, gq, _) in ((terms[0], terms[1]), (terms[2], terms[3])):
            vals.append(p[lim] ** 2 + q[lim] ** 2 - la["s_max"][lim] ** 2)
            grad = 2 * p[lim, None] * gp[lim] + 2 * q[lim, None] * gq[lim]
            rows.append(np.repeat(r + np.arange(len(lim)), 4))
            cc.append(cols[lim].ravel())
            vv.append(grad.ravel())
            r += len(lim)
        va = self.split(x)[0]
        d = va[la["f"]] - va[la["t"]]
        nl = net.n_line
        amax = la["angle_max"]
        vals += [d - amax, -d - amax]
        for sign in (1.0, -1.0):
            rr = r + np.arange(nl)
            rows += [rr, rr]
            cc += [la["f"], la["t"]]
            vv += [np.full(nl, sign), np.full(nl, -sign)]
            r += nl
        H = sp.coo_matrix((np.concatenate(vv), (np.concatenate(rows), np.concatenate(cc))),
                          shape=(r, self.n)).tocsr()
        return np.concatenate(vals), H

    def lagrangian_hessian(self, x, lam, mu, obj_scale: float = 1.0):
        """Hessian of ``obj_scale * f + lam . g + mu . h``."""
        net = self.network
        nb = net.n_bus
        la = net.line_arrays
        _, hf = self.objective_derivs(x)
        terms = self._line_terms(x)
        cols = self._line_cols()
        lamP, lamQ = lam[:nb], lam[nb:]
        weight = np.zeros(net.n_line)
        blocks = np.zeros((net.n_line, 4, 4))
        for (_, _, hess), end, lvec in zip(terms, ("f", "f", "t", "t"), (lamP, lamQ, lamP, lamQ)):
            weight = -lvec[la[end]]
            blocks += weight[:, None, None] * hess
        lim = self.limited_lines()
        nlim = len(lim)
        for k, (tp, tq) in enumerate(((terms[0], terms[1]), (terms[2], terms[3]))):
            w = mu[k * nlim:(k + 1) * nlim]
            p, gp, hp = (v[lim] for v in tp)
            q, gq, hq = (v[lim] for v in tq)
            blk = 2 * (np.einsum("li,lj->lij", gp, gp) + p[:, None, None] * hp
                       + np.einsum("li,lj->lij", gq, gq) + q[:, None, None] * hq)
            blocks[lim] += w[:, None, None] * blk
        rr = np.repeat(cols[:, :, None], 4, axis=2)
        cc = np.repeat(cols[:, None, :], 4, axis=1)
        gs = np.array([b.gs for b in net.buses])
        bs = np.array([b.bs for b in net.buses])
        vmv = nb + np.arange(nb)
        H = sp.coo_matrix((np.concatenate([blocks.ravel(), -2 * gs * lamP + 2 * bs * lamQ]),
                           (np.concatenate([rr.ravel(), vmv]), np.concatenate([cc.ravel(), vmv]))),
                          shape=(self.n, self.n)).tocsr()
        return obj_scale * hf + H


def build_acopf_period(instance: MopfInstance, t: int, a: np.ndarray | None = None,
                       b: np.ndarray | None = None) -> PeriodProblem:
    """Period ``t`` of the nonconvex problem with EV powers fixed to ``a``, ``b`` (per EV group)."""
    net = instance.network
    pd = instance.pd[:, t].copy()
    ne = instance.n_ev
    if ne:
        a = np.zeros(ne) if a is None else np.asarray(a, dtype=float)
        b = np.zeros(ne) if b is None else np.asarray(b, dtype=float)
        tol = 1e-9
        if np.any(a < -tol) or np.any(a > instance.ev_a_max[:, t] + tol):
            raise ValueError(f"period {t}: charging schedule outside [0, a_max]")
        if np.any(b < -tol) or np.any(b > instance.ev_b_max[:, t] + tol):
            raise ValueError(f"period {t}: discharging schedule outside [0, b_max]")
        np.add.at(pd, instance.ev_bus, a - instance.ev_eta * b)
    cost = np.array([g.cost for g in net.generators], dtype=float).reshape(-1, 3)
    return PeriodProblem(net, t, pd, instance.qd[:, t].copy(), instance.pmin.copy(),
                         instance.pmax.copy(), instance.qmin.copy(), instance.qmax.copy(), cost)
