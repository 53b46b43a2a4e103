"""Conic solves (via Clarabel) and the sparse text exchange format.

Exchange format, one record per line, whitespace separated::

    evmopf-conic 1
    vars <n>
    var <j> <name> <lb> <ub> <c_j>
    objconst <c0>
    eq <rows>            followed by  a <i> <j> <v>  and  r <i> <v>  records
    ub <rows>            same
    cone <rows>          same, then  k <kind> <dim>  records in row order
    end
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

from .formulation import ConicProgram, MopfInstance, build_socp

_SQRT_HALF = math.sqrt(0.5)


class CapInfeasibleError(RuntimeError):
    """The emission cap is below what the relaxation can reach."""


@dataclass
class ConicSolution:
    status: str                      # optimal | infeasible | unbounded | numerical-limit
    x: np.ndarray
    objective: float
    dual_objective: float
    iterations: int
    solve_time: float
    duals: np.ndarray | None = None  # equality-row multipliers, or infeasibility ray
    stats: dict = field(default_factory=dict)
    certified_bound: float = -math.inf

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    @property
    def gap(self) -> float:
        return abs(self.objective - self.dual_objective)

    @property
    def bound(self) -> float:
        """Lower bound on the optimal value.

        The certified bound when one is available, otherwise the smaller of
        primal and dual objective (a bound only up to solver tolerance).
        """
        if math.isfinite(self.certified_bound):
            return self.certified_bound
        return min(self.objective, self.dual_objective)


def _to_clarabel(prog: ConicProgram):
    n = prog.n
    blocks_A, blocks_b, cones = [], [], []

    fixed = np.flatnonzero(prog.lb == prog.ub)
    eq_A = sp.vstack([prog.A_eq, sp.csr_matrix((np.ones(len(fixed)), (np.arange(len(fixed)), fixed)),
                                               shape=(len(fixed), n))])
    eq_b = np.concatenate([prog.b_eq, prog.lb[fixed]])
    if eq_A.shape[0]:
        blocks_A.append(eq_A)
        blocks_b.append(eq_b)
        cones.append(clarabel.ZeroConeT(eq_A.shape[0]))

    free = prog.lb != prog.ub
    ilo = np.flatnonzero(np.isfinite(prog.lb) & free)
    ihi = np.flatnonzero(np.isfinite(prog.ub) & free)
    nn_A = sp.vstack([prog.A_ub,
                      sp.csr_matrix((np.ones(len(ihi)), (np.arange(len(ihi)), ihi)), shape=(len(ihi), n)),
                      sp.csr_matrix((-np.ones(len(ilo)), (np.arange(len(ilo)), ilo)), shape=(len(ilo), n))])
    nn_b = np.concatenate([prog.b_ub, prog.ub[ihi], -prog.lb[ilo]])
    if nn_A.shape[0]:
        blocks_A.append(nn_A)
        blocks_b.append(nn_b)
        cones.append(clarabel.NonnegativeConeT(nn_A.shape[0]))

    if prog.cones:
        # rotated (u, v, w) -> ((u+v)/sqrt2, (u-v)/sqrt2, w) in the standard cone
        m = prog.F.shape[0]
        ti, tj, tv = [], [], []
        row = 0
        for kind, d in prog.cones:
            if kind == "rsoc":
                ti += [row, row, row + 1, row + 1]
                tj += [row, row + 1, row, row + 1]
                tv += [_SQRT_HALF, _SQRT_HALF, _SQRT_HALF, -_SQRT_HALF]
                ti += list(range(row + 2, row + d))
                tj += list(range(row + 2, row + d))
                tv += [1.0] * (d - 2)
            else:
                ti += list(range(row, row + d))
                tj += list(range(row, row + d))
                tv += [1.0] * d
            cones.append(clarabel.SecondOrderConeT(d))
            row += d
        Tm = sp.csr_matrix((tv, (ti, tj)), shape=(m, m))
        blocks_A.append(-(Tm @ prog.F))
        blocks_b.append(Tm @ prog.g)

    A = sp.vstack(blocks_A).tocsc() if blocks_A else sp.csc_matrix((0, n))
    b = np.concatenate(blocks_b) if blocks_b else np.zeros(0)
    return A, b, cones, prog.A_eq.shape[0]


def _project_dual(z: np.ndarray, cones) -> np.ndarray:
    """Project a Clarabel dual vector onto the dual cone (zero cone duals are free)."""
    z = z.copy()
    row = 0
    for cone in cones:
        if isinstance(cone, clarabel.ZeroConeT):
            d = cone.dim
        elif isinstance(cone, clarabel.NonnegativeConeT):
            d = cone.dim
            np.maximum(z[row:row + d], 0.0, out=z[row:row + d])
        else:
            d = cone.dim
            t, v = z[row], z[row + 1:row + d]
            nv = np.linalg.norm(v)
            if nv > t:
                if nv <= -t:
                    z[row:row + d] = 0.0
                else:
                    a = 0.5 * (t + nv)
                    z[row] = a
                    z[row + 1:row + d] = a * v / nv
        row += d
    return z


def certified_lower_bound(program: ConicProgram, A, b, cones, z: np.ndarray) -> float:
    """Weak-duality bound from an approximate dual ``z``.

    After projecting ``z`` onto the dual cone, every feasible ``x`` in the
    program's implied box satisfies ``c.x >= -b.z + min_box (c + A^T z).x``.
    Returns ``-inf`` when some variable with nonzero residual is unboxed.
    """
    y = _project_dual(z, cones)
    r = program.c + A.T @ y
    lo = program.box_lo if program.box_lo is not None else program.lb
    hi = program.box_hi if program.box_hi is not None else program.ub
    with np.errstate(invalid="ignore"):
        worst = np.where(r > 0, r * lo, r * hi)
    worst[r == 0] = 0.0
    if not np.all(np.isfinite(worst)):
        return -math.inf
    return float(-b @ y + worst.sum() + program.c0)


_STATUS = {
    "Solved": "optimal",
    "AlmostSolved": "optimal",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostDualInfeasible": "unbounded",
}


def solve_conic(program: ConicProgram, tol_rel: float = 1e-8, tol_feas: float = 1e-8,
                max_iter: int = 200, verbose: bool = False) -> ConicSolution:
    """Solve a :class:`ConicProgram`.

    Clarabel equilibrates the data (Ruiz scaling) before iterating; reported
    objectives and tolerances refer to the unscaled problem.
    """
    program.check()
    A, b, cones, n_eq = _to_clarabel(program)
    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.tol_gap_rel = tol_rel
    settings.tol_gap_abs = tol_rel
    settings.tol_feas = tol_feas
    settings.max_iter = max_iter
    settings.equilibrate_enable = True
    settings.presolve_enable = False
    P = sp.csc_matrix((program.n, program.n))
    t0 = time.perf_counter()
    sol = clarabel.DefaultSolver(P, program.c, A, b, cones, settings).solve()
    elapsed = time.perf_counter() - t0
    raw = str(sol.status)
    status = _STATUS.get(raw, "numerical-limit")
    x = np.asarray(sol.x, dtype=float)
    z = np.asarray(sol.z, dtype=float)
    certified = -math.inf
    if status == "optimal":
        obj = program.objective(x)
        dual = float(sol.obj_val_dual) + program.c0
        certified = certified_lower_bound(program, A, b, cones, z)
    else:
        obj = dual = math.nan
    return ConicSolution(status=status, x=x, objective=obj, dual_objective=dual,
                         iterations=int(sol.iterations), solve_time=elapsed,
                         duals=z[:n_eq] if status == "optimal" else z,
                         stats={"raw_status": raw, "r_prim": float(sol.r_prim),
                                "r_dual": float(sol.r_dual)},
                         certified_bound=certified)


# Pipeline solves pair relaxed bounds with local solutions whose objectives
# agree to ~1e-10 relative on exact instances, so they run tighter than the
# generic default.
PIPELINE_TOL = 1e-10


def solve_instance(instance: MopfInstance, **kwargs) -> tuple[ConicProgram, ConicSolution]:
    prog = build_socp(instance)
    kwargs.setdefault("tol_rel", PIPELINE_TOL)
    kwargs.setdefault("tol_feas", PIPELINE_TOL)
    return prog, solve_conic(prog, **kwargs)


def lower_bound_with_cap(instance: MopfInstance, cap: float | None, **kwargs) -> ConicSolution:
    """Cost-minimizing relaxation under total marginal emission ``<= cap`` (kg)."""
    inst = instance.with_objective("cost").with_cap(cap)
    _, sol = solve_instance(inst, **kwargs)
    if sol.status == "infeasible":
        raise CapInfeasibleError(f"emission cap {cap:.6g} kg is infeasible for the relaxation")
    return sol


# ---------------------------------------------------------------------------
# text formats


def _f(v: float) -> str:
    return repr(float(v))


def write_program(program: ConicProgram) -> str:
    names = program.names or (program.index.names() if program.index is not None
                              else [f"x{j}" for j in range(program.n)])
    out = ["evmopf-conic 1", f"vars {program.n}"]
    for j in range(program.n):
        out.append(f"var {j} {names[j]} {_f(program.lb[j])} {_f(program.ub[j])} {_f(program.c[j])}")
    out.append(f"objconst {_f(program.c0)}")
    for tag, mat, rhs in (("eq", program.A_eq, program.b_eq), ("ub", program.A_ub, program.b_ub),
                          ("cone", program.F, program.g)):
        out.append(f"{tag} {mat.shape[0]}")
        coo = mat.tocoo()
        order = np.lexsort((coo.col, coo.row))
        out += [f"a {coo.row[k]} {coo.col[k]} {_f(coo.data[k])}" for k in order]
        out += [f"r {i} {_f(v)}" for i, v in enumerate(rhs) if v != 0]
        if tag == "cone":
            out += [f"k {kind} {d}" for kind, d in program.cones]
    out.append("end")
    return "\n".join(out) + "\n"


def read_program(text: str) -> ConicProgram:
    lines = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0][:1] != ["evmopf-conic"]:
        raise ValueError("not an evmopf conic program")
    n = int(lines[1][1])
    lb, ub, c = np.zeros(n), np.zeros(n), np.zeros(n)
    names = [""] * n
    c0 = 0.0
    mats = {}
    cones: list[tuple[str, int]] = []
    current = None
    for rec in lines[2:]:
        tag = rec[0]
        if tag == "var":
            j = int(rec[1])
            names[j] = rec[2]
            lb[j], ub[j], c[j] = float(rec[3]), float(rec[4]), float(rec[5])
        elif tag == "objconst":
            c0 = float(rec[1])
        elif tag in ("eq", "ub", "cone"):
            current = tag
            mats[tag] = (int(rec[1]), [], [], [], np.zeros(int(rec[1])))
        elif tag == "a":
            m = mats[current]
            m[1].append(int(rec[1]))
            m[2].append(int(rec[2]))
            m[3].append(float(rec[3]))
        elif tag == "r":
            mats[current][4][int(rec[1])] = float(rec[2])
        elif tag == "k":
            cones.append((rec[1], int(rec[2])))
        elif tag == "end":
            break
        else:
            raise ValueError(f"unknown record {tag!r}")

    def build(tag):
        rows, i, j, v, rhs = mats.get(tag, (0, [], [], [], np.zeros(0)))
        return sp.csr_matrix((v, (i, j)), shape=(rows, n)), rhs

    A_eq, b_eq = build("eq")
    A_ub, b_ub = build("ub")
    F, g = build("cone")
    prog = ConicProgram(c, c0, A_eq, b_eq, A_ub, b_ub, lb, ub, F, g, cones, names=names)
    prog.check()
    return prog


def dump_solution(program: ConicProgram, solution: ConicSolution) -> str:
    names = program.names or (program.index.names() if program.index is not None
                              else [f"x{j}" for j in range(program.n)])
    out = [f"status {solution.status}", f"objective {_f(solution.objective)}",
           f"dual_objective {_f(solution.dual_objective)}"]
    out += [f"{name} {_f(v)}" for name, v in zip(names, solution.x)]
    return "\n".join(out) + "\n"
