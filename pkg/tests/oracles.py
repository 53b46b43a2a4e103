"""Independent reference computations used by the tests.

Nothing here imports the formulation or solver modules: flows come from
complex phasor arithmetic on the textbook pi model and optima from scans.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import brentq


def pi_model_flows(v_from: complex, v_to: complex, r: float, x: float, b: float,
                   tap: float = 1.0, shift: float = 0.0) -> tuple[complex, complex]:
    """Complex power entering the line at each end, from ``S = V conj(I)``."""
    ys = 1.0 / complex(r, x)
    t = tap * complex(math.cos(shift), math.sin(shift))
    i_from = (ys + 0.5j * b) / (tap * tap) * v_from - ys / t.conjugate() * v_to
    i_to = -ys / t * v_from + (ys + 0.5j * b) * v_to
    return v_from * i_from.conjugate(), v_to * i_to.conjugate()


def two_bus_grid_optimum(r, x, b, pd2, qd2, vmin, vmax, cost, *, pmax=np.inf, qmin=-np.inf,
                         qmax=np.inf, smax=np.inf, angle_max=math.pi / 2, step=1e-3):
    """Cheapest operating point of a generator at bus 1 serving a load at bus 2.

    Scans |V1| on a grid of ``step``.  For each value, every |V2| grid cell is
    checked for a sign change of the reactive mismatch at bus 2 (with the angle
    solved from the real balance, itself bracketed on a ``step`` rad grid) and
    the crossing is refined to machine precision.  Returns ``(cost, point)``
    with ``point = (V1, V2, theta12, P1, Q1)`` in per-unit; ``cost`` uses the
    per-unit polynomial ``cost = (c2, c1, c0)``.
    """
    c2, c1, c0 = cost
    thetas = np.arange(-angle_max, angle_max + step / 2, step)

    def solve_theta(v1, v2):
        def p_mis(th):
            _, s21 = pi_model_flows(v1 * np.exp(1j * th), v2, r, x, b)
            return s21.real + pd2

        vals = p_mis(thetas)
        roots = []
        for k in np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:])):
            roots.append(brentq(p_mis, thetas[k], thetas[k + 1], xtol=1e-15))
        return roots

    def q_mis(v1, v2):
        roots = solve_theta(v1, v2)
        if not roots:
            return math.nan, math.nan
        th = min(roots, key=abs)     # the stable branch (small angle)
        _, s21 = pi_model_flows(v1 * complex(math.cos(th), math.sin(th)), v2, r, x, b)
        return s21.imag + qd2, th

    best = (math.inf, None)
    n = int(round((vmax - vmin) / step))
    grid = vmin + step * np.arange(n + 1)
    for v1 in grid:
        q = [q_mis(v1, v2)[0] for v2 in grid]
        for k in range(n):
            if not (np.isfinite(q[k]) and np.isfinite(q[k + 1])) or np.sign(q[k]) == np.sign(q[k + 1]):
                continue
            v2 = brentq(lambda v: q_mis(v1, v)[0], grid[k], grid[k + 1], xtol=1e-15)
            _, th = q_mis(v1, v2)
            s12, s21 = pi_model_flows(v1 * complex(math.cos(th), math.sin(th)), v2, r, x, b)
            p1, q1 = s12.real, s12.imag
            if p1 > pmax or not qmin <= q1 <= qmax:
                continue
            if abs(s12) > smax or abs(s21) > smax or abs(th) > angle_max:
                continue
            f = c2 * p1 * p1 + c1 * p1 + c0
            if f < best[0]:
                best = (f, (v1, v2, th, p1, q1))
    return best


def trip_energy_by_hand(start: float, end: float, miles: float, c_avg: float, horizon: int = 24):
    """Hourly energy of one trip from interval overlaps, computed with plain floats."""
    speed = miles / (end - start)
    out = []
    for t in range(horizon):
        overlap = min(t + 1.0, end) - max(float(t), start)
        out.append(speed * max(0.0, min(1.0, overlap)) * c_avg)
    return out
