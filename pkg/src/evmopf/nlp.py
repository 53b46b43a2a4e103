"""Primal-dual interior-point method for smooth nonlinear programs.

Solves ``min f(x)`` s.t. ``g(x) = 0``, ``h(x) <= 0``, ``lo <= x <= hi`` with
exact first and second derivatives supplied by the caller.  The iteration is
the classic step-length-controlled Newton scheme on the perturbed KKT
system with slack variables for the inequalities.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


@dataclass
class IpmResult:
    x: np.ndarray
    f: float
    lam: np.ndarray
    mu: np.ndarray
    converged: bool
    iterations: int
    message: str
    feas: float            # max absolute violation of g, h and bounds


def interior_point(f_fn: Callable, g_fn: Callable, h_fn: Callable, hess_fn: Callable,
                   x0: np.ndarray, lo: np.ndarray, hi: np.ndarray, *,
                   feastol: float = 1e-9, gradtol: float = 1e-8, comptol: float = 1e-9,
                   costtol: float = 1e-10, max_iter: int = 200, obj_scale: float = 1.0,
                   step_fraction: float = 0.99995, sigma: float = 0.1) -> IpmResult:
    """Run the interior-point iteration.

    ``f_fn(x) -> (f, grad)``, ``g_fn(x) -> (g, J)``, ``h_fn(x) -> (h, J)``
    and ``hess_fn(x, lam, mu, obj_scale)`` returns the Hessian of the nonlinear
    constraint part plus ``obj_scale`` times the objective Hessian.  Bounds
    are handled internally as extra linear rows.
    """
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    n = len(x)
    fixed = np.flatnonzero(lo == hi)
    ilo = np.flatnonzero(np.isfinite(lo) & (lo != hi))
    ihi = np.flatnonzero(np.isfinite(hi) & (lo != hi))
    nfix, nlo, nhi = len(fixed), len(ilo), len(ihi)
    Afix = sp.csr_matrix((np.ones(nfix), (np.arange(nfix), fixed)), shape=(nfix, n))
    Ab = sp.vstack([sp.csr_matrix((-np.ones(nlo), (np.arange(nlo), ilo)), shape=(nlo, n)),
                    sp.csr_matrix((np.ones(nhi), (np.arange(nhi), ihi)), shape=(nhi, n))]).tocsr()

    def evaluate(x):
        f, df = f_fn(x)
        g0, Jg0 = g_fn(x)
        h0, Jh0 = h_fn(x)
        g = np.concatenate([g0, x[fixed] - lo[fixed]])
        h = np.concatenate([h0, lo[ilo] - x[ilo], x[ihi] - hi[ihi]])
        return f * obj_scale, df * obj_scale, g, sp.vstack([Jg0, Afix]).tocsr(), h, \
            sp.vstack([Jh0, Ab]).tocsr(), len(g0), len(h0)

    f, df, g, Jg, h, Jh, ng0, nh0 = evaluate(x)
    neq, niq = len(g), len(h)
    z = np.ones(niq)
    big = h < -1.0
    z[big] = -h[big]
    gamma = 1.0
    mu = np.ones(niq)
    k = gamma / z > 1.0
    mu[k] = gamma / z[k]
    lam = np.zeros(neq)
    e = np.ones(niq)

    def conditions(f_old):
        Lx = df + Jg.T @ lam + Jh.T @ mu
        nx = max(np.max(np.abs(x), initial=0.0), np.max(z, initial=0.0))
        feas = max(np.max(np.abs(g), initial=0.0), np.max(h, initial=0.0)) / (1 + nx)
        grad = np.max(np.abs(Lx), initial=0.0) / (
            1 + max(np.max(np.abs(lam), initial=0.0), np.max(np.abs(mu), initial=0.0)))
        comp = float(z @ mu) / (1 + np.max(np.abs(x), initial=0.0))
        cost = abs(f - f_old) / (1 + abs(f_old)) if f_old is not None else np.inf
        return feas, grad, comp, cost, Lx

    def absolute_feas():
        return float(max(np.max(np.abs(g), initial=0.0), np.max(h, initial=0.0)))

    f_old = None
    message = "iteration limit"
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        _, _, _, _, Lx = conditions(f_old)
        lam_c = lam[:ng0]
        mu_c = mu[:nh0]
        Lxx = hess_fn(x, lam_c, mu_c, obj_scale)
        zinv = 1.0 / z
        dh_zinv = Jh.T @ sp.diags(zinv)
        M = Lxx + dh_zinv @ sp.diags(mu) @ Jh
        N = Lx + dh_zinv @ (mu * h + gamma * e)
        K = sp.bmat([[M, Jg.T], [Jg, None]], format="csc")
        rhs = np.concatenate([-N, -g])
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", spla.MatrixRankWarning)
            try:
                sol = spla.spsolve(K, rhs)
            except RuntimeError:
                sol = np.full(len(rhs), np.nan)
        if not np.all(np.isfinite(sol)):
            message = "singular Newton system"
            break
        dx, dlam = sol[:n], sol[n:]
        dz = -h - z - Jh @ dx
        dmu = -mu + zinv * (gamma * e - mu * dz)
        with np.errstate(over="ignore"):     # tiny negative steps give huge ratios
            neg = dz < 0
            ap = min(step_fraction * np.min(-z[neg] / dz[neg]), 1.0) if neg.any() else 1.0
            neg = dmu < 0
            ad = min(step_fraction * np.min(-mu[neg] / dmu[neg]), 1.0) if neg.any() else 1.0
        x = x + ap * dx
        z = z + ap * dz
        lam = lam + ad * dlam
        mu = mu + ad * dmu
        if niq:
            gamma = sigma * float(z @ mu) / niq
        f_prev = f
        f, df, g, Jg, h, Jh, _, _ = evaluate(x)
        if not (np.isfinite(f) and np.all(np.isfinite(x))):
            message = "numerical failure"
            break
        feas, grad, comp, cost, _ = conditions(f_prev)
        if feas < feastol and grad < gradtol and comp < comptol and cost < costtol:
            converged = True
            message = "converged"
            break
        if np.max(np.abs(x), initial=0.0) > 1e10:
            message = "diverging iterates"
            break
    x[fixed] = lo[fixed]
    return IpmResult(x=x, f=f / obj_scale, lam=lam[:ng0] / obj_scale, mu=mu[:nh0] / obj_scale,
                     converged=converged, iterations=it, message=message,
                     feas=absolute_feas())
