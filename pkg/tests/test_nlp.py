import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from evmopf.nlp import interior_point


def none(n):
    return lambda x: (np.zeros(0), sp.csr_matrix((0, n)))


def quad(center):
    center = np.asarray(center, dtype=float)

    def f(x):
        return float(np.sum((x - center) ** 2)), 2 * (x - center)

    def hess(x, lam, mu, scale):
        return scale * 2 * sp.eye(len(x), format="csr")

    return f, hess


def free(n):
    return np.full(n, -np.inf), np.full(n, np.inf)


def test_equality_constrained_projection():
    f, hess = quad([1.0, 2.0])
    g = lambda x: (np.array([x[0] + x[1] - 1.0]), sp.csr_matrix([[1.0, 1.0]]))
    res = interior_point(f, g, none(2), hess, np.zeros(2), *free(2))
    assert res.converged
    np.testing.assert_allclose(res.x, [0.0, 1.0], atol=1e-8)
    assert res.lam[0] == pytest.approx(2.0, abs=1e-6)


def test_active_inequality_and_multiplier():
    f, hess = quad([0.0, 0.0])
    h = lambda x: (np.array([1.0 - x[0] - x[1]]), sp.csr_matrix([[-1.0, -1.0]]))
    res = interior_point(f, none(2), h, hess, np.array([3.0, -1.0]), *free(2))
    np.testing.assert_allclose(res.x, [0.5, 0.5], atol=1e-7)
    assert res.mu[0] == pytest.approx(1.0, abs=1e-6)


def test_bounds_and_fixed_variables():
    f, hess = quad([5.0, -5.0, 0.0])
    lo = np.array([-np.inf, -1.0, 0.25])
    hi = np.array([2.0, np.inf, 0.25])
    res = interior_point(f, none(3), none(3), hess, np.zeros(3), lo, hi)
    np.testing.assert_allclose(res.x, [2.0, -1.0, 0.25], atol=1e-7)


def test_nonlinear_disc():
    # min x + y on the disc of radius sqrt(2)
    f = lambda x: (float(x.sum()), np.ones(2))
    h = lambda x: (np.array([x @ x - 2.0]), sp.csr_matrix(2 * x[None, :]))
    hess = lambda x, lam, mu, s: sp.csr_matrix(2 * mu[0] * np.eye(2))
    res = interior_point(f, none(2), h, hess, np.array([0.3, 0.1]), *free(2))
    assert res.converged
    np.testing.assert_allclose(res.x, [-1.0, -1.0], atol=1e-7)
    assert res.mu[0] == pytest.approx(0.5, abs=1e-6)


def test_objective_scaling_is_undone():
    f, hess = quad([1.0, 2.0])
    g = lambda x: (np.array([x[0] + x[1] - 1.0]), sp.csr_matrix([[1.0, 1.0]]))
    res = interior_point(f, g, none(2), hess, np.zeros(2), *free(2), obj_scale=1e-3)
    assert res.f == pytest.approx(2.0, abs=1e-7)
    assert res.lam[0] == pytest.approx(2.0, abs=1e-5)


def test_infeasible_problem_not_converged():
    f, hess = quad([0.0])
    g = lambda x: (np.array([x[0] - 5.0]), sp.csr_matrix([[1.0]]))
    res = interior_point(f, g, none(1), hess, np.zeros(1), np.array([0.0]), np.array([1.0]),
                         max_iter=50)
    assert not res.converged and res.feas > 1.0


@settings(max_examples=30, deadline=None)
@given(center=st.lists(st.floats(-3, 3), min_size=3, max_size=3),
       width=st.floats(0.1, 2.0))
def test_box_projection_matches_clip(center, width):
    f, hess = quad(center)
    lo, hi = -width * np.ones(3), width * np.ones(3)
    res = interior_point(f, none(3), none(3), hess, np.zeros(3), lo, hi)
    assert res.converged
    # a center on the boundary is degenerate (zero multiplier on an active bound);
    # there accuracy is only the square root of the complementarity tolerance
    np.testing.assert_allclose(res.x, np.clip(center, lo, hi), atol=1e-4)
