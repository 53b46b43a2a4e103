import math

import numpy as np
import pytest
import scipy.sparse as sp

from evmopf.conic import (CapInfeasibleError, dump_solution, lower_bound_with_cap, read_program,
                          solve_conic, solve_instance, write_program)
from evmopf.formulation import ConicProgram, build_socp
from evmopf.pareto import emission_bounds

from conftest import prepared_instance


def scalar_program(lb=-np.inf, F=None, g=None, cones=(), A_ub=None, b_ub=None, c=1.0):
    empty = sp.csr_matrix((0, 1))
    return ConicProgram(np.array([c]), 0.0, empty, np.zeros(0),
                        A_ub if A_ub is not None else empty,
                        b_ub if b_ub is not None else np.zeros(0),
                        np.array([lb], dtype=float), np.array([np.inf]),
                        F if F is not None else empty, g if g is not None else np.zeros(0),
                        list(cones))


def test_lower_bound_on_variable():
    sol = solve_conic(scalar_program(lb=3.0))
    assert sol.optimal and sol.x[0] == pytest.approx(3.0, abs=1e-7)


def test_inequality_row():
    sol = solve_conic(scalar_program(A_ub=sp.csr_matrix([[-1.0]]), b_ub=np.array([-3.0])))
    assert sol.objective == pytest.approx(3.0, abs=1e-7)


def test_rotated_cone():
    F = sp.csr_matrix(np.array([[1.0], [0.0], [0.0]]))
    sol = solve_conic(scalar_program(F=F, g=np.array([0.0, 1.0, 1.0]), cones=[("rsoc", 3)]))
    assert sol.optimal and sol.x[0] == pytest.approx(0.5, abs=1e-7)


def test_second_order_cone():
    # min x  s.t.  x >= ||(3, 4)||
    F = sp.csr_matrix(np.array([[1.0], [0.0], [0.0]]))
    sol = solve_conic(scalar_program(F=F, g=np.array([0.0, 3.0, 4.0]), cones=[("soc", 3)]))
    assert sol.x[0] == pytest.approx(5.0, abs=1e-7)


def test_infeasible_status_carries_ray():
    sol = solve_conic(scalar_program(lb=3.0, A_ub=sp.csr_matrix([[1.0]]), b_ub=np.array([1.0])))
    assert sol.status == "infeasible" and not sol.optimal
    assert sol.duals is not None and np.any(sol.duals != 0)


def test_unbounded_status():
    assert solve_conic(scalar_program()).status == "unbounded"


def test_iteration_limit():
    inst = prepared_instance("case5")
    sol = solve_conic(build_socp(inst), max_iter=2)
    assert sol.status == "numerical-limit"


def test_bad_dimensions_rejected():
    prog = scalar_program(F=sp.csr_matrix((2, 1)), g=np.zeros(2), cones=[("soc", 3)])
    with pytest.raises(ValueError):
        solve_conic(prog)


@pytest.mark.parametrize("case", ["case1", "case2", "case3", "case5"])
def test_duality_and_certified_bound(case):
    inst = prepared_instance(case)
    prog, sol = solve_instance(inst)
    assert sol.optimal
    tol = 1e-7 * (1 + abs(sol.objective))
    assert sol.dual_objective <= sol.objective + tol
    assert sol.certified_bound <= sol.objective + tol
    assert sol.bound == pytest.approx(sol.objective, rel=1e-6)
    res = prog.residuals(sol.x)
    assert max(res.values()) <= 1e-6


def test_default_tolerance_still_certifies():
    inst = prepared_instance("case3")
    prog = build_socp(inst)
    sol = solve_conic(prog)
    tight = solve_conic(prog, tol_rel=1e-10, tol_feas=1e-10)
    assert sol.certified_bound <= tight.objective + 1e-9 * abs(tight.objective)


def test_export_round_trip():
    inst = prepared_instance("case2")
    inst = inst.with_cap(emission_bounds(inst)[1])
    prog = build_socp(inst)
    text = write_program(prog)
    back = read_program(text)
    assert back.n == prog.n and back.cones == prog.cones
    for a, b in ((back.A_eq, prog.A_eq), (back.A_ub, prog.A_ub), (back.F, prog.F)):
        assert (a != b).nnz == 0
    np.testing.assert_array_equal(back.c, prog.c)
    np.testing.assert_array_equal(back.lb, prog.lb)
    assert write_program(back) == text
    s1 = solve_conic(prog, tol_rel=1e-10, tol_feas=1e-10)
    s2 = solve_conic(back, tol_rel=1e-10, tol_feas=1e-10)
    assert s2.objective == pytest.approx(s1.objective, rel=1e-9)
    dump = dump_solution(back, s2).splitlines()
    assert dump[0] == "status optimal" and dump[3].startswith("pg[0,0] ")


def test_read_program_rejects_garbage():
    with pytest.raises(ValueError):
        read_program("hello\n")


@pytest.fixture(scope="module")
def case3_bounds():
    inst = prepared_instance("case3")
    lbe, ube = emission_bounds(inst)
    return inst, lbe, ube


def test_infinite_cap_matches_uncapped(case3_bounds):
    inst, _, _ = case3_bounds
    _, free = solve_instance(inst.with_cap(None))
    capped = lower_bound_with_cap(inst, math.inf)
    assert capped.objective == pytest.approx(free.objective, rel=1e-10)


def test_cap_below_range_is_reported(case3_bounds):
    inst, lbe, ube = case3_bounds
    with pytest.raises(CapInfeasibleError):
        lower_bound_with_cap(inst, lbe - 0.05 * (ube - lbe) - 1.0)


def test_cap_at_lower_end_is_feasible(case3_bounds):
    inst, lbe, _ = case3_bounds
    assert lower_bound_with_cap(inst, lbe).optimal


def test_intermediate_cap_is_bracketed(case3_bounds):
    inst, lbe, ube = case3_bounds
    assert lbe < ube
    free = lower_bound_with_cap(inst, None).objective
    greenest = lower_bound_with_cap(inst, lbe).objective
    mid = lower_bound_with_cap(inst, 0.5 * (lbe + ube)).objective
    tol = 1e-8 * abs(free)
    assert free - tol <= mid <= greenest + tol
    assert free < greenest


def test_lower_bound_nonincreasing_in_cap(case3_bounds):
    inst, lbe, ube = case3_bounds
    values = [lower_bound_with_cap(inst, c).bound for c in np.linspace(lbe, ube, 6)]
    for lo, hi in zip(values[1:], values[:-1]):
        assert lo <= hi * (1 + 1e-6)
