import math
import re

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evmopf.case import (CaseFormatError, build_admittance, dump_network, parse_case, read_case,
                         to_matpower, validate)
from evmopf.samples import CASES, data_path, load_case

from oracles import pi_model_flows

TWO_BUS = data_path("case2.m").read_text()


def _edit(text, old, new):
    assert old in text
    return text.replace(old, new)


def test_two_bus_counts():
    net = parse_case(TWO_BUS)
    assert (net.n_bus, net.n_line, net.n_gen) == (2, 1, 1)
    assert net.name == "case2"
    assert validate(net) == []


def test_per_unit_normalization():
    net = parse_case(TWO_BUS)
    assert net.buses[1].pd == pytest.approx(1.0)
    assert net.buses[1].qd == pytest.approx(0.3)
    g = net.generators[0]
    assert (g.pmax, g.qmin, g.qmax) == pytest.approx((2.0, -1.5, 1.5))
    # 0.02 $/MW^2 h and 20 $/MWh on a 100 MVA base
    assert g.cost == pytest.approx((200.0, 2000.0, 0.0))
    assert net.lines[0].s_max == pytest.approx(2.5)
    assert net.lines[0].angle_max == pytest.approx(math.radians(30))


def test_dangling_branch_reference():
    bad = _edit(TWO_BUS, "\t1\t2\t0.01\t0.1", "\t1\t999\t0.01\t0.1")
    with pytest.raises(CaseFormatError, match="999"):
        parse_case(bad)


def test_nonconvex_cost_rejected():
    bad = _edit(TWO_BUS, "3\t0.02\t20\t0", "3\t-0.02\t20\t0")
    with pytest.raises(CaseFormatError, match="nonconvex"):
        parse_case(bad)


def test_piecewise_cost_rejected():
    bad = _edit(TWO_BUS, "\t2\t0\t0\t3\t0.02\t20\t0;", "\t1\t0\t0\t2\t0\t0\t100\t2000;")
    with pytest.raises(CaseFormatError, match="polynomial"):
        parse_case(bad)


def test_syntax_error_reports_position():
    bad = _edit(TWO_BUS, "0.01\t0.1\t0.02", "0.01\t0.1x\t0.02")
    with pytest.raises(CaseFormatError) as info:
        parse_case(bad)
    err = info.value
    lines = bad.splitlines()
    assert "0.1x" in lines[err.line - 1]
    assert lines[err.line - 1][err.column - 1:].startswith("0.1x")


def test_missing_table():
    bad = re.sub(r"mpc\.gencost = \[.*?\];", "", TWO_BUS, flags=re.S)
    with pytest.raises(CaseFormatError, match="gencost"):
        parse_case(bad)


def test_out_of_service_elements_dropped():
    text = data_path("case3.m").read_text()
    text = _edit(text, "\t1\t3\t0.03\t0.15\t0.02\t150\t150\t150\t0\t0\t1",
                 "\t1\t3\t0.03\t0.15\t0.02\t150\t150\t150\t0\t0\t0")
    text = _edit(text, "\t3\t0\t0\t100\t-100\t1\t100\t1", "\t3\t0\t0\t100\t-100\t1\t100\t0")
    net = parse_case(text)
    assert net.n_line == 2 and net.n_gen == 1


def test_zero_rate_means_unlimited():
    net = parse_case(_edit(TWO_BUS, "0.02\t250\t250\t250", "0.02\t0\t0\t0"))
    assert math.isinf(net.lines[0].s_max)


def test_reversed_voltage_bounds_diagnostic():
    net = parse_case(_edit(TWO_BUS, "230\t1\t1.05\t0.95;\n\t2", "230\t1\t0.9\t1.1;\n\t2"))
    kinds = [d.kind for d in validate(net)]
    assert kinds == ["voltage bound order"]


def test_disconnected_diagnostic():
    text = data_path("case3.m").read_text()
    text = _edit(text, "\t1\t2\t0.02", "\t1\t3\t0.02")
    text = _edit(text, "\t2\t3\t0.015", "\t1\t3\t0.015")
    kinds = [d.kind for d in validate(parse_case(text))]
    assert kinds == ["disconnected"]


def test_neighbors_match_lines():
    net = load_case("case5")
    for b in net.buses:
        for k in b.neighbors:
            assert b.index in (net.lines[k].from_bus, net.lines[k].to_bus)
    assert sum(len(b.neighbors) for b in net.buses) == 2 * net.n_line


@pytest.mark.parametrize("name", CASES)
def test_round_trip(name):
    net = load_case(name)
    again = parse_case(to_matpower(net))
    assert dump_network(again) == dump_network(net)


@pytest.mark.parametrize("name", CASES)
def test_load_sum_matches_file(name):
    net = load_case(name)
    text = data_path(f"{name}.m").read_text()
    body = re.search(r"mpc\.bus = \[(.*?)\];", text, re.S).group(1)
    mw = sum(float(row.split()[2]) for row in body.strip().splitlines() if row.strip())
    assert abs(sum(b.pd for b in net.buses) - mw / net.base_mva) <= 1e-9


def test_reference_and_original_ids_kept():
    text = data_path("case3.m").read_text()
    for old, new in (("\t1\t3\t0\t0", "\t10\t3\t0\t0"), ("\t1\t2\t0.02", "\t10\t2\t0.02"),
                     ("\t1\t3\t0.03", "\t10\t3\t0.03"), ("\t1\t0\t0\t150", "\t10\t0\t0\t150")):
        text = _edit(text, old, new)
    net = parse_case(text)
    assert net.bus_ids == (10, 2, 3)
    assert net.id_to_index[10] == 0 and net.ref == 0


def test_admittance_pure_reactance():
    y = build_admittance(0.0, 1.0)
    assert y.g_ij == 0 and y.g_ji == 0
    assert y.b_ij == pytest.approx(-1.0) and y.b_ji == pytest.approx(-1.0)


def test_admittance_matches_textbook_value():
    # 1 / (0.01 + 0.1j) = 0.990099 - 9.90099j
    y = build_admittance(0.01, 0.1)
    assert y.g_ij == pytest.approx(0.01 / 0.0101)
    assert y.b_ij == pytest.approx(-0.1 / 0.0101)


@pytest.mark.parametrize("bad", [dict(tap=0.0), dict(tap=-1.0), dict(r=0.0, x=0.0)])
def test_admittance_errors(bad):
    args = dict(r=0.01, x=0.1, b_charge=0.0, tap=1.0)
    args.update(bad)
    with pytest.raises(ValueError):
        build_admittance(**args)


@settings(max_examples=50, deadline=None)
@given(r=st.floats(0.0, 0.2), x=st.floats(0.01, 0.5), b=st.floats(0.0, 0.2))
def test_nominal_tap_is_symmetric(r, x, b):
    y = build_admittance(r, x, b)
    assert y.g_ij == y.g_ji and y.b_ij == y.b_ji


@settings(max_examples=60, deadline=None)
@given(r=st.floats(0.0, 0.1), x=st.floats(0.02, 0.4), b=st.floats(0.0, 0.1),
       tap=st.floats(0.9, 1.1), shift=st.floats(-0.2, 0.2),
       v1=st.floats(0.9, 1.1), v2=st.floats(0.9, 1.1), th=st.floats(-0.5, 0.5))
def test_flows_match_phasor_oracle(r, x, b, tap, shift, v1, v2, th):
    """Real/reactive flows from the stored terms equal S = V conj(I) on the pi model."""
    y = build_admittance(r, x, b, tap, shift)
    c = v1 * v2 * math.cos(th)          # theta = theta_from - theta_to
    s = -v1 * v2 * math.sin(th)
    p_ij = y.g_from * v1 ** 2 - y.g_ij * c + y.b_ij * s
    q_ij = -y.b_from * v1 ** 2 + y.b_ij * c + y.g_ij * s
    p_ji = y.g_to * v2 ** 2 - y.g_ji * c - y.b_ji * s
    q_ji = -y.b_to * v2 ** 2 + y.b_ji * c - y.g_ji * s
    s12, s21 = pi_model_flows(v1 * complex(math.cos(th), math.sin(th)), v2, r, x, b, tap, shift)
    assert p_ij == pytest.approx(s12.real, abs=1e-9)
    assert q_ij == pytest.approx(s12.imag, abs=1e-9)
    assert p_ji == pytest.approx(s21.real, abs=1e-9)
    assert q_ji == pytest.approx(s21.imag, abs=1e-9)


def test_ybus_matches_phasor_injections(rng):
    net = load_case("case5")
    vm = rng.uniform(0.95, 1.05, net.n_bus)
    va = rng.uniform(-0.1, 0.1, net.n_bus)
    v = vm * np.exp(1j * va)
    s_bus = v * np.conj(net.ybus() @ v)
    expected = np.array([b.gs - 1j * b.bs for b in net.buses]) * vm ** 2
    for ln in net.lines:
        s12, s21 = pi_model_flows(v[ln.from_bus], v[ln.to_bus], ln.r, ln.x, ln.b_charge, ln.tap, ln.shift)
        expected[ln.from_bus] += s12
        expected[ln.to_bus] += s21
    np.testing.assert_allclose(s_bus, expected, atol=1e-9)


def test_dump_is_canonical():
    text = dump_network(load_case("case2"))
    assert text.splitlines()[:6] == ["name = case2", "base_mva = 100", "buses = 2", "lines = 1",
                                      "generators = 1", "ref = 1"]


def test_read_case_uses_file_stem(tmp_path):
    p = tmp_path / "mini.m"
    p.write_text(TWO_BUS.replace("function mpc = case2", ""))
    assert read_case(p).name == "mini"
