"""Power-network case files: parsing, validation and branch admittances.

Only the subset of the MATPOWER case format needed for multi-period OPF is
supported: ``baseMVA`` plus the ``bus``, ``gen``, ``branch`` and ``gencost``
tables, with polynomial costs of degree at most two.

Branch admittance convention
----------------------------
Every branch is the standard Pi-model with series admittance
``y = 1 / (r + jx)``, total charging susceptance ``b_charge`` and a complex
tap ``tau * exp(j * shift)`` on the from side.  In terms of the branch
admittance matrix::

    Y_ff = (y + j b_charge / 2) / tau**2      Y_ft = -y / (tau exp(-j shift))
    Y_tt =  y + j b_charge / 2                Y_tf = -y / (tau exp(+j shift))

``BranchAdmittance`` stores the *mutual* terms with the series-admittance
sign, ``g_ij + j b_ij = -Y_ft`` and ``g_ji + j b_ji = -Y_tf`` (so a lossless
unit-reactance line has ``b_ij = -1``), and the *self* terms
``g_from + j b_from = Y_ff``, ``g_to + j b_to = Y_tt``.  With
``c = |Vi||Vj| cos(ti - tj)`` and ``s = -|Vi||Vj| sin(ti - tj)`` the
flows leaving each end are::

    p_ij =  g_from c_ii - g_ij c + b_ij s      p_ji =  g_to c_jj - g_ji c - b_ji s
    q_ij = -b_from c_ii + b_ij c + g_ij s      q_ji = -b_to c_jj + b_ji c - g_ji s

which reduces to ``p_ij = g (c_ii - c) + b s`` for a plain line.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


class CaseFormatError(ValueError):
    """Raised for malformed or unsupported case files."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + where)


class BranchAdmittance(NamedTuple):
    g_ij: float
    b_ij: float
    g_ji: float
    b_ji: float
    g_from: float
    b_from: float
    g_to: float
    b_to: float


def build_admittance(r: float, x: float, b_charge: float = 0.0, tap: float = 1.0,
                     shift: float = 0.0) -> BranchAdmittance:
    """Pi-model admittance terms of a branch (``shift`` in radians).

    The first four fields are the mutual terms; see the module docstring for
    the sign convention.
    """
    if not tap > 0:
        raise ValueError(f"tap ratio must be positive, got {tap}")
    z2 = r * r + x * x
    if z2 == 0:
        raise ValueError("zero-impedance branch")
    y = complex(r, -x) / z2
    t = tap * complex(math.cos(shift), math.sin(shift))
    m_from = y / t.conjugate()
    m_to = y / t
    y_ff = (y + 0.5j * b_charge) / (tap * tap)
    y_tt = y + 0.5j * b_charge
    return BranchAdmittance(m_from.real, m_from.imag, m_to.real, m_to.imag,
                            y_ff.real, y_ff.imag, y_tt.real, y_tt.imag)


@dataclass(frozen=True)
class Bus:
    index: int
    id: int
    kind: int
    pd: float
    qd: float
    gs: float
    bs: float
    vmin: float
    vmax: float
    neighbors: tuple[int, ...] = ()


@dataclass(frozen=True)
class Generator:
    bus: int
    pmin: float
    pmax: float
    qmin: float
    qmax: float
    cost: tuple[float, float, float]  # (quadratic, linear, constant) on per-unit output

    def cost_at(self, p):
        c2, c1, c0 = self.cost
        return c2 * p * p + c1 * p + c0

    @property
    def zero_cost(self) -> bool:
        return all(c == 0 for c in self.cost)


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charge: float
    tap: float
    shift: float
    s_max: float
    angle_max: float
    y: BranchAdmittance


@dataclass(frozen=True)
class Network:
    name: str
    base_mva: float
    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...]
    lines: tuple[Line, ...]
    ref: int = 0
    bus_ids: tuple[int, ...] = field(default=())

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def n_line(self) -> int:
        return len(self.lines)

    @cached_property
    def id_to_index(self) -> dict[int, int]:
        return {b.id: b.index for b in self.buses}

    @cached_property
    def load_buses(self) -> tuple[int, ...]:
        return tuple(b.index for b in self.buses if b.pd != 0)

    @cached_property
    def generator_buses(self) -> tuple[int, ...]:
        return tuple(sorted({g.bus for g in self.generators}))

    @cached_property
    def pd(self) -> np.ndarray:
        return np.array([b.pd for b in self.buses])

    @cached_property
    def qd(self) -> np.ndarray:
        return np.array([b.qd for b in self.buses])

    @cached_property
    def vmin(self) -> np.ndarray:
        return np.array([b.vmin for b in self.buses])

    @cached_property
    def vmax(self) -> np.ndarray:
        return np.array([b.vmax for b in self.buses])

    @cached_property
    def gen_bus(self) -> np.ndarray:
        return np.array([g.bus for g in self.generators], dtype=int)

    @cached_property
    def line_arrays(self) -> dict[str, np.ndarray]:
        """Per-line vectors keyed by field name, including admittance terms."""
        out = {
            "f": np.array([ln.from_bus for ln in self.lines], dtype=int),
            "t": np.array([ln.to_bus for ln in self.lines], dtype=int),
            "s_max": np.array([ln.s_max for ln in self.lines]),
            "angle_max": np.array([ln.angle_max for ln in self.lines]),
        }
        for name in BranchAdmittance._fields:
            out[name] = np.array([getattr(ln.y, name) for ln in self.lines])
        return out

    @cached_property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        """Distinct bus pairs (i < j) joined by at least one line."""
        return tuple(sorted({(min(ln.from_bus, ln.to_bus), max(ln.from_bus, ln.to_bus))
                             for ln in self.lines}))

    @cached_property
    def line_pair(self) -> np.ndarray:
        """Index into ``pairs`` for each line, and +1/-1 orientation."""
        lookup = {p: k for k, p in enumerate(self.pairs)}
        idx = np.empty(self.n_line, dtype=int)
        for k, ln in enumerate(self.lines):
            idx[k] = lookup[(min(ln.from_bus, ln.to_bus), max(ln.from_bus, ln.to_bus))]
        return idx

    @cached_property
    def line_orientation(self) -> np.ndarray:
        return np.array([1 if ln.from_bus < ln.to_bus else -1 for ln in self.lines], dtype=int)

    def total_load_mw(self) -> float:
        return float(sum(b.pd for b in self.buses) * self.base_mva)

    def ybus(self) -> sp.csr_matrix:
        """Complex bus admittance matrix (including bus shunts)."""
        n = self.n_bus
        la = self.line_arrays
        f, t = la["f"], la["t"]
        yff = la["g_from"] + 1j * la["b_from"]
        ytt = la["g_to"] + 1j * la["b_to"]
        yft = -(la["g_ij"] + 1j * la["b_ij"])
        ytf = -(la["g_ji"] + 1j * la["b_ji"])
        rows = np.concatenate([f, t, f, t])
        cols = np.concatenate([f, t, t, f])
        vals = np.concatenate([yff, ytt, yft, ytf])
        shunt = np.array([b.gs + 1j * b.bs for b in self.buses])
        y = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        return (y + sp.diags(shunt)).tocsr()


_TABLE_COLS = {"bus": 13, "gen": 10, "branch": 11, "gencost": 4}
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([^;]+);")
_TABLE_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[", re.M)


def _strip_comments(text: str) -> str:
    # keep positions stable so reported columns match the source
    return "\n".join(line.split("%", 1)[0].ljust(len(line)) for line in text.split("\n"))


def _line_col(text: str, pos: int) -> tuple[int, int]:
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return line, col


def _read_tables(text: str) -> tuple[dict[str, list[list[float]]], float]:
    clean = _strip_comments(text)
    m = _SCALAR_RE.search(clean)
    if not m:
        raise CaseFormatError("missing mpc.baseMVA")
    try:
        base = float(m.group(1))
    except ValueError:
        raise CaseFormatError("bad baseMVA value", *_line_col(clean, m.start(1))) from None

    tables: dict[str, list[list[float]]] = {}
    for m in _TABLE_RE.finditer(clean):
        name = m.group(1)
        start = m.end()
        end = clean.find("]", start)
        if end < 0:
            raise CaseFormatError(f"unterminated table mpc.{name}", *_line_col(clean, m.start()))
        if name not in _TABLE_COLS:
            continue
        rows: list[list[float]] = []
        row: list[float] = []
        for tok in re.finditer(r"[^\s;,]+|;|\n", clean[start:end]):
            s = tok.group(0)
            if s in (";", "\n"):
                if row:
                    rows.append(row)
                    row = []
                continue
            try:
                row.append(float(s))
            except ValueError:
                raise CaseFormatError(f"bad number {s!r} in mpc.{name}",
                                      *_line_col(clean, start + tok.start())) from None
        if row:
            rows.append(row)
        width = _TABLE_COLS[name]
        for k, r in enumerate(rows):
            if len(r) < width:
                raise CaseFormatError(f"mpc.{name} row {k + 1} has {len(r)} columns, need {width}")
        tables[name] = rows
    for name in _TABLE_COLS:
        if name not in tables:
            raise CaseFormatError(f"missing table mpc.{name}")
    return tables, base


def _poly_cost(row: list[float], base: float, gen_no: int) -> tuple[float, float, float]:
    model = int(row[0])
    if model != 2:
        raise CaseFormatError(f"generator {gen_no}: only polynomial costs (model 2) are supported")
    n = int(row[3])
    coeffs = row[4:4 + n]
    if len(coeffs) != n:
        raise CaseFormatError(f"generator {gen_no}: gencost declares {n} coefficients, found {len(coeffs)}")
    coeffs = [0.0] * (3 - n) + list(coeffs) if n <= 3 else list(coeffs)
    if n > 3:
        if any(c != 0 for c in coeffs[:n - 3]):
            raise CaseFormatError(f"generator {gen_no}: cost polynomial of degree > 2")
        coeffs = coeffs[n - 3:]
    c2, c1, c0 = coeffs
    if c2 < 0:
        raise CaseFormatError(f"generator {gen_no}: nonconvex cost (negative quadratic coefficient)")
    return (c2 * base * base, c1 * base, c0)


def _angle_limit(angmin: float, angmax: float) -> float:
    lim = [abs(a) for a in (angmin, angmax) if a != 0 and abs(a) < 360]
    deg = min(lim + [90.0])
    return math.radians(deg)


def parse_case(text: str, name: str = "") -> Network:
    """Parse MATPOWER case text into a per-unit :class:`Network`.

    Out-of-service generators and branches are dropped; buses are re-indexed
    contiguously in file order and the original numbers kept in ``Bus.id``.
    """
    tables, base = _read_tables(text)
    if not name:
        m = re.search(r"function\s+mpc\s*=\s*(\w+)", text)
        name = m.group(1) if m else "case"

    bus_rows = [r for r in tables["bus"] if int(r[1]) != 4]
    id_map: dict[int, int] = {}
    for k, r in enumerate(bus_rows):
        bid = int(r[0])
        if bid in id_map:
            raise CaseFormatError(f"duplicate bus id {bid}")
        id_map[bid] = k

    def lookup(bid: float, what: str) -> int:
        try:
            return id_map[int(bid)]
        except KeyError:
            raise CaseFormatError(f"{what} references unknown bus {int(bid)}") from None

    gen_rows = tables["gen"]
    cost_rows = tables["gencost"]
    if len(cost_rows) < len(gen_rows):
        raise CaseFormatError(f"gencost has {len(cost_rows)} rows for {len(gen_rows)} generators")
    gens = []
    for k, (g, c) in enumerate(zip(gen_rows, cost_rows)):
        if g[7] <= 0:
            continue
        cost = _poly_cost(c, base, k + 1)
        gens.append(Generator(bus=lookup(g[0], f"generator {k + 1}"),
                              pmin=g[9] / base, pmax=g[8] / base,
                              qmin=g[4] / base, qmax=g[3] / base, cost=cost))

    lines = []
    for k, r in enumerate(tables["branch"]):
        status = r[10]
        if status <= 0:
            continue
        f = lookup(r[0], f"branch {k + 1}")
        t = lookup(r[1], f"branch {k + 1}")
        tap = r[8] if r[8] != 0 else 1.0
        shift = math.radians(r[9])
        try:
            y = build_admittance(r[2], r[3], r[4], tap, shift)
        except ValueError as exc:
            raise CaseFormatError(f"branch {k + 1}: {exc}") from None
        rate = r[5] / base if r[5] > 0 else math.inf
        angmin = r[11] if len(r) > 11 else -360.0
        angmax = r[12] if len(r) > 12 else 360.0
        lines.append(Line(f, t, r[2], r[3], r[4], tap, shift, rate, _angle_limit(angmin, angmax), y))

    nbrs: list[list[int]] = [[] for _ in bus_rows]
    for k, ln in enumerate(lines):
        nbrs[ln.from_bus].append(k)
        nbrs[ln.to_bus].append(k)

    buses = []
    ref = None
    for k, r in enumerate(bus_rows):
        if int(r[1]) == 3 and ref is None:
            ref = k
        buses.append(Bus(index=k, id=int(r[0]), kind=int(r[1]), pd=r[2] / base, qd=r[3] / base,
                         gs=r[4] / base, bs=r[5] / base, vmin=r[12], vmax=r[11],
                         neighbors=tuple(nbrs[k])))
    if ref is None:
        ref = gens[0].bus if gens else 0
    return Network(name=name, base_mva=base, buses=tuple(buses), generators=tuple(gens),
                   lines=tuple(lines), ref=ref, bus_ids=tuple(b.id for b in buses))


def read_case(path) -> Network:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    stem = str(path).rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return parse_case(text, name=stem)


class Diagnostic(NamedTuple):
    kind: str
    detail: str

    def __str__(self) -> str:
        return f"{self.kind}: {self.detail}"


def validate(network: Network) -> list[Diagnostic]:
    """Check type invariants and connectivity; returns an empty list when clean."""
    out = []
    for b in network.buses:
        if not 0 < b.vmin <= b.vmax:
            out.append(Diagnostic("voltage bound order", f"bus {b.id}: vmin={b.vmin} vmax={b.vmax}"))
    for k, g in enumerate(network.generators):
        if not 0 <= g.bus < network.n_bus:
            out.append(Diagnostic("dangling reference", f"generator {k} at bus index {g.bus}"))
        if g.pmin > g.pmax:
            out.append(Diagnostic("generation bound order", f"generator {k}: pmin > pmax"))
        if g.qmin > g.qmax:
            out.append(Diagnostic("generation bound order", f"generator {k}: qmin > qmax"))
        if g.cost[0] < 0:
            out.append(Diagnostic("nonconvex cost", f"generator {k}"))
    for k, ln in enumerate(network.lines):
        if not ln.s_max > 0:
            out.append(Diagnostic("flow limit", f"line {k}: s_max={ln.s_max}"))
        if not 0 < ln.angle_max <= math.pi / 2 + 1e-12:
            out.append(Diagnostic("angle limit", f"line {k}: angle_max={ln.angle_max}"))
    for b in network.buses:
        for k in b.neighbors:
            ln = network.lines[k]
            if b.index not in (ln.from_bus, ln.to_bus):
                out.append(Diagnostic("neighbor mismatch", f"bus {b.id} lists line {k}"))
    n = network.n_bus
    if n > 1:
        la = network.line_arrays
        adj = sp.coo_matrix((np.ones(network.n_line), (la["f"], la["t"])), shape=(n, n))
        ncomp, _ = connected_components(adj, directed=False)
        if ncomp > 1:
            out.append(Diagnostic("disconnected", f"{ncomp} components"))
    return out


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".12g")


def dump_network(network: Network) -> str:
    """Canonical key-value text dump used for golden comparisons."""
    out = [f"name = {network.name}", f"base_mva = {_fmt(network.base_mva)}",
           f"buses = {network.n_bus}", f"lines = {network.n_line}",
           f"generators = {network.n_gen}", f"ref = {network.bus_ids[network.ref]}"]
    for b in network.buses:
        out.append(f"bus.{b.id} = kind={b.kind} pd={_fmt(b.pd)} qd={_fmt(b.qd)} gs={_fmt(b.gs)} "
                   f"bs={_fmt(b.bs)} vmin={_fmt(b.vmin)} vmax={_fmt(b.vmax)}")
    for k, g in enumerate(network.generators):
        out.append(f"gen.{k} = bus={network.bus_ids[g.bus]} p=[{_fmt(g.pmin)},{_fmt(g.pmax)}] "
                   f"q=[{_fmt(g.qmin)},{_fmt(g.qmax)}] cost={','.join(_fmt(c) for c in g.cost)}")
    for k, ln in enumerate(network.lines):
        y = " ".join(f"{n}={_fmt(v)}" for n, v in zip(ln.y._fields, ln.y))
        out.append(f"line.{k} = {network.bus_ids[ln.from_bus]}-{network.bus_ids[ln.to_bus]} "
                   f"s_max={_fmt(ln.s_max)} angle_max={_fmt(ln.angle_max)} {y}")
    return "\n".join(out) + "\n"


def to_matpower(network: Network) -> str:
    """Serialize back to MATPOWER text (in-service elements only)."""
    base = network.base_mva
    ids = network.bus_ids
    out = [f"function mpc = {network.name}", "mpc.version = '2';", f"mpc.baseMVA = {_fmt(base)};", "",
           "mpc.bus = ["]
    gen_at = set(network.generator_buses)
    for b in network.buses:
        kind = b.kind if b.kind in (1, 2, 3) else (2 if b.index in gen_at else 1)
        out.append("\t" + "\t".join(_fmt(v) for v in (
            b.id, kind, b.pd * base, b.qd * base, b.gs * base, b.bs * base, 1, 1.0, 0.0, 0.0, 1,
            b.vmax, b.vmin)) + ";")
    out += ["];", "", "mpc.gen = ["]
    for g in network.generators:
        out.append("\t" + "\t".join(_fmt(v) for v in (
            ids[g.bus], 0.0, 0.0, g.qmax * base, g.qmin * base, 1.0, base, 1, g.pmax * base,
            g.pmin * base)) + ";")
    out += ["];", "", "mpc.branch = ["]
    for ln in network.lines:
        rate = 0.0 if math.isinf(ln.s_max) else ln.s_max * base
        ang = math.degrees(ln.angle_max)
        out.append("\t" + "\t".join(_fmt(v) for v in (
            ids[ln.from_bus], ids[ln.to_bus], ln.r, ln.x, ln.b_charge, rate, rate, rate,
            ln.tap, math.degrees(ln.shift), 1, -ang, ang)) + ";")
    out += ["];", "", "mpc.gencost = ["]
    for g in network.generators:
        c2, c1, c0 = g.cost
        out.append("\t" + "\t".join(_fmt(v) for v in (2, 0, 0, 3, c2 / base ** 2, c1 / base, c0)) + ";")
    out += ["];", ""]
    return "\n".join(out)
