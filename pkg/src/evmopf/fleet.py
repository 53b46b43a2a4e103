"""Driving profiles from trip records and per-bus EV aggregator parameters.

Drive durations are measured in fractional hours, so that
``energy = speed (mph) * duration (h) * consumption (kWh/mile)`` is in kWh.
Period ``t`` (0-based) covers the clock interval ``[t, t + 1)``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .case import Network

log = logging.getLogger(__name__)

PASSENGER_TYPES = frozenset({"car", "suv", "van", "pickup truck", "pickup", "1", "2", "3", "4"})
BATTERY_KWH = 32.0
CHARGER_KW = 6.6
CONSUMPTION_KWH_PER_MILE = 0.3
EFFICIENCY = 0.9

TRIP_FIELDS = ["vehicle_id", "trip_id", "start_hr", "end_hr", "miles", "weight",
               "vehicle_type", "household_flag"]


@dataclass(frozen=True)
class TripRecord:
    vehicle_id: str
    trip_id: str
    start: float
    end: float
    miles: float
    weight: float = 1.0
    vehicle_type: str = "car"
    household: bool = True


def read_trips(path) -> list[TripRecord]:
    """Read the trip CSV. ``household_flag`` is 1 for household vehicles, 0 otherwise."""
    trips = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRIP_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                trips.append(TripRecord(
                    vehicle_id=row["vehicle_id"], trip_id=row["trip_id"],
                    start=float(row["start_hr"]), end=float(row["end_hr"]),
                    miles=float(row["miles"]), weight=float(row["weight"]),
                    vehicle_type=row["vehicle_type"].strip(),
                    household=row["household_flag"].strip() not in ("0", "false", "False", "")))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad row {row}") from None
    return trips


def write_trips(path, trips: Iterable[TripRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRIP_FIELDS)
        for r in trips:
            w.writerow([r.vehicle_id, r.trip_id, r.start, r.end, r.miles, r.weight,
                        r.vehicle_type, int(r.household)])


def filter_trips(trips: Iterable[TripRecord], vehicle_types=PASSENGER_TYPES,
                 battery_kwh: float = BATTERY_KWH,
                 c_avg: float = CONSUMPTION_KWH_PER_MILE) -> list[TripRecord]:
    """Keep household passenger-car trips shorter than one full battery."""
    if c_avg <= 0:
        raise ValueError("c_avg must be positive")
    limit = battery_kwh / c_avg
    types = {t.lower() for t in vehicle_types}
    return [r for r in trips
            if r.household and r.vehicle_type.lower() in types and r.miles < limit]


def duration_matrix(trips: Sequence[TripRecord], horizon: int = 24) -> np.ndarray:
    """Hours of driving of each trip inside each period, shape ``(trips, horizon)``."""
    start = np.array([r.start for r in trips], dtype=float)[:, None]
    end = np.array([r.end for r in trips], dtype=float)[:, None]
    t = np.arange(horizon, dtype=float)[None, :]
    return np.clip(np.minimum(t + 1, end) - np.maximum(t, start), 0.0, 1.0)


@dataclass(frozen=True)
class EnergyMatrix:
    omega: np.ndarray            # kWh, (vehicles, periods)
    delta: np.ndarray            # hours, (trips, periods)
    speed: np.ndarray            # mph, per trip
    vehicle_ids: tuple[str, ...]
    vehicle_weights: np.ndarray
    vehicle_miles: np.ndarray

    @property
    def weighted_demand(self) -> np.ndarray:
        return self.vehicle_weights * self.omega.sum(axis=1)


def energy_matrix(delta: np.ndarray, trips: Sequence[TripRecord],
                  c_avg: float = CONSUMPTION_KWH_PER_MILE,
                  vehicle_ids: Sequence[str] | None = None) -> EnergyMatrix:
    """Per-vehicle hourly energy requirement from drive durations."""
    dur = np.array([r.end - r.start for r in trips], dtype=float)
    if np.any(dur <= 0):
        bad = [r.trip_id for r in trips if r.end <= r.start]
        raise ValueError(f"zero or negative trip duration: {bad}")
    speed = np.array([r.miles for r in trips], dtype=float) / dur
    if vehicle_ids is None:
        vehicle_ids = sorted({r.vehicle_id for r in trips})
    row = {v: k for k, v in enumerate(vehicle_ids)}
    omega = np.zeros((len(vehicle_ids), delta.shape[1]))
    weights = np.zeros(len(vehicle_ids))
    miles = np.zeros(len(vehicle_ids))
    for k, r in enumerate(trips):
        v = row[r.vehicle_id]
        omega[v] += speed[k] * delta[k] * c_avg
        weights[v] = r.weight
        miles[v] += r.miles
    return EnergyMatrix(omega, delta, speed, tuple(vehicle_ids), weights, miles)


@dataclass(frozen=True)
class VehicleGroup:
    """Vehicles aggregated behind one bus."""

    members: tuple[str, ...]
    vehicles: float              # sum of survey weights
    demand: np.ndarray           # weighted kWh per period, sum_v w_v * omega_v
    miles: float                 # weighted miles

    @property
    def total(self) -> float:
        return float(self.demand.sum())

    @property
    def profile(self) -> np.ndarray:
        """Per-vehicle energy requirement (weighted average of members)."""
        return self.demand / self.vehicles


def form_groups(energy: EnergyMatrix, n_groups: int) -> list[VehicleGroup]:
    """Round-robin partition of vehicles, sorted by weighted demand, into ``n_groups``."""
    nv = len(energy.vehicle_ids)
    if n_groups <= 0 or nv < n_groups:
        raise ValueError(f"cannot form {n_groups} groups from {nv} vehicles")
    wd = energy.weighted_demand
    order = sorted(range(nv), key=lambda v: (-wd[v], energy.vehicle_ids[v]))
    groups = []
    for g in range(n_groups):
        idx = order[g::n_groups]
        w = energy.vehicle_weights[idx]
        groups.append(VehicleGroup(
            members=tuple(energy.vehicle_ids[v] for v in idx),
            vehicles=float(w.sum()),
            demand=(w[:, None] * energy.omega[idx]).sum(axis=0),
            miles=float((w * energy.vehicle_miles[idx]).sum())))
    return groups


def assign_groups(network: Network, groups: Sequence[VehicleGroup]) -> dict[int, VehicleGroup]:
    """Pair load buses and groups rank by rank (largest load gets largest demand).

    Load ties are broken by ascending original bus id.
    """
    load = network.load_buses
    if len(groups) != len(load):
        raise ValueError(f"{len(groups)} groups for {len(load)} load buses")
    buses = sorted(load, key=lambda i: (-network.buses[i].pd, network.buses[i].id))
    ranked = sorted(groups, key=lambda g: (-g.total, g.members))
    return dict(zip(buses, ranked))


@dataclass(frozen=True)
class FleetGroup:
    """Aggregated EV parameters at one bus, energies in kWh and powers in kW."""

    bus: int
    c: np.ndarray
    a_max: np.ndarray
    b_max: np.ndarray
    s_min: np.ndarray
    s_max: np.ndarray
    eta: float
    initial: float = 0.0
    miles: float = 0.0
    diagnostics: tuple[str, ...] = field(default=())

    @property
    def horizon(self) -> int:
        return len(self.c)


def min_stock(c: np.ndarray, cap: np.ndarray | float = np.inf) -> tuple[np.ndarray, list[str]]:
    """Remaining demand of the driving block containing each period, clamped to ``cap``."""
    c = np.asarray(c, dtype=float)
    cap = np.broadcast_to(np.asarray(cap, dtype=float), c.shape)
    smin = np.zeros_like(c)
    notes = []
    run = 0.0
    for t in range(len(c) - 1, -1, -1):
        run = run + c[t] if c[t] > 0 else 0.0
        smin[t] = run
    for t in range(len(c)):
        if smin[t] > cap[t]:
            if t == 0 or c[t - 1] <= 0:
                notes.append(f"driving block starting at period {t} needs {smin[t]:.6g} kWh "
                             f"> capacity {cap[t]:.6g}")
            smin[t] = cap[t]
    return smin, notes


def derive_charging_params(omega, weight: float, vehicles: float = 1.0, *,
                           charger_kw: float = CHARGER_KW, usable_kwh: float = BATTERY_KWH,
                           efficiency: float = EFFICIENCY, bus: int = -1,
                           miles: float = 0.0) -> FleetGroup:
    if weight <= 0:
        raise ValueError("weight must be positive")
    scale = weight * vehicles
    c = scale * np.asarray(omega, dtype=float)
    connected = c <= 0
    a_max = np.where(connected, scale * charger_kw, 0.0)
    s_max = np.full(c.shape, scale * usable_kwh)
    s_min, notes = min_stock(c, s_max)
    if c.size and c[0] > 0:
        notes.append("driving in the first period with an empty initial battery is infeasible")
    for n in notes:
        log.warning("bus %d: %s", bus, n)
    return FleetGroup(bus=bus, c=c, a_max=a_max, b_max=a_max.copy(), s_min=s_min, s_max=s_max,
                      eta=efficiency, initial=0.0, miles=scale * miles, diagnostics=tuple(notes))


@dataclass(frozen=True)
class FleetModel:
    groups: dict[int, FleetGroup]
    horizon: int
    weight: float

    @property
    def total_miles(self) -> float:
        return float(sum(g.miles for g in self.groups.values()))

    @property
    def total_energy(self) -> float:
        return float(sum(g.c.sum() for g in self.groups.values()))

    @classmethod
    def empty(cls, horizon: int = 24) -> "FleetModel":
        return cls({}, horizon, 1.0)


def build_fleet(network: Network, trips: Sequence[TripRecord], weight: float, horizon: int = 24, *,
                c_avg: float = CONSUMPTION_KWH_PER_MILE, battery_kwh: float = BATTERY_KWH,
                charger_kw: float = CHARGER_KW, efficiency: float = EFFICIENCY) -> FleetModel:
    """Trip records to one :class:`FleetGroup` per load bus."""
    kept = filter_trips(trips, battery_kwh=battery_kwh, c_avg=c_avg)
    energy = energy_matrix(duration_matrix(kept, horizon), kept, c_avg)
    groups = form_groups(energy, len(network.load_buses))
    out = {}
    for bus, g in assign_groups(network, groups).items():
        out[bus] = derive_charging_params(g.profile, weight, g.vehicles, charger_kw=charger_kw,
                                          usable_kwh=battery_kwh, efficiency=efficiency,
                                          bus=bus, miles=g.miles / g.vehicles)
    return FleetModel(dict(sorted(out.items())), horizon, weight)


def dump_fleet(fleet: FleetModel, network: Network | None = None) -> str:
    def row(a):
        return ",".join(format(float(v), ".10g") for v in a)

    out = [f"horizon = {fleet.horizon}", f"weight = {fleet.weight:.10g}",
           f"groups = {len(fleet.groups)}"]
    for bus, g in fleet.groups.items():
        name = network.bus_ids[bus] if network is not None else bus
        out += [f"[bus {name}]", f"eta = {g.eta:.10g}", f"initial = {g.initial:.10g}",
                f"c = {row(g.c)}", f"a_max = {row(g.a_max)}", f"b_max = {row(g.b_max)}",
                f"s_min = {row(g.s_min)}", f"s_max = {row(g.s_max)}"]
    return "\n".join(out) + "\n"
