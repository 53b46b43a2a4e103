"""Bundled synthetic cases and series, plus a reproducible trip generator.

Everything here is made up for testing and demonstration: small MATPOWER
cases, evening-peaked demand shapes, marginal emission factors that are high
overnight and dip around midday, and commuter-style trip diaries.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .case import Network, read_case
from .fleet import TripRecord, build_fleet, read_trips
from .formulation import MopfInstance, assemble_instance
from .timeseries import (compute_weight, normalize_profile, read_emissions, read_hourly_csv,
                         scale_loads)

CASES = ("case1", "case2", "case3", "case5")
SEASONS = ("summer", "winter")


def data_path(name: str) -> Path:
    """Path of a bundled data file, e.g. ``data_path("case5.m")``."""
    p = Path(str(resources.files("evmopf") / "data" / name))
    if not p.exists():
        raise FileNotFoundError(f"no bundled file {name!r}")
    return p


def load_case(name: str) -> Network:
    return read_case(data_path(f"{name}.m"))


def synthetic_trips(rng: np.random.Generator | int = 0, n_vehicles: int = 30, *,
                    prefix: str = "v") -> list[TripRecord]:
    """Commuter-like diaries: a morning and an evening trip, sometimes an errand.

    All trips fall inside ``[1, 23.5]`` hours, so nobody drives in the first
    period.
    """
    rng = np.random.default_rng(rng)
    trips = []
    for k in range(n_vehicles):
        vid = f"{prefix}{k:03d}"
        weight = float(rng.integers(200, 1500))
        vtype = str(rng.choice(["car", "car", "suv", "van"]))
        starts = [rng.uniform(6.0, 9.0), rng.uniform(16.0, 19.5)]
        if rng.random() < 0.4:
            starts.append(rng.uniform(11.0, 14.0))
        if rng.random() < 0.2:
            starts.append(rng.uniform(20.0, 22.0))
        for n, s in enumerate(sorted(starts)):
            start = round(float(s), 2)
            dur = round(float(rng.uniform(0.2, 1.2)), 2)
            mph = float(rng.uniform(18.0, 45.0))
            trips.append(TripRecord(vid, f"{vid}-{n}", start, round(start + dur, 2),
                                    round(mph * dur, 1), weight, vtype, True))
    return trips


def season_shapes() -> tuple[dict, dict]:
    """Raw seasonal consumption series and their jointly normalized shapes."""
    raw = {s: read_hourly_csv(data_path(f"demand_{s}.csv")) for s in SEASONS}
    return raw, normalize_profile(raw)


def demo_instance(case: str = "case5", season: str = "summer", *, ev: bool = True,
                  v2g: bool = True, trips: list[TripRecord] | None = None,
                  kwh_to_pu: float | None = None) -> MopfInstance:
    """Assemble a bundled case with the bundled series and trip file."""
    network = load_case(case)
    raw, shapes = season_shapes()
    loads = scale_loads(network, shapes[season])
    grid_total = float(loads.p.sum()) * network.base_mva
    weight = compute_weight(grid_total, float(raw["summer"].sum()), float(raw["winter"].sum()))
    fleet = None
    if ev:
        trips = read_trips(data_path("trips.csv")) if trips is None else trips
        fleet = build_fleet(network, trips, weight, shapes[season].horizon)
    emissions = read_emissions(data_path(f"emissions_{season}.csv"))
    return assemble_instance(network, loads, fleet, emissions, ev_enabled=ev, v2g_enabled=v2g,
                             kwh_to_pu=kwh_to_pu)
