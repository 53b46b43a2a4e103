"""Hourly demand shapes, marginal emission factors and multi-period loads."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .case import Network

HOURS = 24


@dataclass(frozen=True)
class SeasonProfile:
    season: str
    values: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class EmissionSeries:
    """Marginal CO2 emission factors in kg/MWh, one per period."""

    values: np.ndarray

    def __post_init__(self):
        if np.any(self.values < 0):
            raise ValueError("emission factors must be nonnegative")

    @property
    def horizon(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class PeriodLoads:
    """Per-unit loads indexed ``[bus, period]``."""

    p: np.ndarray
    q: np.ndarray

    @property
    def horizon(self) -> int:
        return self.p.shape[1]


def normalize_profile(raw: Mapping[str, Sequence[float]]) -> dict[str, SeasonProfile]:
    """Divide every season's hourly consumption by the largest value over all seasons."""
    if not raw:
        raise ValueError("no series given")
    arrays = {k: np.asarray(v, dtype=float) for k, v in raw.items()}
    lengths = {a.size for a in arrays.values()}
    if 0 in lengths:
        raise ValueError("empty series")
    if len(lengths) != 1:
        raise ValueError(f"season series have different lengths: {sorted(lengths)}")
    if any(np.any(a <= 0) for a in arrays.values()):
        raise ValueError("consumption values must be positive")
    peak = max(a.max() for a in arrays.values())
    return {k: SeasonProfile(k, a / peak) for k, a in arrays.items()}


def scale_loads(network: Network, shape: SeasonProfile) -> PeriodLoads:
    s = np.asarray(shape.values, dtype=float)
    return PeriodLoads(np.outer(network.pd, s), np.outer(network.qd, s))


def compute_weight(grid_total: float, summer_total: float, winter_total: float) -> float:
    """Ratio of total grid demand to the larger seasonal daily consumption."""
    denom = max(summer_total, winter_total)
    if denom <= 0:
        raise ValueError("seasonal consumption totals must be positive")
    return grid_total / denom


def read_hourly_csv(path, horizon: int | None = None) -> np.ndarray:
    """Read an ``hour,value`` CSV; hours must run 0..T-1 without gaps."""
    hours, values = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"hour", "value"} - set(reader.fieldnames):
            raise ValueError(f"{path}: expected header 'hour,value'")
        for lineno, row in enumerate(reader, start=2):
            try:
                hours.append(int(row["hour"]))
                values.append(float(row["value"]))
            except (TypeError, ValueError):
                raise ValueError(f"{path}:{lineno}: bad row {row}") from None
    if hours != list(range(len(hours))):
        raise ValueError(f"{path}: hours must be 0..T-1 in order without gaps")
    if horizon is not None and len(values) != horizon:
        raise ValueError(f"{path}: expected {horizon} rows, found {len(values)}")
    return np.array(values)


def write_hourly_csv(path, values) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["hour", "value"])
        for t, v in enumerate(values):
            w.writerow([t, repr(float(v))])


def read_emissions(path, horizon: int | None = None) -> EmissionSeries:
    return EmissionSeries(read_hourly_csv(path, horizon))
