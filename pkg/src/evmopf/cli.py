"""Command-line front end: ``evmopf {inspect,profiles,solve,benchmark,pareto}``.

Settings come from an INI file (``--config``), command-line flags and
built-in defaults, in the order flags > file > defaults.  The thread cap also
reads ``EVMOPF_THREADS``, which sits between flags and the file.  Relative
paths in a config file are resolved against the file's directory.

Exit codes: 0 success, 1 input error, 2 solver failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .acopf import BenchmarkInfeasible, LocalSolveError, repair_schedule, solve_schedule
from .case import CaseFormatError, read_case, validate
from .conic import dump_solution, solve_conic, write_program
from .fleet import build_fleet, dump_fleet, read_trips
from .formulation import assemble_instance, build_socp
from .pareto import (BaseCaseInfeasible, ParetoPoint, benchmark_point, no_ev_cost,
                     percent_changes, prepare, sweep, write_frontier, write_hourly)
from .timeseries import (compute_weight, normalize_profile, read_emissions, read_hourly_csv,
                         scale_loads, write_hourly_csv)

log = logging.getLogger("evmopf")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2
THREADS_ENV = "EVMOPF_THREADS"


class InputError(Exception):
    pass


class SolverFailure(Exception):
    pass


_DEFAULTS = {
    "case": {"path": ""},
    "series": {"season": "summer", "demand_summer": "", "demand_winter": "", "emissions": "",
               "trips": ""},
    "ev": {"enabled": "true", "v2g": "true", "kwh_to_pu": ""},
    "sweep": {"points": "10", "threads": "", "benchmark": "false", "gasoline_gco2_per_mile": ""},
    "solver": {"tol": "1e-10", "max_iter": "200"},
    "output": {"dir": "evmopf-out"},
}

# flag dest -> (section, key)
_FLAG_KEYS = {
    "case": ("case", "path"), "season": ("series", "season"),
    "demand_summer": ("series", "demand_summer"), "demand_winter": ("series", "demand_winter"),
    "emissions": ("series", "emissions"), "trips": ("series", "trips"),
    "ev": ("ev", "enabled"), "v2g": ("ev", "v2g"), "kwh_to_pu": ("ev", "kwh_to_pu"),
    "points": ("sweep", "points"), "threads": ("sweep", "threads"),
    "benchmark": ("sweep", "benchmark"), "gasoline": ("sweep", "gasoline_gco2_per_mile"),
    "tol": ("solver", "tol"), "max_iter": ("solver", "max_iter"), "out": ("output", "dir"),
}
_PATH_KEYS = {("case", "path"), ("series", "demand_summer"), ("series", "demand_winter"),
              ("series", "emissions"), ("series", "trips"), ("output", "dir")}


@dataclass
class RunConfig:
    case: Path | None
    demand_summer: Path | None
    demand_winter: Path | None
    emissions: Path | None
    trips: Path | None
    season: str
    ev: bool
    v2g: bool
    kwh_to_pu: float | None
    points: int
    threads: int | None
    benchmark: bool
    gasoline_gco2_per_mile: float | None
    tol: float
    max_iter: int
    out: Path

    def echo(self) -> dict:
        return {k: (str(v) if isinstance(v, Path) else v) for k, v in asdict(self).items()}


def _parse_bool(text: str, what: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise InputError(f"{what}: expected a boolean, got {text!r}")


def _number(text: str, kind, what: str):
    try:
        return kind(text)
    except ValueError:
        raise InputError(f"{what}: expected a number, got {text!r}") from None


def load_config(path: str | None, flags: dict) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_dict(_DEFAULTS)
    base = Path.cwd()
    if path:
        p = Path(path)
        if not p.is_file():
            raise InputError(f"config file {path} not found")
        try:
            parser.read(p, encoding="utf-8")
        except configparser.Error as exc:
            raise InputError(f"config file {path}: {exc}") from None
        base = p.resolve().parent
        for sec, key in _PATH_KEYS:
            val = parser.get(sec, key, fallback="")
            if val and not Path(val).is_absolute():
                parser.set(sec, key, str(base / val))
    env_threads = os.environ.get(THREADS_ENV)
    if env_threads:
        parser.set("sweep", "threads", env_threads)
    for dest, (sec, key) in _FLAG_KEYS.items():
        val = flags.get(dest)
        if val is not None:
            parser.set(sec, key, str(val))

    def opt_path(sec, key):
        v = parser.get(sec, key).strip()
        return Path(v) if v else None

    def opt_float(sec, key):
        v = parser.get(sec, key).strip()
        return _number(v, float, f"[{sec}] {key}") if v else None

    threads = parser.get("sweep", "threads").strip()
    cfg = RunConfig(
        case=opt_path("case", "path"),
        demand_summer=opt_path("series", "demand_summer"),
        demand_winter=opt_path("series", "demand_winter"),
        emissions=opt_path("series", "emissions"),
        trips=opt_path("series", "trips"),
        season=parser.get("series", "season").strip().lower(),
        ev=_parse_bool(parser.get("ev", "enabled"), "[ev] enabled"),
        v2g=_parse_bool(parser.get("ev", "v2g"), "[ev] v2g"),
        kwh_to_pu=opt_float("ev", "kwh_to_pu"),
        points=_number(parser.get("sweep", "points"), int, "[sweep] points"),
        threads=_number(threads, int, "[sweep] threads") if threads else None,
        benchmark=_parse_bool(parser.get("sweep", "benchmark"), "[sweep] benchmark"),
        gasoline_gco2_per_mile=opt_float("sweep", "gasoline_gco2_per_mile"),
        tol=_number(parser.get("solver", "tol"), float, "[solver] tol"),
        max_iter=_number(parser.get("solver", "max_iter"), int, "[solver] max_iter"),
        out=Path(parser.get("output", "dir")),
    )
    if cfg.points < 2:
        raise InputError("[sweep] points must be at least 2")
    if not cfg.tol > 0:
        raise InputError("[solver] tol must be positive")
    if cfg.threads is not None and cfg.threads < 1:
        raise InputError("thread cap must be at least 1")
    if cfg.season not in ("summer", "winter"):
        raise InputError(f"unknown season {cfg.season!r}")
    return cfg


def _require(cfg: RunConfig, *names: str) -> None:
    for name in names:
        p = getattr(cfg, name)
        if p is None:
            raise InputError(f"missing input: {name}")
        if not Path(p).is_file():
            raise InputError(f"{name}: file {p} not found")


def _solver_opts(cfg: RunConfig) -> dict:
    return {"tol_rel": cfg.tol, "tol_feas": cfg.tol, "max_iter": cfg.max_iter}


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def build_run(cfg: RunConfig, *, need_emissions: bool = True):
    """Read every input named in ``cfg`` and assemble the instance."""
    _require(cfg, "case", "demand_summer", "demand_winter")
    if need_emissions:
        _require(cfg, "emissions")
    if cfg.ev:
        _require(cfg, "trips")
    network = read_case(cfg.case)
    raw = {"summer": read_hourly_csv(cfg.demand_summer), "winter": read_hourly_csv(cfg.demand_winter)}
    shapes = normalize_profile(raw)
    shape = shapes[cfg.season]
    loads = scale_loads(network, shape)
    weight = compute_weight(float(loads.p.sum()) * network.base_mva,
                            float(raw["summer"].sum()), float(raw["winter"].sum()))
    fleet = None
    if cfg.ev:
        fleet = build_fleet(network, read_trips(cfg.trips), weight, shape.horizon)
    emissions = read_emissions(cfg.emissions, shape.horizon) if cfg.emissions else None
    instance = assemble_instance(network, loads, fleet, emissions, ev_enabled=cfg.ev,
                                 v2g_enabled=cfg.v2g, kwh_to_pu=cfg.kwh_to_pu)
    return instance, {"network": network, "shapes": shapes, "weight": weight, "fleet": fleet}


# ---------------------------------------------------------------------------
# subcommands


def cmd_inspect(args) -> int:
    network = read_case(args.case)
    print(f"buses={network.n_bus} lines={network.n_line} gens={network.n_gen}")
    print(f"load_mw={network.total_load_mw():.6g} load_mvar={float(network.qd.sum()) * network.base_mva:.6g}")
    print(f"gen_pmax_mw={sum(g.pmax for g in network.generators) * network.base_mva:.6g}")
    diags = validate(network)
    for d in diags:
        print(f"diagnostic: {d.kind}: {d.detail}")
    return EXIT_OK if not diags else EXIT_INPUT


def cmd_profiles(cfg: RunConfig) -> int:
    instance, ctx = build_run(cfg, need_emissions=False)
    cfg.out.mkdir(parents=True, exist_ok=True)
    for season, shape in ctx["shapes"].items():
        write_hourly_csv(cfg.out / f"shape_{season}.csv", shape.values)
    fleet = ctx["fleet"]
    if fleet is not None:
        (cfg.out / "fleet.txt").write_text(dump_fleet(fleet, ctx["network"]), encoding="utf-8")
    print(f"weight={ctx['weight']:.6g}")
    print(f"ev_groups={instance.n_ev} ev_energy_kwh={fleet.total_energy if fleet else 0.0:.6g} "
          f"ev_miles={instance.ev_miles:.6g}")
    return EXIT_OK


def cmd_solve(cfg: RunConfig, args) -> int:
    instance, _ = build_run(cfg, need_emissions=args.objective == "emission" or args.cap is not None)
    opts = _solver_opts(cfg)
    if instance.emissions is not None:
        instance = prepare(instance, **opts)
    instance = instance.with_objective(args.objective).with_cap(args.cap)
    program = build_socp(instance)
    cfg.out.mkdir(parents=True, exist_ok=True)
    if args.export:
        Path(args.export).write_text(write_program(program), encoding="utf-8")
    sol = solve_conic(program, **opts)
    (cfg.out / "solution.txt").write_text(dump_solution(program, sol), encoding="utf-8")
    print(f"status={sol.status} objective={sol.objective:.10g} bound={sol.bound:.10g} "
          f"iterations={sol.iterations}")
    if not sol.optimal:
        return EXIT_SOLVER
    if args.local:
        vi = program.index
        a, b = repair_schedule(instance, sol.x[vi["a"]], sol.x[vi["b"]])
        result = solve_schedule(instance, a, b, threads=cfg.threads)
        if not result.valid:
            for f in result.failures:
                print(f"local failure: {f}", file=sys.stderr)
            return EXIT_SOLVER
        print(f"local_cost={result.cost:.10g} gap_pct={100 * (1 - sol.bound / result.cost):.6g}")
    return EXIT_OK


def _gasoline(cfg: RunConfig) -> float:
    if cfg.gasoline_gco2_per_mile is None:
        raise InputError("[sweep] gasoline_gco2_per_mile is required (g CO2 per mile, no default)")
    if cfg.gasoline_gco2_per_mile <= 0:
        raise InputError("[sweep] gasoline_gco2_per_mile must be positive")
    return cfg.gasoline_gco2_per_mile


def _report_rows(points: list[ParetoPoint], instance, base_cost: float, gasoline: float) -> list[dict]:
    if instance.ev_miles > 0:
        return percent_changes(points, base_cost, gasoline, instance.ev_miles)
    rows = percent_changes(points, base_cost, gasoline, 1.0)
    for r in rows:
        r["emission_change_pct"] = math.nan
    return rows


def _write_outputs(cfg: RunConfig, points: list[ParetoPoint], rows: list[dict], timings: dict,
                   instance, argv: list[str]) -> None:
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_frontier(cfg.out / "frontier.csv", rows)
    files = ["frontier.csv"]
    for k, p in enumerate(points):
        name = f"hourly_{p.tag}_{k:02d}.csv"
        write_hourly(cfg.out / name, p)
        files.append(name)
    inputs = {name: {"path": str(getattr(cfg, name)), "sha256": _sha256(getattr(cfg, name))}
              for name in ("case", "demand_summer", "demand_winter", "emissions", "trips")
              if getattr(cfg, name) is not None and Path(getattr(cfg, name)).is_file()}
    import clarabel
    import scipy
    manifest = {
        "command": list(argv),
        "config": cfg.echo(),
        "inputs": inputs,
        "versions": {"evmopf": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__,
                     "clarabel": clarabel.__version__},
        "instance": {"buses": instance.network.n_bus, "periods": instance.horizon,
                     "ev_groups": instance.n_ev},
        "timings_s": timings,
        "outputs": files,
    }
    (cfg.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")


def cmd_pareto(cfg: RunConfig, *, benchmark_only: bool = False, argv: list[str] = ()) -> int:
    gasoline = _gasoline(cfg)
    t0 = time.perf_counter()
    instance, _ = build_run(cfg)
    opts = _solver_opts(cfg)
    timings = {"assemble": time.perf_counter() - t0}
    t = time.perf_counter()
    instance = prepare(instance, **opts)
    base_cost = no_ev_cost(instance, threads=cfg.threads)
    timings["baseline"] = time.perf_counter() - t
    points: list[ParetoPoint] = []
    if not benchmark_only:
        t = time.perf_counter()
        points = sweep(instance, cfg.points, threads=cfg.threads, **opts)
        timings["sweep"] = time.perf_counter() - t
    if cfg.benchmark or benchmark_only:
        t = time.perf_counter()
        points.append(benchmark_point(instance, threads=cfg.threads, **opts))
        timings["benchmark"] = time.perf_counter() - t
    rows = _report_rows(points, instance, base_cost, gasoline)
    _write_outputs(cfg, points, rows, timings, instance, argv)
    for p in points:
        if not p.valid:
            log.warning("invalid point (%s): %s", p.tag, "; ".join(p.notes))
    valid = sum(p.valid for p in points)
    print(f"points={len(points)} valid={valid} out={cfg.out}")
    return EXIT_OK if valid else EXIT_SOLVER


# ---------------------------------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with [case] [series] [ev] [sweep] [solver] [output]")
    p.add_argument("--case")
    p.add_argument("--season", choices=["summer", "winter"])
    p.add_argument("--demand-summer", dest="demand_summer")
    p.add_argument("--demand-winter", dest="demand_winter")
    p.add_argument("--emissions")
    p.add_argument("--trips")
    p.add_argument("--ev", dest="ev", action="store_const", const="true")
    p.add_argument("--no-ev", dest="ev", action="store_const", const="false")
    p.add_argument("--v2g", dest="v2g", action="store_const", const="true")
    p.add_argument("--no-v2g", dest="v2g", action="store_const", const="false")
    p.add_argument("--kwh-to-pu", dest="kwh_to_pu", type=float)
    p.add_argument("--points", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--gasoline", type=float, help="gasoline car emission, g CO2 per mile")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="evmopf", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("inspect", help="summarize and validate a MATPOWER case")
    p.add_argument("case")
    p = sub.add_parser("profiles", help="write demand shapes and the EV fleet model")
    _add_run_flags(p)
    p = sub.add_parser("solve", help="one relaxed solve, optionally with local upper bound")
    _add_run_flags(p)
    p.add_argument("--objective", choices=["cost", "emission"], default="cost")
    p.add_argument("--cap", type=float, help="emission cap in kg")
    p.add_argument("--local", action="store_true", help="also run the per-period AC solves")
    p.add_argument("--export", help="write the conic program in text form")
    p = sub.add_parser("benchmark", help="evaluate midnight charging")
    _add_run_flags(p)
    p = sub.add_parser("pareto", help="trace the cost/emission frontier")
    _add_run_flags(p)
    p.add_argument("--benchmark", dest="benchmark", action="store_const", const="true",
                   help="append the midnight-charging benchmark row")
    return ap


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "inspect":
            return cmd_inspect(args)
        flags = {k: getattr(args, k, None) for k in _FLAG_KEYS}
        cfg = load_config(args.config, flags)
        if args.command == "profiles":
            return cmd_profiles(cfg)
        if args.command == "solve":
            return cmd_solve(cfg, args)
        if args.command == "benchmark":
            return cmd_pareto(cfg, benchmark_only=True, argv=argv)
        return cmd_pareto(cfg, argv=argv)
    except (SolverFailure, BaseCaseInfeasible, LocalSolveError, BenchmarkInfeasible) as exc:
        print(f"evmopf: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InputError, CaseFormatError, FileNotFoundError, ValueError) as exc:
        print(f"evmopf: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
