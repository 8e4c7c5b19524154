"""Scenario files: JSON description of the road, the station, prices and the EV population.

Time series (inflow, base energy demand, prediction coefficients) accept a
constant, or a list of ``[start_index, value]`` breakpoints giving a
piecewise-constant profile. Inflow is indexed by CTM step, base demand and
coefficients by game interval.

Every validation problem is reported with the path of the offending field.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .ctm import CellParams, max_stable_step_h
from .station import StationConfig


class ScenarioError(ValueError):
    """The scenario parsed but violates a constraint."""

    def __init__(self, problems: list[str]):
        super().__init__("invalid scenario:\n  " + "\n  ".join(problems))
        self.problems = problems


class ScenarioParseError(ValueError):
    """The scenario file is missing or is not valid JSON."""


@dataclass(frozen=True)
class Series:
    """Piecewise-constant series given by sorted ``(start, value)`` breakpoints."""

    breakpoints: tuple[tuple[int, float], ...]

    def __call__(self, index: int) -> float:
        value = self.breakpoints[0][1]
        for start, v in self.breakpoints:
            if start > index:
                break
            value = v
        return value

    def values(self, start: int, count: int) -> list[float]:
        return [self(start + i) for i in range(count)]

    def to_json(self):
        if len(self.breakpoints) == 1 and self.breakpoints[0][0] == 0:
            return self.breakpoints[0][1]
        return [[s, v] for s, v in self.breakpoints]


@dataclass(frozen=True)
class Range:
    lo: float
    hi: float

    def to_json(self):
        return [self.lo, self.hi]


@dataclass(frozen=True)
class GameConfig:
    subsample: int
    horizon: int
    half_width: int
    gamma: float
    upsilon: float
    epsilon: float = 1e-4
    schedule: str = "round-robin"


@dataclass(frozen=True)
class PricingConfig:
    c1: float
    c2: float
    c3: float
    beta0: Series
    beta1: Series
    base_demand: Series
    price_floor: float | None = None
    refit: bool = False


@dataclass(frozen=True)
class VehicleRanges:
    b: Range
    x0: Range
    x_ref: Range
    alpha: Range
    p_bar: Range


@dataclass(frozen=True)
class Scenario:
    name: str
    step_s: float
    steps: int
    seed: int
    cells: tuple[CellParams, ...]
    initial_densities: tuple[float, ...]
    inflow_vehh: Series
    penetration: float
    game: GameConfig
    station: StationConfig
    pricing: PricingConfig
    vehicles: VehicleRanges
    source: str = ""

    @property
    def step_h(self) -> float:
        return self.step_s / 3600.0

    @property
    def game_step_h(self) -> float:
        return self.game.subsample * self.step_h

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "step_s": self.step_s,
            "steps": self.steps,
            "seed": self.seed,
            "cells": [c.__dict__ for c in self.cells],
            "initial_densities": list(self.initial_densities),
            "inflow_vehh": self.inflow_vehh.to_json(),
            "penetration": self.penetration,
            "game": dict(self.game.__dict__),
            "station": dict(self.station.__dict__),
            "pricing": {
                "c1": self.pricing.c1,
                "c2": self.pricing.c2,
                "c3": self.pricing.c3,
                "beta0": self.pricing.beta0.to_json(),
                "beta1": self.pricing.beta1.to_json(),
                "base_demand": self.pricing.base_demand.to_json(),
                "price_floor": self.pricing.price_floor,
                "refit": self.pricing.refit,
            },
            "vehicles": {k: v.to_json() for k, v in self.vehicles.__dict__.items()},
        }

    def replace(self, **changes) -> "Scenario":
        data = self.to_json()
        for dotted, value in changes.items():
            node = data
            keys = dotted.split("__")
            for k in keys[:-1]:
                node = node[k]
            node[keys[-1]] = value
        return scenario_from_dict(data, self.source)


class _Collector:
    def __init__(self):
        self.problems: list[str] = []

    def fail(self, path: str, msg: str) -> None:
        self.problems.append(f"{path}: {msg}")

    def get(self, obj: dict, key: str, path: str, default: Any = ...):
        if not isinstance(obj, dict):
            self.fail(path, "expected an object")
            return None
        if key not in obj:
            if default is ...:
                self.fail(f"{path}.{key}" if path else key, "missing")
                return None
            return default
        return obj[key]

    def number(self, obj, key, path, default=..., positive=False, nonneg=False, integer=False):
        value = self.get(obj, key, path, default)
        where = f"{path}.{key}" if path else key
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            self.fail(where, f"expected a finite number, got {value!r}")
            return None
        if integer and int(value) != value:
            self.fail(where, f"expected an integer, got {value!r}")
            return None
        if positive and not value > 0:
            self.fail(where, f"must be positive, got {value!r}")
        if nonneg and value < 0:
            self.fail(where, f"must be nonnegative, got {value!r}")
        return int(value) if integer else float(value)

    def series(self, obj, key, path, default=...) -> Series | None:
        value = self.get(obj, key, path, default)
        where = f"{path}.{key}" if path else key
        if value is None:
            return None
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return Series(((0, float(value)),))
        if isinstance(value, list) and value:
            points = []
            for j, item in enumerate(value):
                if (
                    isinstance(item, list)
                    and len(item) == 2
                    and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in item)
                    and int(item[0]) == item[0]
                ):
                    points.append((int(item[0]), float(item[1])))
                else:
                    self.fail(f"{where}[{j}]", "expected [start_index, value]")
                    return None
            starts = [p[0] for p in points]
            if starts != sorted(starts) or len(set(starts)) != len(starts) or starts[0] != 0:
                self.fail(where, "breakpoints must start at 0 and strictly increase")
                return None
            return Series(tuple(points))
        self.fail(where, "expected a number or a list of [start_index, value] breakpoints")
        return None

    def range(self, obj, key, path) -> Range | None:
        value = self.get(obj, key, path)
        where = f"{path}.{key}"
        if value is None:
            return None
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return Range(float(value), float(value))
        if (
            isinstance(value, list)
            and len(value) == 2
            and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value)
            and value[0] <= value[1]
        ):
            return Range(float(value[0]), float(value[1]))
        self.fail(where, "expected a number or [low, high] with low <= high")
        return None


def scenario_from_dict(data: Any, source: str = "") -> Scenario:
    c = _Collector()
    if not isinstance(data, dict):
        raise ScenarioError(["<root>: expected a JSON object"])

    name = c.get(data, "name", "", "scenario")
    step_s = c.number(data, "step_s", "", positive=True)
    steps = c.number(data, "steps", "", integer=True, nonneg=True)
    seed = c.number(data, "seed", "", default=0, integer=True, nonneg=True)
    penetration = c.number(data, "penetration", "", nonneg=True)
    if penetration is not None and penetration > 1:
        c.fail("penetration", "must lie in [0, 1]")

    cells: list[CellParams] = []
    raw_cells = c.get(data, "cells", "")
    if raw_cells is not None:
        if not isinstance(raw_cells, list) or len(raw_cells) < 2:
            c.fail("cells", "expected a list of at least two cells")
        else:
            for i, rc in enumerate(raw_cells):
                path = f"cells[{i}]"
                vals = {
                    k: c.number(rc, k, path)
                    for k in (
                        "length_km",
                        "free_flow_speed_kmh",
                        "congestion_wave_speed_kmh",
                        "max_capacity_vehh",
                        "max_jam_density_vehkm",
                    )
                }
                if None in vals.values():
                    continue
                try:
                    cells.append(CellParams(**vals))
                except ValueError as exc:
                    for msg in str(exc).split("; "):
                        c.fail(path, msg)

    densities = c.get(data, "initial_densities", "", default=None)
    if densities is None:
        densities = [0.0] * len(cells)
    elif not (isinstance(densities, list) and len(densities) == len(cells)):
        c.fail("initial_densities", "expected one density per cell")
        densities = [0.0] * len(cells)
    else:
        for i, (rho, cell) in enumerate(zip(densities, cells)):
            if not isinstance(rho, (int, float)) or not 0 <= rho <= cell.max_jam_density_vehkm:
                c.fail(f"initial_densities[{i}]", f"must lie in [0, {cell.max_jam_density_vehkm}]")
    inflow = c.series(data, "inflow_vehh", "")
    if inflow is not None and any(v < 0 for _, v in inflow.breakpoints):
        c.fail("inflow_vehh", "rates must be nonnegative")

    if step_s is not None and cells and len(cells) == len(raw_cells):
        bound_s = max_stable_step_h(cells) * 3600.0
        if step_s > bound_s * (1 + 1e-12):
            c.fail("step_s", f"{step_s} s exceeds the stability bound min L/max(vf, w) = {bound_s:.6g} s")

    g = c.get(data, "game", "")
    game = None
    if g is not None:
        sub = c.number(g, "subsample", "game", default=1, integer=True, positive=True)
        hor = c.number(g, "horizon", "game", integer=True, positive=True)
        W = c.number(g, "half_width", "game", default=0, integer=True, nonneg=True)
        gamma = c.number(g, "gamma", "game", positive=True)
        upsilon = c.number(g, "upsilon", "game", positive=True)
        eps = c.number(g, "epsilon", "game", default=1e-4, positive=True)
        schedule = c.get(g, "schedule", "game", default="round-robin")
        if schedule not in ("round-robin", "request-queue", "random"):
            c.fail("game.schedule", "must be round-robin, request-queue or random")
        if hor is not None and W is not None and hor < 2 * W + 2:
            c.fail("game.horizon", f"must be at least 2*half_width+2 = {2 * W + 2}")
        if None not in (sub, hor, W, gamma, upsilon, eps):
            game = GameConfig(sub, hor, W, gamma, upsilon, eps, schedule)

    s = c.get(data, "station", "")
    station = None
    if s is not None:
        plugs = c.number(s, "plug_count", "station", integer=True, positive=True)
        umax = c.number(s, "max_energy_per_interval", "station", positive=True)
        hbar = c.number(s, "min_charge_intervals", "station", integer=True, positive=True)
        umin = c.number(s, "u_min", "station", positive=True)
        uveh = c.number(s, "u_max_per_vehicle", "station", positive=True)
        if None not in (plugs, umax, hbar, umin, uveh):
            if umin > uveh:
                c.fail("station.u_min", "must not exceed station.u_max_per_vehicle")
            else:
                station = StationConfig(plugs, umax, hbar, umin, uveh)

    p = c.get(data, "pricing", "")
    pricing = None
    if p is not None:
        c1 = c.number(p, "c1", "pricing", positive=True)
        c2 = c.number(p, "c2", "pricing", positive=True)
        c3 = c.number(p, "c3", "pricing", positive=True)
        b0 = c.series(p, "beta0", "pricing", default=0.0)
        b1 = c.series(p, "beta1", "pricing", default=0.0)
        dem = c.series(p, "base_demand", "pricing")
        floor = c.get(p, "price_floor", "pricing", default=None)
        if floor is not None and (isinstance(floor, bool) or not isinstance(floor, (int, float))):
            c.fail("pricing.price_floor", "expected a number or null")
            floor = None
        refit = c.get(p, "refit", "pricing", default=False)
        if not isinstance(refit, bool):
            c.fail("pricing.refit", "expected true or false")
        if None not in (c1, c2, c3, b0, b1, dem):
            pricing = PricingConfig(c1, c2, c3, b0, b1, dem, floor, bool(refit))

    v = c.get(data, "vehicles", "")
    vehicles = None
    if v is not None:
        ranges = {k: c.range(v, k, "vehicles") for k in ("b", "x0", "x_ref", "alpha", "p_bar")}
        checks = {
            "b": lambda r: r.lo > 0,
            "x0": lambda r: 0 <= r.lo and r.hi <= 1,
            "x_ref": lambda r: 0 < r.lo and r.hi <= 1,
            "alpha": lambda r: 0 < r.lo and r.hi < 1,
            "p_bar": lambda r: r.lo > 0,
        }
        for k, r in ranges.items():
            if r is not None and not checks[k](r):
                c.fail(f"vehicles.{k}", "range outside the admissible values")
        if None not in ranges.values():
            vehicles = VehicleRanges(**ranges)

    if c.problems:
        raise ScenarioError(c.problems)
    return Scenario(
        name=str(name),
        step_s=step_s,
        steps=steps,
        seed=seed,
        cells=tuple(cells),
        initial_densities=tuple(float(x) for x in densities),
        inflow_vehh=inflow,
        penetration=penetration,
        game=game,
        station=station,
        pricing=pricing,
        vehicles=vehicles,
        source=source,
    )


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return scenario_from_dict(data, str(path))
