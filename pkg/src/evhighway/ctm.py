"""Cell transmission model of a freeway stretch with one charging station.

The station sits between cells 1 and 2. Vehicles diverted from cell 1 into
the station form the road-to-station flow (r2s); vehicles leaving the station
and merging into cell 2 form the station-to-road flow (s2r).

Density update for cell l over one step of length T [h]::

    rho_l(k+1) = rho_l(k) + T / L_l * (Phi_l^+(k) - Phi_l^-(k))

    Phi_1^- = phi_2 + r2s          Phi_2^+ = phi_2 + s2r
    D_l = min(vf_l * rho_l, qmax_l)
    S_l = min(w_l * (rhomax_l - rho_l), qmax_l)

Boundary handling: the exogenous arrival rate feeds a virtual upstream queue
whose discharge phi_1 is limited by the supply of cell 1, and the last cell
discharges its full demand.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

logger = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-6  # veh/km; below this a cell is treated as empty
SPEED_FLOOR_KMH = 1.0  # lower bound used when dividing by a speed
DENSITY_TOL = 1e-9


class CTMViolationWarning(UserWarning):
    """A density left [0, rho_max] or the station outflow exceeded supply."""


@dataclass(frozen=True)
class CellParams:
    length_km: float
    free_flow_speed_kmh: float
    congestion_wave_speed_kmh: float
    max_capacity_vehh: float
    max_jam_density_vehkm: float

    def __post_init__(self) -> None:
        problems = self.validation_errors()
        if problems:
            raise ValueError("; ".join(problems))

    def validation_errors(self, prefix: str = "") -> list[str]:
        errors = []
        for name in (
            "length_km",
            "free_flow_speed_kmh",
            "congestion_wave_speed_kmh",
            "max_capacity_vehh",
            "max_jam_density_vehkm",
        ):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                errors.append(f"{prefix}{name} must be a positive number, got {value!r}")
        if not errors and self.free_flow_speed_kmh * self.max_jam_density_vehkm < self.max_capacity_vehh:
            errors.append(
                f"{prefix}free_flow_speed_kmh * max_jam_density_vehkm must be >= max_capacity_vehh"
            )
        return errors

    @property
    def critical_density_vehkm(self) -> float:
        return self.max_capacity_vehh / self.free_flow_speed_kmh


@dataclass(frozen=True)
class CellState:
    density_vehkm: float
    inflow_vehh: float = 0.0
    outflow_vehh: float = 0.0
    interface_flow_vehh: float = 0.0


@dataclass(frozen=True)
class HighwayState:
    """Densities at interval ``time_index`` plus the flows resolved for it.

    Flow fields are meaningful only when ``resolved`` is true; :func:`step`
    returns the next state unresolved. The bookkeeping fields (queue, station
    stock, cumulative counts) make vehicle conservation checkable.
    """

    time_index: int
    cells: tuple[CellState, ...]
    step_length_h: float
    r2s_vehh: float = 0.0
    s2r_vehh: float = 0.0
    input_flow_vehh: float = 0.0
    arrival_vehh: float = 0.0
    exit_flow_vehh: float = 0.0
    upstream_queue_veh: float = 0.0
    station_veh: float = 0.0
    cumulative_arrivals_veh: float = 0.0
    cumulative_exits_veh: float = 0.0
    resolved: bool = False
    supply_deficit: bool = False

    @property
    def densities(self) -> list[float]:
        return [c.density_vehkm for c in self.cells]


def max_stable_step_h(params: Sequence[CellParams]) -> float:
    """Largest step length keeping every cell update well posed."""
    return min(p.length_km / max(p.free_flow_speed_kmh, p.congestion_wave_speed_kmh) for p in params)


def initial_state(
    params: Sequence[CellParams],
    step_length_h: float,
    densities: Sequence[float] | None = None,
) -> HighwayState:
    if len(params) < 2:
        raise ValueError("the highway needs at least two cells (station sits between cells 1 and 2)")
    if densities is None:
        densities = [0.0] * len(params)
    if len(densities) != len(params):
        raise ValueError("one initial density per cell is required")
    cells = tuple(CellState(float(rho)) for rho in densities)
    return HighwayState(time_index=0, cells=cells, step_length_h=step_length_h)


def demand(cell: CellParams, state: CellState) -> float:
    return min(cell.free_flow_speed_kmh * state.density_vehkm, cell.max_capacity_vehh)


def supply(cell: CellParams, state: CellState) -> float:
    return min(
        cell.congestion_wave_speed_kmh * (cell.max_jam_density_vehkm - state.density_vehkm),
        cell.max_capacity_vehh,
    )


def interface_flow_2(demand_1: float, supply_2: float, r2s: float, s2r: float) -> float:
    """Flow from cell 1 to cell 2 given the station exchange.

    Free flow when ``D1 - r2s <= S2 - s2r``, otherwise the station outflow and
    the mainline share the supply of cell 2. A negative result (station
    outflow alone beyond the supply) is clamped to zero.
    """
    if demand_1 - r2s <= supply_2 - s2r:
        flow = demand_1 - r2s
    else:
        flow = supply_2 - s2r
    return max(flow, 0.0)


def resolve(
    highway: HighwayState,
    params: Sequence[CellParams],
    r2s: float = 0.0,
    s2r: float = 0.0,
    input_flow: float = 0.0,
) -> HighwayState:
    """Compute every flow of the current interval without advancing time.

    ``input_flow`` is the exogenous arrival rate; what actually enters cell 1
    is limited by its supply, the rest waits in the upstream queue. ``r2s`` is
    capped at the demand of cell 1.
    """
    n = len(params)
    if n != len(highway.cells) or n < 2:
        raise ValueError("params and cells must match and N >= 2")
    if min(r2s, s2r, input_flow) < 0:
        raise ValueError("r2s, s2r and input_flow must be nonnegative")
    T = highway.step_length_h
    cells = highway.cells
    D = [demand(p, c) for p, c in zip(params, cells)]
    S = [supply(p, c) for p, c in zip(params, cells)]

    r2s = min(r2s, D[0])
    # phi[l] is the flow entering cell l (0-based), phi[n] leaves the stretch
    phi = [0.0] * (n + 1)
    phi[0] = min(input_flow + highway.upstream_queue_veh / T, S[0])
    phi[1] = interface_flow_2(D[0], S[1], r2s, s2r)
    for ell in range(2, n):
        phi[ell] = min(D[ell - 1], S[ell])
    phi[n] = D[n - 1]

    deficit = S[1] - s2r < 0
    if deficit:
        logger.warning("k=%d: station outflow %.3f exceeds supply of cell 2 %.3f", highway.time_index, s2r, S[1])

    new_cells = []
    for ell in range(n):
        inflow = phi[ell] + (s2r if ell == 1 else 0.0)
        outflow = phi[ell + 1] + (r2s if ell == 0 else 0.0)
        new_cells.append(replace(cells[ell], inflow_vehh=inflow, outflow_vehh=outflow, interface_flow_vehh=phi[ell]))

    return replace(
        highway,
        cells=tuple(new_cells),
        r2s_vehh=r2s,
        s2r_vehh=s2r,
        arrival_vehh=input_flow,
        input_flow_vehh=phi[0],
        exit_flow_vehh=phi[n],
        resolved=True,
        supply_deficit=deficit,
    )


def advance(resolved: HighwayState, params: Sequence[CellParams]) -> HighwayState:
    """Apply the density update of a resolved state; returns the next, unresolved, state."""
    if not resolved.resolved:
        raise ValueError("advance() needs a resolved state")
    T = resolved.step_length_h
    new_cells = []
    for ell, (p, c) in enumerate(zip(params, resolved.cells)):
        rho = c.density_vehkm + T / p.length_km * (c.inflow_vehh - c.outflow_vehh)
        if rho < -DENSITY_TOL or rho > p.max_jam_density_vehkm + DENSITY_TOL:
            warnings.warn(
                f"k={resolved.time_index}: density of cell {ell + 1} left [0, rho_max]: {rho:.6g}",
                CTMViolationWarning,
                stacklevel=2,
            )
        new_cells.append(CellState(rho))
    return HighwayState(
        time_index=resolved.time_index + 1,
        cells=tuple(new_cells),
        step_length_h=T,
        upstream_queue_veh=resolved.upstream_queue_veh + T * (resolved.arrival_vehh - resolved.input_flow_vehh),
        station_veh=resolved.station_veh + T * (resolved.r2s_vehh - resolved.s2r_vehh),
        cumulative_arrivals_veh=resolved.cumulative_arrivals_veh + T * resolved.arrival_vehh,
        cumulative_exits_veh=resolved.cumulative_exits_veh + T * resolved.exit_flow_vehh,
    )


def step(
    highway: HighwayState,
    params: Sequence[CellParams],
    r2s: float = 0.0,
    s2r: float = 0.0,
    input_flow: float = 0.0,
) -> HighwayState:
    """Advance one interval: ``advance(resolve(...))``."""
    return advance(resolve(highway, params, r2s, s2r, input_flow), params)


def speeds(highway: HighwayState, params: Sequence[CellParams]) -> list[float]:
    """Space-mean speed ``Phi^- / rho`` per cell, free-flow speed for empty cells."""
    if not highway.resolved:
        raise ValueError("speeds() needs a resolved state")
    out = []
    for p, c in zip(params, highway.cells):
        if c.density_vehkm <= DENSITY_FLOOR:
            out.append(p.free_flow_speed_kmh)
        else:
            out.append(c.outflow_vehh / c.density_vehkm)
    return out


def rollout_free(
    highway: HighwayState,
    params: Sequence[CellParams],
    horizon: int,
    input_flows: Sequence[float],
    s2r_flows: Sequence[float] | None = None,
) -> list[HighwayState]:
    """Predicted resolved states for ``horizon`` steps with nobody diverted.

    r2s is zero over the whole rollout; ``s2r_flows`` carries exits that are
    already committed. The live state is left untouched.
    """
    if len(input_flows) < horizon:
        raise ValueError("input_flows must cover the horizon")
    if s2r_flows is None:
        s2r_flows = [0.0] * horizon
    states = []
    state = highway
    for j in range(horizon):
        resolved = resolve(state, params, 0.0, s2r_flows[j], input_flows[j])
        states.append(resolved)
        state = advance(resolved, params)
    return states


def vehicles_on_road(highway: HighwayState, params: Sequence[CellParams]) -> float:
    return sum(c.density_vehkm * p.length_km for p, c in zip(params, highway.cells))


def vehicle_balance(highway: HighwayState, params: Sequence[CellParams]) -> float:
    """Road + station + upstream queue + exits - arrivals; constant in time."""
    return (
        vehicles_on_road(highway, params)
        + highway.station_veh
        + highway.upstream_queue_veh
        + highway.cumulative_exits_veh
        - highway.cumulative_arrivals_veh
    )
