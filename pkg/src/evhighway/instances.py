"""Random small game instances for tests, benchmarks and demos."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .best_response import feasible_candidates
from .station import StationConfig
from .strategy import Aggregates, GameContext, Horizon, Strategy, VehicleParams, no_stop_strategy


def random_station(rng: np.random.Generator, min_charge_intervals: int | None = None) -> StationConfig:
    return StationConfig(
        plug_count=int(rng.integers(1, 4)),
        max_energy_per_interval=float(rng.uniform(2.0, 6.0)),
        min_charge_intervals=int(rng.integers(1, 3)) if min_charge_intervals is None else min_charge_intervals,
        u_min=float(rng.uniform(0.1, 0.4)),
        u_max_per_vehicle=float(rng.uniform(0.8, 1.5)),
    )


def random_context(
    rng: np.random.Generator,
    length: int | None = None,
    half_width: int | None = None,
    station: StationConfig | None = None,
    committed: bool = True,
    fifo: bool = True,
    discount: float = 0.15,
) -> GameContext:
    """A frozen game context on a short horizon.

    Prices hover around 0.3 with dips of up to ``discount``; committed loads
    leave at least one plug and some energy free on most intervals.
    """
    if half_width is None:
        half_width = int(rng.integers(0, 2))
    if length is None:
        length = int(rng.integers(2 * half_width + 2, 9))
    length = max(length, 2 * half_width + 2)
    H = length
    station = station or random_station(rng)
    theta_old = rng.integers(0, 3, H).astype(float) if committed else np.zeros(H)
    delta_old = rng.integers(0, station.plug_count, H).astype(float) if committed else np.zeros(H)
    u_old = delta_old * rng.uniform(0, 0.5, H) if committed else np.zeros(H)
    p_hat = 0.3 - discount * rng.uniform(0, 1, H)
    return GameContext(
        horizon=Horizon(0, H, half_width),
        n=0,
        xi=rng.uniform(0, 0.05, H),
        theta_old=theta_old,
        u_old=u_old,
        delta_old=delta_old,
        p_hat=p_hat,
        gamma=float(rng.uniform(0.001, 0.02)),
        upsilon=float(rng.uniform(0.002, 0.03)),
        station=station,
        epsilon=1e-4,
        fifo_start=int(rng.integers(0, 2)) if fifo else 0,
    )


def random_vehicle(rng: np.random.Generator, alpha: float | None = None, must_charge: bool | None = None) -> VehicleParams:
    x_ref = float(rng.uniform(0.2, 0.5))
    if must_charge is None:
        must_charge = bool(rng.random() < 0.3)
    x0 = float(rng.uniform(x_ref - 0.05, x_ref)) if must_charge else float(rng.uniform(x_ref, 0.95))
    return VehicleParams(
        b=float(rng.uniform(0.02, 0.06)),
        x0=max(x0, 0.0),
        x_ref=x_ref,
        alpha=float(rng.uniform(0.2, 0.9)) if alpha is None else alpha,
        p_bar=float(rng.uniform(0.2, 0.35)),
    )


def random_others(rng: np.random.Generator, context: GameContext, count: int = 3) -> Aggregates:
    """Aggregates of ``count`` imaginary cohort members that keep the caps satisfied."""
    H = context.horizon.length
    st = context.station
    theta = rng.integers(0, count + 1, H).astype(float)
    plug_room = st.plug_count - context.delta_old
    delta = np.minimum(rng.integers(0, count + 1, H), np.maximum(plug_room - 1, 0)).astype(float)
    room = st.max_energy_per_interval - context.u_old
    u = np.minimum(delta * rng.uniform(0, 0.6, H), np.maximum(room - st.u_max_per_vehicle, 0))
    return Aggregates(theta, u, delta)


def random_feasible_joint(
    rng: np.random.Generator,
    cohort: Sequence[VehicleParams],
    context: GameContext,
) -> list[Strategy] | None:
    """Pick, agent after agent, a uniformly random feasible strategy given the earlier picks."""
    H = context.horizon.length
    strategies = [no_stop_strategy(p, context.horizon) for p in cohort]
    for i, p in enumerate(cohort):
        others = Aggregates.of(strategies, H).without(strategies[i])
        candidates, _ = feasible_candidates(p, context, others)
        if not candidates:
            return None
        strategies[i] = candidates[int(rng.integers(len(candidates)))][1]
    return strategies
