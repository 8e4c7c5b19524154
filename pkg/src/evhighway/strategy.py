"""Decision vectors of the EVs, their costs, feasibility and the game potential.

Times inside a game are relative: index ``p`` stands for game interval
``k + p`` with ``p = 0 .. H-1``. A strategy holds the energy bought per
interval ``u``, the state of charge ``x`` (``H + 1`` entries, the last one
being the charge after the final interval), the charging indicator ``delta``
and the cell-2 entry pulse ``theta``.

Entry pulses come in two shapes. A vehicle that drives on has ``theta = 1``
on ``0 .. W``. A vehicle that stops and merges back at ``t_i`` has
``theta = 1`` on ``t_i - W .. t_i + W``, which never touches ``0 .. W``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .station import StationConfig

FEAS_TOL = 1e-9


@dataclass(frozen=True)
class Horizon:
    k: int
    length: int
    half_width: int
    subsample: int = 1
    step_h: float = 1.0

    def __post_init__(self) -> None:
        if self.half_width < 0:
            raise ValueError("half_width must be nonnegative")
        if self.length < 2 * self.half_width + 2:
            raise ValueError(
                f"horizon length {self.length} must be >= 2W+2 = {2 * self.half_width + 2}"
            )
        if self.subsample < 1:
            raise ValueError("subsample must be a positive integer")

    @property
    def game_step_h(self) -> float:
        return self.subsample * self.step_h

    @property
    def offsets(self) -> np.ndarray:
        return np.arange(self.length)


def chi(horizon: Horizon) -> np.ndarray:
    """Normalization ``1 / pulse width`` for every interval of the horizon.

    Intervals ``0 .. W`` can only belong to a drive-on pulse (width ``W+1``),
    later ones only to a stop pulse (width ``2W+1``).
    """
    W = horizon.half_width
    out = np.full(horizon.length, 1.0 / (2 * W + 1))
    out[: W + 1] = 1.0 / (W + 1)
    return out


def pulse_width_target(horizon: Horizon) -> np.ndarray:
    """Required pulse width when its last active interval is ``t``.

    A pulse ending at ``t`` that started at the horizon start has width
    ``t + 1``; otherwise it has the full width ``2W + 1``. Widths below
    ``W + 1`` are excluded.
    """
    W = horizon.half_width
    t = np.arange(horizon.length)
    return np.maximum(W + 1, np.minimum(t + 1, 2 * W + 1))


@dataclass(frozen=True)
class VehicleParams:
    b: float
    x0: float
    x_ref: float
    alpha: float
    p_bar: float

    def __post_init__(self) -> None:
        if not self.b > 0:
            raise ValueError("b must be positive")
        if not 0 <= self.x0 <= 1:
            raise ValueError("x0 must lie in [0, 1]")
        if not 0 < self.x_ref <= 1:
            raise ValueError("x_ref must lie in (0, 1]")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.p_bar > 0:
            raise ValueError("p_bar must be positive")


@dataclass(frozen=True, eq=False)
class Strategy:
    u: np.ndarray
    x: np.ndarray
    delta: np.ndarray
    theta: np.ndarray

    @property
    def horizon_length(self) -> int:
        return len(self.theta)

    @property
    def stops(self) -> bool:
        return not bool(self.theta[0])

    def entry_time(self, half_width: int) -> int:
        """Interval at which the vehicle enters cell 2 (relative)."""
        if self.theta[0]:
            return 0
        ones = np.flatnonzero(self.theta)
        if ones.size == 0:
            raise ValueError("strategy has no entry pulse")
        return int(ones[0]) + half_width

    def same_as(self, other: "Strategy") -> bool:
        return (
            np.array_equal(self.delta, other.delta)
            and np.array_equal(self.theta, other.theta)
            and np.array_equal(self.u, other.u)
        )


def soc_trajectory(x0: float, b: float, u: np.ndarray) -> np.ndarray:
    return np.concatenate(([x0], x0 + b * np.cumsum(u)))


def make_strategy(params: VehicleParams, u, delta, theta) -> Strategy:
    u = np.asarray(u, dtype=float)
    return Strategy(
        u=u,
        x=soc_trajectory(params.x0, params.b, u),
        delta=np.asarray(delta, dtype=np.int8),
        theta=np.asarray(theta, dtype=np.int8),
    )


def no_stop_strategy(params: VehicleParams, horizon: Horizon) -> Strategy:
    H, W = horizon.length, horizon.half_width
    theta = np.zeros(H, dtype=np.int8)
    theta[: W + 1] = 1
    return make_strategy(params, np.zeros(H), np.zeros(H, dtype=np.int8), theta)


@dataclass
class Aggregates:
    """Sums over a group of cohort members (typically everybody but one agent)."""

    theta: np.ndarray
    u: np.ndarray
    delta: np.ndarray

    @classmethod
    def zeros(cls, length: int) -> "Aggregates":
        return cls(np.zeros(length), np.zeros(length), np.zeros(length))

    @classmethod
    def of(cls, strategies: Sequence[Strategy], length: int) -> "Aggregates":
        agg = cls.zeros(length)
        for s in strategies:
            agg.theta += s.theta
            agg.u += s.u
            agg.delta += s.delta
        return agg

    def without(self, s: Strategy) -> "Aggregates":
        return Aggregates(self.theta - s.theta, self.u - s.u, self.delta - s.delta)

    def plus(self, s: Strategy) -> "Aggregates":
        return Aggregates(self.theta + s.theta, self.u + s.u, self.delta + s.delta)


@dataclass
class GameContext:
    """Everything the operator freezes at interval ``k`` before the cohort plays."""

    horizon: Horizon
    n: int
    xi: np.ndarray
    theta_old: np.ndarray
    u_old: np.ndarray
    delta_old: np.ndarray
    p_hat: np.ndarray
    gamma: float
    upsilon: float
    station: StationConfig
    epsilon: float = 1e-4
    fifo_start: int = 0
    chi: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        H = self.horizon.length
        for name in ("xi", "theta_old", "u_old", "delta_old", "p_hat"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (H,):
                raise ValueError(f"{name} must have one entry per horizon interval ({H})")
            setattr(self, name, arr)
        if not (self.gamma > 0 and self.upsilon > 0 and self.epsilon > 0):
            raise ValueError("gamma, upsilon and epsilon must be positive")
        self.chi = chi(self.horizon)

    def plug_room(self, others: Aggregates) -> np.ndarray:
        return self.station.plug_count - self.delta_old - others.delta

    def energy_room(self, others: Aggregates) -> np.ndarray:
        return self.station.max_energy_per_interval - self.u_old - others.u


# --- cohort size and travel-time estimates ---------------------------------

def cohort_size(demand1: float, supply2: float, s2r: float, p_ev: float, T: float) -> int:
    """Number of EVs leaving cell 1 during a game interval of length ``T`` [h].

    Computed as if nobody stopped, which is the most congested case.
    """
    if not 0 <= p_ev <= 1:
        raise ValueError("p_ev must lie in [0, 1]")
    if demand1 + s2r <= supply2:
        x = p_ev * demand1 * T
    elif supply2 - s2r < 0:
        return 0
    else:
        x = p_ev * (supply2 - s2r) * T
    # products such as 0.3 * 1000 * 0.1 land a hair below the integer
    return int(math.floor(x + 1e-9))


def travel_delay_xi(
    predicted_speeds: Sequence[Sequence[float]],
    lengths_km: Sequence[float],
    free_flow_kmh: Sequence[float],
    interval_h: float,
    horizon_length: int,
    speed_floor: float = 1.0,
) -> np.ndarray:
    """Extra travel time [h] over cells 2..N for a vehicle entering cell 2 at ``t``.

    ``predicted_speeds[q][l]`` is the speed of cell ``l`` during game interval
    ``q`` of the no-stop prediction. The arrival interval at a later cell is
    ``t + round(xi / interval_h)``, clamped to the last predicted interval.
    """
    Q = len(predicted_speeds)
    N = len(lengths_km)
    xi = np.zeros(horizon_length)
    for t in range(horizon_length):
        acc = 0.0
        for ell in range(1, N):
            q = min(t + int(math.floor(acc / interval_h + 0.5)), Q - 1)
            v = max(predicted_speeds[q][ell], speed_floor)
            acc += lengths_km[ell] / v - lengths_km[ell] / free_flow_kmh[ell]
        xi[t] = max(acc, 0.0)
    return xi


def xi_cs(theta_i, others_theta_sum, theta_old, gamma: float) -> np.ndarray:
    """Congestion the agent meets from vehicles merging around the same intervals."""
    return gamma * (np.asarray(theta_old, dtype=float) + np.asarray(others_theta_sum, dtype=float))


# --- costs ------------------------------------------------------------------

def cost_price(strategy: Strategy, p_hat, p_bar: float) -> float:
    return float(np.dot(np.asarray(p_hat) - p_bar, strategy.u))


def cost_time(strategy: Strategy, others_theta, context: GameContext) -> float:
    t = context.horizon.offsets
    extra = xi_cs(strategy.theta, others_theta, context.theta_old, context.gamma)
    per_t = context.chi * (t * context.upsilon + context.xi + extra)
    return float(np.dot(per_t, strategy.theta))


def cost_total(strategy: Strategy, params: VehicleParams, others_theta, context: GameContext) -> float:
    a = params.alpha
    return a * cost_price(strategy, context.p_hat, params.p_bar) + (1 - a) * cost_time(
        strategy, others_theta, context
    )


def local_cost(strategy: Strategy, params: VehicleParams, context: GameContext) -> float:
    """The part of the cost that does not depend on the other cohort members."""
    return cost_total(strategy, params, np.zeros(context.horizon.length), context)


def cross_term(theta_i, theta_j, context: GameContext) -> float:
    """Pairwise interaction ``sum_t chi(t) gamma theta_j(t) theta_i(t)``; symmetric."""
    return float(context.gamma * np.dot(context.chi, np.asarray(theta_i) * np.asarray(theta_j)))


def potential_weights(cohort: Sequence[VehicleParams]) -> tuple[float, np.ndarray]:
    """Scale ``K`` of the pairwise terms and per-agent weights ``kappa_i = K / (1 - alpha_i)``.

    The cross term inside ``J_i`` carries the factor ``1 - alpha_i``; with a
    common ``alpha`` all ``kappa_i`` are 1 and the potential is exact.
    """
    one_minus = np.array([1 - p.alpha for p in cohort])
    K = float(one_minus.max()) if len(cohort) else 1.0
    return K, K / one_minus


def potential(strategies: Sequence[Strategy], cohort: Sequence[VehicleParams], context: GameContext) -> float:
    """Potential of a joint strategy.

    ``P = sum_i kappa_i zeta_i + K sum_{j<i} lambda_ij`` where ``zeta_i`` is the
    local cost of agent i. A unilateral change of agent i moves ``P`` by
    ``kappa_i`` times the change of ``J_i``.
    """
    if not strategies:
        return 0.0
    K, kappa = potential_weights(cohort)
    local = sum(w * local_cost(s, p, context) for w, s, p in zip(kappa, strategies, cohort))
    thetas = np.array([s.theta for s in strategies], dtype=float)
    total = thetas.sum(axis=0)
    pair_sum = 0.5 * (total**2 - (thetas**2).sum(axis=0))
    return float(local + K * context.gamma * np.dot(context.chi, pair_sum))


# --- feasibility --------------------------------------------------------------

BINARY_CONSTRAINTS = (
    "single_pulse",
    "pulse_width",
    "no_charge_after_exit",
    "exit_after_charge",
    "min_charge_duration",
    "min_stay",
    "fifo",
    "plug_cap",
)
CONTINUOUS_CONSTRAINTS = (
    "energy_bounds",
    "charge_indicator",
    "soc_dynamics",
    "soc_range",
    "soc_gate",
    "energy_cap",
)


def binary_violations(
    delta: np.ndarray,
    theta: np.ndarray,
    horizon: Horizon,
    min_charge_intervals: int,
    fifo_start: int = 0,
    plug_room: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Evaluate the constraints that involve only ``delta`` and ``theta``.

    Works on batches: ``delta`` and ``theta`` have shape ``(B, H)``; the result
    maps each constraint name to a boolean array of shape ``(B,)`` that is
    true where the constraint is violated.
    """
    delta = np.atleast_2d(np.asarray(delta, dtype=np.int8))
    theta = np.atleast_2d(np.asarray(theta, dtype=np.int8))
    B, H = theta.shape
    W = horizon.half_width
    zeros = np.zeros((B, 1), dtype=np.int8)
    th_prev = np.hstack([zeros, theta[:, :-1]])
    th_next = np.hstack([theta[:, 1:], zeros])
    d_prev = np.hstack([zeros, delta[:, :-1]])
    d_ext = np.hstack([delta, np.zeros((B, min_charge_intervals), dtype=np.int8)])
    width = theta.sum(axis=1)

    out: dict[str, np.ndarray] = {}
    rising = (1 - th_prev) * theta
    falling = th_prev * (1 - theta)
    out["single_pulse"] = (rising.sum(axis=1) != 1) | (falling.sum(axis=1) != 1)

    last = theta * (1 - th_next)
    target = pulse_width_target(horizon)
    out["pulse_width"] = np.any(last * (width[:, None] - target[None, :]) != 0, axis=1)

    # falling edge at t forbids charging from t - W - 1 on
    viol = np.zeros(B, dtype=bool)
    for t in range(H):
        lo = max(0, t - W - 1)
        viol |= (falling[:, t] == 1) & np.any(delta[:, lo:] == 1, axis=1)
    out["no_charge_after_exit"] = viol

    # charging stops at t -> the entry pulse is centred on t
    viol = np.zeros(B, dtype=bool)
    stop_charge = d_prev * (1 - delta)
    for t in range(H):
        lo, hi = max(0, t - W), min(H - 1, t + W)
        viol |= (stop_charge[:, t] == 1) & np.any(theta[:, lo : hi + 1] == 0, axis=1)
    out["exit_after_charge"] = viol

    viol = np.zeros(B, dtype=bool)
    start_charge = (1 - d_prev) * delta
    for t in range(H):
        after = d_ext[:, t + 1 : t + 1 + min_charge_intervals]
        viol |= (start_charge[:, t] == 1) & np.any(after == 0, axis=1)
    out["min_charge_duration"] = viol

    long_pulse = width > W + 1
    early_clear = theta[:, : W + 1].sum(axis=1) == 0
    out["min_stay"] = long_pulse != early_clear

    out["fifo"] = np.any(delta[:, :fifo_start] == 1, axis=1) if fifo_start > 0 else np.zeros(B, dtype=bool)

    if plug_room is None:
        out["plug_cap"] = np.zeros(B, dtype=bool)
    else:
        out["plug_cap"] = np.any(delta > np.asarray(plug_room)[None, :] + FEAS_TOL, axis=1)
    return out


@dataclass
class Feasibility:
    ok: bool
    violations: list[str]

    def __bool__(self) -> bool:
        return self.ok


def check_feasible_logical(
    strategy: Strategy,
    params: VehicleParams,
    context: GameContext,
    others: Aggregates | None = None,
    tol: float = FEAS_TOL,
) -> Feasibility:
    """Evaluate every constraint of the agent's problem directly and list the violated ones."""
    H = context.horizon.length
    W = context.horizon.half_width
    st = context.station
    if others is None:
        others = Aggregates.zeros(H)
    flags = binary_violations(
        strategy.delta,
        strategy.theta,
        context.horizon,
        st.min_charge_intervals,
        context.fifo_start,
        context.plug_room(others),
    )
    violations = [name for name in BINARY_CONSTRAINTS if flags[name][0]]

    u, x, d, th = strategy.u, strategy.x, strategy.delta, strategy.theta
    if np.any(u < st.u_min * d - tol) or np.any(u > st.u_max_per_vehicle * d + tol):
        violations.append("energy_bounds")
    if np.any((u > 0) != (d == 1)):
        violations.append("charge_indicator")
    expected_x = soc_trajectory(params.x0, params.b, u)
    if x.shape != expected_x.shape or np.any(np.abs(x - expected_x) > tol):
        violations.append("soc_dynamics")
    if np.any(x < -tol) or np.any(x > 1 + tol):
        violations.append("soc_range")
    for t in range(H):
        if x[t] < params.x_ref - tol and th[max(0, t - W)] == 1:
            violations.append("soc_gate")
            break
    if np.any(u > context.energy_room(others) + tol):
        violations.append("energy_cap")
    return Feasibility(not violations, violations)
