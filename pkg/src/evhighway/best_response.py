"""Exact best responses and the sequential improvement scheme of the charging game.

For a fixed binary pattern ``(delta, theta)`` the remaining problem in ``u``
is a small LP: the price term is linear and separable, every charging
interval has a box, the state of charge before merging back must reach the
reference and the battery must not overflow. :func:`allocate_energy` solves
it greedily. :func:`best_response` enumerates only the patterns the rules
allow (one entry pulse, at most one charging block ending at the exit);
:func:`brute_force_oracle` tries every pattern and shares the allocation, so
both must agree on the optimal cost.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Sequence

import numpy as np

from .strategy import (
    FEAS_TOL,
    Aggregates,
    GameContext,
    Horizon,
    Strategy,
    VehicleParams,
    binary_violations,
    check_feasible_logical,
    cost_total,
    make_strategy,
    no_stop_strategy,
    potential,
)

logger = logging.getLogger(__name__)

TIE_TOL = 1e-12


class NonConvergenceError(RuntimeError):
    def __init__(self, message: str, trace: "GameTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class Pulse:
    theta: np.ndarray
    entry_time: int

    @property
    def stops(self) -> bool:
        return not bool(self.theta[0])


def enumerate_pulses(horizon: Horizon) -> list[Pulse]:
    """The drive-on pulse followed by every admissible stop pulse, by entry time."""
    H, W = horizon.length, horizon.half_width
    out = []
    theta = np.zeros(H, dtype=np.int8)
    theta[: W + 1] = 1
    out.append(Pulse(theta, 0))
    # a stop pulse starts after W and has its falling edge inside the horizon
    for start in range(W + 1, H - 2 * W - 1):
        theta = np.zeros(H, dtype=np.int8)
        theta[start : start + 2 * W + 1] = 1
        out.append(Pulse(theta, start + W))
    return out


def gate_time(theta: np.ndarray, half_width: int) -> int:
    """First interval whose state of charge must already reach the reference."""
    if theta[0]:
        return 0
    ones = np.flatnonzero(theta)
    return len(theta) if ones.size == 0 else int(ones[0]) + half_width


def allocate_energy(
    delta: np.ndarray,
    theta: np.ndarray,
    params: VehicleParams,
    context: GameContext,
    others: Aggregates,
) -> np.ndarray | None:
    """Cheapest energy profile for a fixed binary pattern, or ``None`` if there is none.

    Every charging interval starts at the minimum amount. Intervals before the
    exit are then raised, cheapest first, until the reference charge is met;
    finally every interval cheaper than the reference price is raised,
    cheapest first, while the battery has room.
    """
    st = context.station
    H = len(delta)
    slots = np.flatnonzero(delta)
    u = np.zeros(H)
    if slots.size == 0:
        return u
    hi = np.minimum(st.u_max_per_vehicle, context.energy_room(others))
    if np.any(hi[slots] < st.u_min - FEAS_TOL):
        return None
    hi = np.maximum(hi, st.u_min)
    u[slots] = st.u_min
    budget = (1.0 - params.x0) / params.b - u.sum()
    if budget < -FEAS_TOL:
        return None

    cost = context.p_hat - params.p_bar
    order = slots[np.argsort(cost[slots], kind="stable")]
    t_gate = gate_time(theta, context.horizon.half_width)
    need = (params.x_ref - params.x0) / params.b - u[:t_gate].sum()
    for t in order:
        if need <= 0:
            break
        if t >= t_gate:
            continue
        add = min(hi[t] - u[t], need, budget)
        u[t] += add
        need -= add
        budget -= add
    if need > FEAS_TOL / params.b:
        return None
    for t in order:
        if cost[t] >= 0 or budget <= 0:
            break
        add = min(hi[t] - u[t], budget)
        u[t] += add
        budget -= add
    return u


def candidate_key(strategy: Strategy, half_width: int) -> tuple:
    idx = np.flatnonzero(strategy.delta)
    start = int(idx[0]) if idx.size else len(strategy.delta)
    return (strategy.entry_time(half_width), start, float(strategy.u.sum()))


def select_best(
    candidates: Sequence[tuple[float, Strategy]],
    half_width: int,
    incumbent: Strategy | None = None,
) -> tuple[float, Strategy] | None:
    """Lowest cost; near-ties go to the incumbent, then to the earliest exit."""
    if not candidates:
        return None
    best_cost = min(c for c, _ in candidates)
    tied = [(c, s) for c, s in candidates if c <= best_cost + TIE_TOL]
    if incumbent is not None:
        for c, s in tied:
            if s.same_as(incumbent):
                return c, s
    return min(tied, key=lambda cs: candidate_key(cs[1], half_width))


@dataclass
class BestResponseResult:
    strategy: Strategy | None
    cost: float
    optimal: bool
    explored: int

    @property
    def feasible(self) -> bool:
        return self.strategy is not None


def _evaluate(delta, theta, params, context, others, candidates) -> None:
    u = allocate_energy(delta, theta, params, context, others)
    if u is None:
        return
    s = make_strategy(params, u, delta, theta)
    if check_feasible_logical(s, params, context, others):
        candidates.append((cost_total(s, params, others.theta, context), s))


def feasible_candidates(
    params: VehicleParams, context: GameContext, others: Aggregates
) -> tuple[list[tuple[float, Strategy]], int]:
    """Cost and strategy of every admissible pattern, with the number of patterns tried."""
    H = context.horizon.length
    hbar = context.station.min_charge_intervals
    candidates: list[tuple[float, Strategy]] = []
    explored = 0
    for pulse in enumerate_pulses(context.horizon):
        explored += 1
        _evaluate(np.zeros(H, dtype=np.int8), pulse.theta, params, context, others, candidates)
        if not pulse.stops:
            continue
        # one charging block ending right before the exit, at least hbar+1 long
        for a in range(context.fifo_start, pulse.entry_time - hbar):
            delta = np.zeros(H, dtype=np.int8)
            delta[a : pulse.entry_time] = 1
            explored += 1
            _evaluate(delta, pulse.theta, params, context, others, candidates)
    return candidates, explored


def best_response(
    params: VehicleParams,
    others: Aggregates,
    context: GameContext,
    incumbent: Strategy | None = None,
) -> BestResponseResult:
    """Globally optimal strategy of one agent with everybody else fixed."""
    candidates, explored = feasible_candidates(params, context, others)
    chosen = select_best(candidates, context.horizon.half_width, incumbent)
    if chosen is None:
        return BestResponseResult(None, float("inf"), True, explored)
    return BestResponseResult(chosen[1], chosen[0], True, explored)


@lru_cache(maxsize=16)
def _all_patterns(H: int) -> tuple[np.ndarray, np.ndarray]:
    bits = np.array(list(product((0, 1), repeat=2 * H)), dtype=np.int8)
    return bits[:, :H], bits[:, H:]


@lru_cache(maxsize=64)
def _binary_survivors(H: int, W: int, hbar: int) -> np.ndarray:
    delta, theta = _all_patterns(H)
    flags = binary_violations(delta, theta, Horizon(0, H, W), hbar)
    bad = np.zeros(len(delta), dtype=bool)
    for name, v in flags.items():
        if name not in ("fifo", "plug_cap"):
            bad |= v
    return np.flatnonzero(~bad)


def brute_force_oracle(
    params: VehicleParams,
    others: Aggregates,
    context: GameContext,
    incumbent: Strategy | None = None,
) -> BestResponseResult:
    """Try all ``2^(2H)`` binary patterns; only meant for short horizons."""
    H = context.horizon.length
    if H > 8:
        raise ValueError("the exhaustive oracle is limited to horizons of at most 8 intervals")
    delta_all, theta_all = _all_patterns(H)
    keep = _binary_survivors(H, context.horizon.half_width, context.station.min_charge_intervals)
    candidates: list[tuple[float, Strategy]] = []
    for idx in keep:
        _evaluate(delta_all[idx], theta_all[idx], params, context, others, candidates)
    chosen = select_best(candidates, context.horizon.half_width, incumbent)
    explored = len(delta_all)
    if chosen is None:
        return BestResponseResult(None, float("inf"), True, explored)
    return BestResponseResult(chosen[1], chosen[0], True, explored)


# --- sequential best response ---------------------------------------------------

@dataclass
class TraceRecord:
    tau: int
    agent: int
    old_cost: float
    new_cost: float
    accepted: bool
    potential: float
    delta_potential: float


@dataclass
class GameTrace:
    records: list[TraceRecord] = field(default_factory=list)
    initial_potential: float = 0.0
    converged: bool = False
    infeasible_agents: list[int] = field(default_factory=list)

    @property
    def accepted_updates(self) -> int:
        return sum(r.accepted for r in self.records)

    @property
    def final_potential(self) -> float:
        return self.records[-1].potential if self.records else self.initial_potential


def schedule_order(schedule: str, n: int, rng: np.random.Generator | None, requests: Sequence[int] | None = None):
    """Endless stream of agent indices to update."""
    if schedule == "round-robin":
        while True:
            yield from range(n)
    elif schedule == "request-queue":
        order = list(requests) if requests is not None else list(range(n))
        if sorted(order) != list(range(n)):
            raise ValueError("request order must be a permutation of the cohort")
        while True:
            yield from order
    elif schedule == "random":
        if rng is None:
            raise ValueError("the random schedule needs a generator")
        while True:
            yield int(rng.integers(n))
    else:
        raise ValueError(f"unknown schedule {schedule!r}")


def initial_profile(
    cohort: Sequence[VehicleParams], context: GameContext
) -> tuple[list[Strategy], list[int]]:
    """Everybody drives on, except agents that must charge: they get the earliest feasible stop.

    Agents that must charge are placed one after the other so that each sees
    the plugs and energy taken by the previous ones. Agents with no feasible
    strategy at all keep the drive-on pulse and are reported.
    """
    H = context.horizon.length
    W = context.horizon.half_width
    strategies = [no_stop_strategy(p, context.horizon) for p in cohort]
    infeasible = []
    for i, p in enumerate(cohort):
        if p.x0 >= p.x_ref:
            continue
        others = Aggregates.of(strategies, H).without(strategies[i])
        candidates, _ = feasible_candidates(p, context, others)
        if not candidates:
            infeasible.append(i)
            logger.warning("agent %d has no feasible strategy", i)
            continue
        strategies[i] = min(candidates, key=lambda cs: candidate_key(cs[1], W))[1]
    return strategies, infeasible


def run_sequential(
    cohort: Sequence[VehicleParams],
    context: GameContext,
    initial: Sequence[Strategy] | None = None,
    schedule: str = "round-robin",
    rng: np.random.Generator | None = None,
    requests: Sequence[int] | None = None,
    max_sweeps: int | None = None,
    responder=best_response,
) -> tuple[list[Strategy], GameTrace]:
    """Let agents improve one at a time until nobody gains at least ``epsilon``.

    An update is accepted only when it lowers the agent's cost by at least
    ``context.epsilon``. The run ends once every updatable agent has been
    offered a turn since the last accepted update without gaining.
    """
    n = len(cohort)
    H = context.horizon.length
    eps = context.epsilon
    if initial is None:
        strategies, infeasible = initial_profile(cohort, context)
    else:
        strategies, infeasible = list(initial), []
    trace = GameTrace(initial_potential=potential(strategies, cohort, context), infeasible_agents=infeasible)
    active = [i for i in range(n) if i not in infeasible]
    if not active:
        trace.converged = True
        return strategies, trace

    if max_sweeps is None:
        max_sweeps = 10 * n * H
    budget = max_sweeps * n
    total = Aggregates.of(strategies, H)
    current_p = trace.initial_potential
    unchanged: set[int] = set()
    tau = 0
    for i in schedule_order(schedule, n, rng, requests):
        if i in infeasible:
            continue
        if tau >= budget:
            raise NonConvergenceError(f"no equilibrium after {max_sweeps} sweeps", trace)
        s_old = strategies[i]
        others = total.without(s_old)
        old_cost = cost_total(s_old, cohort[i], others.theta, context)
        res = responder(cohort[i], others, context, incumbent=s_old)
        accepted = res.feasible and old_cost - res.cost >= eps
        if accepted:
            strategies[i] = res.strategy
            total = others.plus(res.strategy)
            new_p = potential(strategies, cohort, context)
            unchanged.clear()
        else:
            new_p = current_p
            unchanged.add(i)
        trace.records.append(
            TraceRecord(tau, i, old_cost, res.cost, accepted, new_p, new_p - current_p)
        )
        current_p = new_p
        tau += 1
        if len(unchanged) == len(active):
            trace.converged = True
            return strategies, trace
    raise AssertionError("unreachable")


def certify_mine(
    strategies: Sequence[Strategy],
    cohort: Sequence[VehicleParams],
    context: GameContext,
    eps: float | None = None,
    oracle=brute_force_oracle,
    skip: Sequence[int] = (),
) -> tuple[bool, float]:
    """Check that no agent can lower its cost by ``eps`` or more on its own.

    Returns the verdict and the largest improvement found.
    """
    if eps is None:
        eps = context.epsilon
    H = context.horizon.length
    total = Aggregates.of(strategies, H)
    worst = 0.0
    for i, (s, p) in enumerate(zip(strategies, cohort)):
        if i in skip:
            continue
        others = total.without(s)
        cur = cost_total(s, p, others.theta, context)
        res = oracle(p, others, context)
        if res.feasible:
            worst = max(worst, cur - res.cost)
    return worst < eps, worst
