"""Closed loop between the traffic model and the charging game.

Every ``l`` CTM steps a game interval starts and the operator

1. predicts the no-stop evolution of the road and derives the delay
   estimate, the committed station load and the broadcast prices,
2. sizes the cohort leaving cell 1, samples its vehicles and bills the
   energy bought during the interval at the realized price,
3. lets the cohort play sequential best responses until an equilibrium,
4. commits the plans and feeds the resulting station flows to the CTM for
   the next ``l`` steps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import ctm
from .best_response import GameTrace, run_sequential
from .pricing import PriceCoefficients, downstream_delay, estimated_price, fit_betas, spot_price
from .scenario import Scenario
from .station import StationLedger, extract_r2s, extract_s2r, fold_commitments
from .strategy import GameContext, Horizon, Strategy, VehicleParams, cohort_size, travel_delay_xi

logger = logging.getLogger(__name__)


@dataclass
class StepRecord:
    k: int
    state: ctm.HighwayState
    speeds: list[float]
    queue_len: int
    plugs_busy: int
    price: float


@dataclass
class GameRecord:
    interval: int
    context: GameContext
    cohort: list[VehicleParams]
    strategies: list[Strategy]
    trace: GameTrace | None
    realized_price: float
    delta_hat_sum: np.ndarray
    vehicle_ids: list[int]


@dataclass
class Billing:
    paid: float = 0.0
    estimated: float = 0.0
    energy: float = 0.0


def price_coefficients(scenario: Scenario) -> PriceCoefficients:
    pc = scenario.pricing
    H = scenario.game.horizon
    floor = -np.inf if pc.price_floor is None else pc.price_floor
    return PriceCoefficients(pc.c1, pc.c2, pc.c3, pc.beta0.values(0, H), pc.beta1.values(0, H), floor)


def sample_vehicle(scenario: Scenario, rng: np.random.Generator) -> VehicleParams:
    r = scenario.vehicles
    draw = lambda rg: float(rng.uniform(rg.lo, rg.hi)) if rg.hi > rg.lo else rg.lo
    return VehicleParams(b=draw(r.b), x0=draw(r.x0), x_ref=draw(r.x_ref), alpha=draw(r.alpha), p_bar=draw(r.p_bar))


@dataclass
class ClosedLoop:
    """Mutable simulation driver; one instance per run."""

    scenario: Scenario
    seed: int | None = None
    epsilon: float | None = None
    schedule: str | None = None
    steps_log: list[StepRecord] = field(default_factory=list)
    games: list[GameRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        sc = self.scenario
        self.params = list(sc.cells)
        self.l = sc.game.subsample
        self.H = sc.game.horizon
        self.W = sc.game.half_width
        self.seed = sc.seed if self.seed is None else self.seed
        self.eps = sc.game.epsilon if self.epsilon is None else self.epsilon
        self.sched = sc.game.schedule if self.schedule is None else self.schedule
        self.state = ctm.initial_state(self.params, sc.step_h, sc.initial_densities)
        self.ledger = StationLedger(self.W)
        self.coeffs = price_coefficients(sc)
        self.k = 0
        self.billing: dict[int, Billing] = {}
        # predictions waiting for their realized price: target interval -> [(offset, delta_hat_sum, d)]
        self._pending_fit: dict[int, list[tuple[int, float, float]]] = {}
        self._fit_history: list[list[tuple[float, float, float]]] = [[] for _ in range(self.H)]
        self._r2s_rate = 0.0
        self._r2s_carry = 0.0
        self._s2r_rate = 0.0
        self._price = 0.0
        self.realized_prices: list[float] = []

    def interval_rng(self, g: int) -> np.random.Generator:
        """Generator of game interval ``g``; runs that differ only in policy draw the same drivers."""
        return np.random.default_rng([self.seed, g])

    # --- sense and broadcast -----------------------------------------------------
    def collect(self, g: int) -> tuple[GameContext, np.ndarray, float]:
        """Context of game interval ``g``, the predicted delay sums and the current station outflow."""
        sc = self.scenario
        T, l, H = sc.step_h, self.l, self.H
        agg = fold_commitments(self.ledger, g, H)
        s2r_game = [extract_s2r(self.ledger, g + q, self.W, l, T) for q in range(H)]
        s2r_steps = [s2r_game[j // l] for j in range(H * l)]
        k0 = self.k
        inflow = [sc.inflow_vehh(k0 + j) for j in range(H * l)]
        states = ctm.rollout_free(self.state, self.params, H * l, inflow, s2r_steps)
        predicted_speeds = [ctm.speeds(states[q * l], self.params) for q in range(H)]
        delta_hat_sum = np.array([downstream_delay(self.params, v) for v in predicted_speeds])
        xi = travel_delay_xi(
            predicted_speeds,
            [p.length_km for p in self.params],
            [p.free_flow_speed_kmh for p in self.params],
            sc.game_step_h,
            H,
        )
        d = np.array(sc.pricing.base_demand.values(g, H))
        p_hat = estimated_price(self.coeffs, d, delta_hat_sum)
        context = GameContext(
            horizon=Horizon(g, H, self.W, l, T),
            n=0,
            xi=xi,
            theta_old=agg.theta_old,
            u_old=agg.u_old,
            delta_old=agg.delta_old,
            p_hat=p_hat,
            gamma=sc.game.gamma,
            upsilon=sc.game.upsilon,
            station=sc.station,
            epsilon=self.eps,
            fifo_start=self.ledger.fifo_start(g),
        )
        return context, delta_hat_sum, s2r_game[0]

    # --- play and commit ---------------------------------------------------------
    def play(self, g: int, context: GameContext, s2r: float) -> tuple[list[VehicleParams], list[Strategy], GameTrace | None]:
        sc = self.scenario
        c1, c2 = ctm.demand(self.params[0], self.state.cells[0]), ctm.supply(self.params[1], self.state.cells[1])
        n = cohort_size(c1, c2, s2r, sc.penetration, sc.game_step_h)
        context.n = n
        if n == 0:
            return [], [], None
        rng = self.interval_rng(g)
        cohort = [sample_vehicle(sc, rng) for _ in range(n)]
        strategies, trace = run_sequential(cohort, context, schedule=self.sched, rng=rng)
        return cohort, strategies, trace

    def bill(self, g: int, price: float) -> None:
        for v in self.ledger.vehicles:
            u = v.at("u", g)
            if u > 0:
                b = self.billing.setdefault(v.vehicle_id, Billing())
                b.paid += price * u
                b.energy += u
                b.estimated += float(v.estimated_prices[g - v.decision_interval]) * u

    def _record_price(self, g: int, realized: float, delta_hat_sum: np.ndarray, d: np.ndarray) -> None:
        for q in range(self.H):
            self._pending_fit.setdefault(g + q, []).append((q, float(delta_hat_sum[q]), float(d[q])))
        for offset, dh, dd in self._pending_fit.pop(g):
            self._fit_history[offset].append((realized, dh, dd))
        if self.scenario.pricing.refit:
            b0 = self.coeffs.beta0.copy()
            b1 = self.coeffs.beta1.copy()
            for q, records in enumerate(self._fit_history):
                if len(records) >= 2:
                    prices, dh, dd = zip(*records)
                    b0[q], b1[q] = fit_betas(prices, dh, dd, self.coeffs.c1)
            self.coeffs = self.coeffs.with_betas(b0, b1)

    # --- one game interval -----------------------------------------------------
    def game_interval(self, g: int) -> None:
        context, delta_hat_sum, s2r = self.collect(g)
        cohort, strategies, trace = self.play(g, context, s2r)
        ids = self.ledger.commit(g, strategies, cohort, context.p_hat) if strategies else []
        # energy bought during g, by everybody committed so far, is billed at p(g)
        realized = spot_price(
            self.coeffs,
            self.scenario.pricing.base_demand(g),
            self.ledger.total("u", g),
            [delta_hat_sum[0]],
        )
        self._price = realized
        self.realized_prices.append(realized)
        self.bill(g, realized)
        self._record_price(g, realized, delta_hat_sum, np.array(self.scenario.pricing.base_demand.values(g, self.H)))
        self.games.append(GameRecord(g, context, cohort, strategies, trace, realized, delta_hat_sum, ids))

        T = self.scenario.step_h
        self._r2s_rate = extract_r2s(strategies, len(strategies), self.l * T) if strategies else 0.0
        self._s2r_rate = s2r

    # --- inject and bill ---------------------------------------------------------
    def step(self) -> ctm.HighwayState:
        """Advance one CTM step, starting a game interval when due."""
        g, j = divmod(self.k, self.l)
        if j == 0:
            self.game_interval(g)
        T = self.scenario.step_h
        want = self._r2s_rate + self._r2s_carry / T
        resolved = ctm.resolve(self.state, self.params, want, self._s2r_rate, self.scenario.inflow_vehh(self.k))
        # diversion beyond the demand of cell 1 waits for the next step
        self._r2s_carry = (want - resolved.r2s_vehh) * T
        self.steps_log.append(
            StepRecord(
                self.k,
                resolved,
                ctm.speeds(resolved, self.params),
                self.ledger.queue_length(g),
                self.ledger.plugs_busy(g),
                self._price,
            )
        )
        self.state = ctm.advance(resolved, self.params)
        self.k += 1
        return self.state

    def run(self, steps: int) -> "ClosedLoop":
        for _ in range(steps):
            self.step()
        return self

    # --- summaries ---------------------------------------------------------------
    def total_delay_h(self) -> float:
        """Sum over steps and cells 2..N of the per-vehicle delay."""
        return sum(downstream_delay(self.params, r.speeds) for r in self.steps_log)

    def stoppers(self, window: range | None = None) -> int:
        return sum(
            1
            for v in self.ledger.vehicles
            if v.stops and (window is None or v.decision_interval in window)
        )


def run_ctm_only(scenario: Scenario, steps: int) -> list[StepRecord]:
    """The bare traffic model with no station traffic."""
    params = list(scenario.cells)
    state = ctm.initial_state(params, scenario.step_h, scenario.initial_densities)
    out = []
    for k in range(steps):
        resolved = ctm.resolve(state, params, 0.0, 0.0, scenario.inflow_vehh(k))
        out.append(StepRecord(k, resolved, ctm.speeds(resolved, params), 0, 0, 0.0))
        state = ctm.advance(resolved, params)
    return out


def summarize(loop: ClosedLoop, baseline: list[StepRecord]) -> dict:
    stays = [
        v.exit_interval - v.decision_interval for v in loop.ledger.vehicles if v.stops
    ]
    base_delay = sum(downstream_delay(loop.params, r.speeds) for r in baseline)
    return {
        "steps": loop.k,
        "game_intervals": len(loop.games),
        "vehicles": len(loop.ledger.vehicles),
        "stoppers": len(stays),
        "agents_without_feasible_strategy": sum(len(g.trace.infeasible_agents) for g in loop.games if g.trace),
        "energy_sold": float(sum(b.energy for b in loop.billing.values())),
        "revenue": float(sum(b.paid for b in loop.billing.values())),
        "mean_stop_intervals": float(np.mean(stays)) if stays else 0.0,
        "delay_with_policy_h": loop.total_delay_h(),
        "delay_without_policy_h": base_delay,
        "final_station_vehicles": loop.state.station_veh,
    }
