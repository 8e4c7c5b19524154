"""A single charging game, solved by sequential best response.

Five vehicles share a two-plug station over an eight-interval window with a
price dip in the middle. Each one in turn picks its cheapest feasible plan
until no one can improve; the outcome is then certified against exhaustive
search and checked against the mixed-integer formulation.

    python3 demos/02_one_game.py
"""

import numpy as np

from evhighway.best_response import certify_mine, run_sequential
from evhighway.milp import compile_game, lift
from evhighway.station import StationConfig
from evhighway.strategy import GameContext, Horizon, VehicleParams, potential

H, W = 8, 1
station = StationConfig(plug_count=2, max_energy_per_interval=2.0, min_charge_intervals=1, u_min=0.2, u_max_per_vehicle=0.8)
p_hat = np.array([0.30, 0.28, 0.18, 0.12, 0.12, 0.20, 0.28, 0.30])
ctx = GameContext(Horizon(0, H, W), 5, np.full(H, 0.01), np.zeros(H), np.zeros(H), np.zeros(H), p_hat,
                  gamma=0.005, upsilon=0.02, station=station)

cohort = [
    VehicleParams(b=0.04, x0=0.22, x_ref=0.25, alpha=0.6, p_bar=0.30),  # has to charge
    VehicleParams(b=0.03, x0=0.50, x_ref=0.20, alpha=0.6, p_bar=0.32),
    VehicleParams(b=0.03, x0=0.60, x_ref=0.20, alpha=0.6, p_bar=0.29),
    VehicleParams(b=0.05, x0=0.80, x_ref=0.30, alpha=0.6, p_bar=0.25),
    VehicleParams(b=0.02, x0=0.40, x_ref=0.20, alpha=0.6, p_bar=0.33),
]

z, trace = run_sequential(cohort, ctx)
print(f"converged after {trace.accepted_updates} accepted updates, "
      f"potential {trace.initial_potential:.4f} -> {trace.final_potential:.4f}")
for i, (p, s) in enumerate(zip(cohort, z)):
    if s.stops:
        start = s.entry_time(W) - W
        plan = "".join("C" if d else "w" if t < start else ">" if th else "." for t, (d, th) in enumerate(zip(s.delta, s.theta)))
        print(f"  vehicle {i}: stops  {plan}  energy {s.u.sum():.2f}  leaves with SoC {s.x[s.entry_time(W)]:.3f}")
    else:
        print(f"  vehicle {i}: drives on")
print("  (C charging, w parked without a plug, > leaving the station, . downstream)")
print(f"plugs in use per interval: {sum(s.delta for s in z).astype(int).tolist()}")

ok, gap = certify_mine(z, cohort, ctx, skip=trace.infeasible_agents)
print(f"exhaustive check: no agent gains {ctx.epsilon} or more -> {ok} (largest gain {gap:.2e})")

cs = compile_game(cohort, ctx)
values = {}
for i, (p, s) in enumerate(zip(cohort, z)):
    values.update(lift(s, p, ctx, owner=i))
print(f"mixed-integer model: {len(cs.rows)} rows, violated by the equilibrium: {cs.violated(values)}")
print(f"potential recomputed: {potential(z, cohort, ctx):.4f}")
