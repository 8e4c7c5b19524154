"""Does a congestion-linked discount shift charging into the jam?

Runs the closed loop on the congestion-wave scenario twice per seed: once
with prices blind to congestion and once with the discount switched on.
Vehicles that stop during the jam leave the road when it is most crowded.
The station sells close to its energy cap either way, so the discount moves
the stops in time rather than adding energy.

    python3 demos/03_price_incentive.py [seeds]
"""

import logging
import sys
from pathlib import Path

from evhighway.loop import ClosedLoop, run_ctm_only, summarize
from evhighway.pricing import downstream_delay
from evhighway.scenario import load_scenario

HERE = Path(__file__).parent
logging.basicConfig(level=logging.ERROR)
seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 3

sc = load_scenario(HERE / "scenarios" / "congestion_wave.json")
base = run_ctm_only(sc, sc.steps)
jam = [r.k // sc.game.subsample for r in base if downstream_delay(sc.cells, r.speeds) > 1e-6]
window = range(min(jam), max(jam) + 1)
print(f"congested game intervals without any charging: {window.start}..{window.stop - 1}")
print(f"delay of the bare freeway: {sum(downstream_delay(sc.cells, r.speeds) for r in base):.4f} h\n")

print(" seed  discount  stoppers(jam)  stoppers(all)  energy   delay [h]")
for seed in range(seeds):
    for beta1 in (0.0, 1.0):
        loop = ClosedLoop(sc.replace(pricing__beta1=beta1), seed=seed).run(sc.steps)
        s = summarize(loop, base)
        print(f" {seed:4d}  {'on ' if beta1 else 'off'}       {loop.stoppers(window):8d}  {s['stoppers']:13d}"
              f"  {s['energy_sold']:7.2f}  {s['delay_with_policy_h']:.4f}")
