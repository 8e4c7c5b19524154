"""The freeway on its own: a demand surge builds a queue at the bottleneck.

Runs the congestion-wave scenario without any station traffic and prints a
space-time table of cell speeds, then the total delay downstream
of the station.

    python3 demos/01_traffic_only.py
"""

from pathlib import Path

from evhighway.loop import run_ctm_only
from evhighway.pricing import downstream_delay
from evhighway.scenario import load_scenario

HERE = Path(__file__).parent

sc = load_scenario(HERE / "scenarios" / "congestion_wave.json")
log = run_ctm_only(sc, sc.steps)
print(f"{sc.name}: {len(sc.cells)} cells, {sc.steps} steps of {sc.step_h * 3600:.0f} s")

# one row every 20 steps, speed per cell in km/h
print("\n  step " + "".join(f"  cell{i + 1}" for i in range(len(sc.cells))))
for rec in log[::20]:
    print(f"  {rec.k:4d} " + "".join(f"{v:7.1f}" for v in rec.speeds))

delay = sum(downstream_delay(sc.cells, r.speeds) for r in log)
worst = max(log, key=lambda r: downstream_delay(sc.cells, r.speeds))
print(f"\ntotal downstream delay {delay:.3f} h, worst at step {worst.k}")
print(f"vehicles served {log[-1].state.cumulative_exits_veh:.0f}, still queued upstream {log[-1].state.upstream_queue_veh:.1f}")
