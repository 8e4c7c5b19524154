"""Run a scenario and write its artifact directory.

Outputs are plain CSV with a header row and a fixed column order, plus a
``manifest.json`` holding the seed, the scenario and a summary. Nothing
time-dependent is written, so equal seeds give byte-identical directories.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import ctm
from .best_response import GameTrace, NonConvergenceError, run_sequential
from .loop import ClosedLoop, StepRecord, run_ctm_only, sample_vehicle, summarize
from .milp import compile_game
from .pricing import downstream_delay
from .scenario import Scenario
from .strategy import cohort_size

logger = logging.getLogger(__name__)

MODES = ("closed-loop", "ctm-only", "single-game")

TRAJECTORY_COLUMNS = ("k", "cell", "density_vehkm", "inflow_vehh", "outflow_vehh", "interface_flow_vehh", "speed_kmh")
STATION_COLUMNS = ("k", "r2s_vehh", "s2r_vehh", "queue_len", "plugs_busy", "price", "station_veh", "upstream_queue_veh")
PRICE_COLUMNS = ("interval", "realized_price", "estimated_prices")
LEDGER_COLUMNS = (
    "vehicle_id",
    "decision_interval",
    "stops",
    "queue_entry_interval",
    "charge_start",
    "charge_end",
    "energy_per_interval",
    "exit_interval",
    "paid",
    "estimated_payment",
    "payment_gap",
)
TRACE_COLUMNS = ("interval", "tau", "agent", "delta_j", "delta_p", "accepted", "potential")


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if x is None:
        return ""
    return str(x)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def trajectory_rows(log: Sequence[StepRecord]):
    for r in log:
        for ell, (c, v) in enumerate(zip(r.state.cells, r.speeds), start=1):
            yield (r.k, ell, c.density_vehkm, c.inflow_vehh, c.outflow_vehh, c.interface_flow_vehh, v)


def station_rows(log: Sequence[StepRecord]):
    for r in log:
        s = r.state
        yield (r.k, s.r2s_vehh, s.s2r_vehh, r.queue_len, r.plugs_busy, r.price, s.station_veh, s.upstream_queue_veh)


def trace_rows(interval: int, trace: GameTrace | None):
    if trace is None:
        return
    for rec in trace.records:
        yield (interval, rec.tau, rec.agent, rec.new_cost - rec.old_cost, rec.delta_potential, rec.accepted, rec.potential)


def write_manifest(out: Path, scenario: Scenario, seed: int, mode: str, steps: int, extra: dict, overrides: dict) -> None:
    manifest = {
        "mode": mode,
        "seed": seed,
        "steps": steps,
        "overrides": overrides,
        "scenario_path": scenario.source,
        "scenario": scenario.to_json(),
        **extra,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _closed_loop(scenario: Scenario, seed: int, steps: int, out: Path, epsilon, schedule) -> dict:
    loop = ClosedLoop(scenario, seed=seed, epsilon=epsilon, schedule=schedule)
    try:
        loop.run(steps)
    except NonConvergenceError as exc:
        write_csv(out / "game_trace.csv", TRACE_COLUMNS, trace_rows(loop.k // loop.l, exc.trace))
        raise
    write_csv(out / "trajectory.csv", TRAJECTORY_COLUMNS, trajectory_rows(loop.steps_log))
    write_csv(out / "station.csv", STATION_COLUMNS, station_rows(loop.steps_log))
    write_csv(
        out / "prices.csv",
        PRICE_COLUMNS,
        ((g.interval, g.realized_price, ";".join(fmt(float(p)) for p in g.context.p_hat)) for g in loop.games),
    )

    def ledger_rows():
        for v in loop.ledger.vehicles:
            bill = loop.billing.get(v.vehicle_id)
            paid = bill.paid if bill else 0.0
            est = bill.estimated if bill else 0.0
            yield (
                v.vehicle_id,
                v.decision_interval,
                v.stops,
                v.decision_interval if v.stops else None,
                v.charge_start,
                v.charge_end,
                ";".join(fmt(float(u)) for u in v.strategy.u),
                v.exit_interval,
                paid,
                est,
                paid - est,
            )

    write_csv(out / "ledger.csv", LEDGER_COLUMNS, ledger_rows())
    write_csv(
        out / "game_trace.csv",
        TRACE_COLUMNS,
        (row for g in loop.games for row in trace_rows(g.interval, g.trace)),
    )
    baseline = run_ctm_only(scenario, steps)
    return {"summary": summarize(loop, baseline)}


def _ctm_only(scenario: Scenario, steps: int, out: Path) -> dict:
    log = run_ctm_only(scenario, steps)
    write_csv(out / "trajectory.csv", TRAJECTORY_COLUMNS, trajectory_rows(log))
    write_csv(out / "station.csv", STATION_COLUMNS, station_rows(log))
    delay = sum(downstream_delay(scenario.cells, r.speeds) for r in log)
    return {"summary": {"steps": steps, "delay_without_policy_h": delay}}


def _single_game(scenario: Scenario, seed: int, out: Path, epsilon, schedule) -> dict:
    """Freeze the context of the first game interval and play it once, keeping the full trace."""
    loop = ClosedLoop(scenario, seed=seed, epsilon=epsilon, schedule=schedule)
    context, delta_hat_sum, s2r = loop.collect(0)
    D1 = ctm.demand(loop.params[0], loop.state.cells[0])
    S2 = ctm.supply(loop.params[1], loop.state.cells[1])
    n = cohort_size(D1, S2, s2r, scenario.penetration, scenario.game_step_h)
    context.n = n
    rng = loop.interval_rng(0)
    cohort = [sample_vehicle(scenario, rng) for _ in range(n)]
    try:
        strategies, trace = run_sequential(cohort, context, schedule=loop.sched, rng=rng)
    except NonConvergenceError as exc:
        write_csv(out / "game_trace.csv", TRACE_COLUMNS, trace_rows(0, exc.trace))
        raise
    write_csv(out / "game_trace.csv", TRACE_COLUMNS, trace_rows(0, trace))
    (out / "game.lp").write_text(compile_game(cohort, context).to_lp_text())
    ctx = {
        "n": n,
        "xi": context.xi.tolist(),
        "p_hat": context.p_hat.tolist(),
        "delta_hat_sum": delta_hat_sum.tolist(),
        "theta_old": context.theta_old.tolist(),
        "u_old": context.u_old.tolist(),
        "delta_old": context.delta_old.tolist(),
        "fifo_start": context.fifo_start,
        "cohort": [p.__dict__ for p in cohort],
        "strategies": [
            {"u": s.u.tolist(), "delta": s.delta.tolist(), "theta": s.theta.tolist()} for s in strategies
        ],
    }
    (out / "context.json").write_text(json.dumps(ctx, indent=2, sort_keys=True) + "\n")
    return {
        "summary": {
            "cohort": n,
            "stoppers": sum(s.stops for s in strategies),
            "accepted_updates": trace.accepted_updates,
            "initial_potential": trace.initial_potential,
            "final_potential": trace.final_potential,
            "infeasible_agents": trace.infeasible_agents,
        }
    }


def run(
    scenario: Scenario,
    out_dir: str | Path,
    seed: int | None = None,
    steps: int | None = None,
    mode: str = "closed-loop",
    epsilon: float | None = None,
    schedule: str | None = None,
) -> Path:
    """Run ``scenario`` in ``mode`` and write the artifacts into ``out_dir``."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    seed = scenario.seed if seed is None else seed
    steps = scenario.steps if steps is None else steps
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    extra: dict = {}
    if steps > 0 or mode == "single-game":
        if mode == "closed-loop":
            extra = _closed_loop(scenario, seed, steps, out, epsilon, schedule)
        elif mode == "ctm-only":
            extra = _ctm_only(scenario, steps, out)
        else:
            extra = _single_game(scenario, seed, out, epsilon, schedule)
    overrides = {"epsilon": epsilon, "schedule": schedule}
    write_manifest(out, scenario, seed, mode, steps, extra, overrides)
    return out
