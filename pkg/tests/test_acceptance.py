"""Acceptance suite: nine end-to-end properties at their stated tolerances.

Each test reports one ``ACCEPTANCE <n> PASS|FAIL`` line; the lines are
collected and printed again at the end of the pytest run. The module also
runs standalone: ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import hashlib
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from _oracles import (  # noqa: E402
    and_misclassifications,
    equivalence_counts,
    product_misclassifications,
    threshold_misclassifications,
    tiny_instance,
)

from evhighway import ctm, io  # noqa: E402
from evhighway.best_response import (  # noqa: E402
    best_response,
    brute_force_oracle,
    certify_mine,
    feasible_candidates,
    run_sequential,
)
from evhighway.instances import (  # noqa: E402
    random_context,
    random_feasible_joint,
    random_others,
    random_station,
    random_vehicle,
)
from evhighway.loop import ClosedLoop, run_ctm_only  # noqa: E402
from evhighway.pricing import downstream_delay  # noqa: E402
from evhighway.scenario import load_scenario  # noqa: E402
from evhighway.strategy import Aggregates, cost_total, potential  # noqa: E402

SCENARIOS = Path(__file__).resolve().parent.parent / "demos" / "scenarios"
RESULTS: dict[int, str] = {}


def report(n: int, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


# --- 1 ---------------------------------------------------------------------------

def _random_highway(rng):
    n = int(rng.integers(3, 9))
    params = [
        ctm.CellParams(
            float(rng.uniform(0.3, 1.5)),
            float(rng.uniform(80, 120)),
            float(rng.uniform(15, 30)),
            float(rng.uniform(1800, 4000)),
            float(rng.uniform(150, 220)),
        )
        for _ in range(n)
    ]
    rho = [float(rng.uniform(0, p.max_jam_density_vehkm)) for p in params]
    return params, rho


def test_1_conservation():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        params, rho = _random_highway(rng)
        T = ctm.max_stable_step_h(params)
        s = ctm.initial_state(params, T, rho)
        b0 = ctm.vehicle_balance(s, params)
        for _ in range(200):
            r2s = float(rng.uniform(0, 400))
            s2r = min(float(rng.uniform(0, 400)), s.station_veh / T)
            r = ctm.resolve(s, params, r2s, s2r, float(rng.uniform(0, 5000)))
            s = ctm.advance(r, params)
            scale = s.cumulative_arrivals_veh + ctm.vehicles_on_road(s, params) + s.station_veh + s.upstream_queue_veh
            worst = max(worst, abs(ctm.vehicle_balance(s, params) - b0) / max(scale, 1.0))
    elapsed = time.perf_counter() - t0
    report(1, worst <= 1e-9 and elapsed < 5.0, f"50 scenarios x 200 steps, worst relative imbalance {worst:.2e}, {elapsed:.2f} s")


# --- 2 ---------------------------------------------------------------------------

def test_2_translation_equivalence():
    t0 = time.perf_counter()
    total = accepted = dis = 0
    for H in (4, 5, 6):
        for W in (0, 1):
            for hbar in (1, 2):
                # with hbar = 2 the agent starts below its reference and is forced to stop
                ctx, p, others = tiny_instance(H, W, hbar, must_charge=hbar == 2)
                n, a, d = equivalence_counts(ctx, p, others)
                total, accepted, dis = total + n, accepted + a, dis + d
    elapsed = time.perf_counter() - t0
    report(
        2,
        dis == 0 and elapsed < 60.0,
        f"{total} assignments over 12 instances, {accepted} feasible, {dis} disagreements, {elapsed:.1f} s",
    )


# --- 3 ---------------------------------------------------------------------------

def test_3_gadget_truth_tables():
    counts = []
    bad = and_misclassifications()
    for kind in ("geq", "leq"):
        for c, m, M in ((5.0, 0.0, 10.0), (-1.5, -4.0, 2.0), (0.0, 0.0, 3.0)):
            b, n = threshold_misclassifications(kind, c, m, M, 1200)
            bad += b
            counts.append(n)
    for m, M in ((0.0, 10.0), (-3.0, 4.0)):
        b, n = product_misclassifications(m, M, 600)
        bad += b
        counts.append(n)
    report(3, bad == 0 and min(counts) >= 1000, f"AND on 4 points, grids of >= {min(counts)} points, {bad} misclassified")


# --- 4 ---------------------------------------------------------------------------

def test_4_potential_exactness():
    rng = np.random.default_rng(4)
    checked = 0
    worst = 0.0
    while checked < 1000:
        ctx = random_context(rng, length=int(rng.integers(4, 9)), discount=0.3)
        alpha = float(rng.uniform(0.1, 0.95))
        cohort = [random_vehicle(rng, alpha=alpha) for _ in range(int(rng.integers(2, 6)))]
        z = random_feasible_joint(rng, cohort, ctx)
        if z is None:
            continue
        H = ctx.horizon.length
        P_z = potential(z, cohort, ctx)
        total = Aggregates.of(z, H)
        for _ in range(4):
            i = int(rng.integers(len(cohort)))
            others = total.without(z[i])
            options, _ = feasible_candidates(cohort[i], ctx, others)
            y = options[int(rng.integers(len(options)))][1]
            dev = list(z)
            dev[i] = y
            dJ = cost_total(z[i], cohort[i], others.theta, ctx) - cost_total(y, cohort[i], others.theta, ctx)
            dP = P_z - potential(dev, cohort, ctx)
            worst = max(worst, abs(dJ - dP))
            checked += 1
    report(4, worst <= 1e-9, f"{checked} unilateral deviations, max |dJ - dP| = {worst:.2e}")


# --- 5 ---------------------------------------------------------------------------

def test_5_best_response_optimality():
    rng = np.random.default_rng(5)
    mismatches = feasible = 0
    t0 = time.perf_counter()
    for _ in range(200):
        ctx = random_context(rng, length=int(rng.integers(4, 9)), discount=0.3)
        p = random_vehicle(rng)
        others = random_others(rng, ctx, count=int(rng.integers(0, 4)))
        a = best_response(p, others, ctx)
        b = brute_force_oracle(p, others, ctx)
        mismatches += a.cost != b.cost
        feasible += a.feasible
    elapsed = time.perf_counter() - t0
    report(5, mismatches == 0, f"200 instances ({feasible} feasible), {mismatches} cost mismatches, {elapsed:.1f} s")


# --- 6 ---------------------------------------------------------------------------

def test_6_convergence():
    rng = np.random.default_rng(6)
    t0 = time.perf_counter()
    failures = []
    accepted_total = 0
    for trial in range(100):
        # every other cohort gets a roomier station so that more agents actually stop
        roomy = trial % 2 == 0
        station = random_station(rng, min_charge_intervals=1) if roomy else None
        H = int(rng.integers(6 if roomy else 4, 9))
        ctx = random_context(rng, length=H, station=station, fifo=not roomy, discount=0.3)
        cohort = [random_vehicle(rng) for _ in range(int(rng.integers(1, 7)))]
        z, trace = run_sequential(cohort, ctx)
        ok, _ = certify_mine(z, cohort, ctx, eps=1e-4, skip=trace.infeasible_agents)
        bound = (trace.initial_potential - trace.final_potential) / ctx.epsilon
        accepted_total += trace.accepted_updates
        if not (trace.converged and ok and trace.accepted_updates <= bound + 1e-6):
            failures.append(trial)
    elapsed = time.perf_counter() - t0
    report(
        6,
        not failures and elapsed < 300.0,
        f"100 cohorts, {accepted_total} accepted updates, failures {failures}, {elapsed:.1f} s",
    )


# --- 7 ---------------------------------------------------------------------------

def test_7_behavioral_reductions(tmp_path):
    ff = load_scenario(SCENARIOS / "free_flow.json")
    loop = ClosedLoop(ff).run(ff.steps)
    max_r2s = max(r.state.r2s_vehh for r in loop.steps_log)
    no_discount = all(np.all(g.context.p_hat >= max(p.p_bar for p in g.cohort)) for g in loop.games if g.cohort)
    ok_a = max_r2s == 0.0 and no_discount and len(loop.ledger.vehicles) > 0

    wave = load_scenario(SCENARIOS / "congestion_wave.json").replace(penetration=0.0)
    a = io.run(wave, tmp_path / "loop", steps=120)
    b = io.run(wave, tmp_path / "ctm", steps=120, mode="ctm-only")
    ok_b = (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()

    mc = load_scenario(SCENARIOS / "must_charge.json")
    loop = ClosedLoop(mc).run(mc.steps)
    W = mc.game.half_width
    low = [v for v in loop.ledger.vehicles if v.params.x0 < v.params.x_ref]
    good = [v for v in low if v.stops and v.strategy.x[v.strategy.entry_time(W)] >= v.params.x_ref - 1e-12]
    ok_c = len(low) > 0 and len(good) == len(low)

    report(
        7,
        ok_a and ok_b and ok_c,
        f"(a) max r2s {max_r2s} {'ok' if ok_a else 'bad'}; (b) p_ev=0 trajectory {'identical' if ok_b else 'differs'}; "
        f"(c) {len(good)}/{len(low)} low-charge vehicles stop and leave at the reference",
    )


# --- 8 ---------------------------------------------------------------------------

def test_8_policy_direction():
    sc = load_scenario(SCENARIOS / "congestion_wave.json")
    base = run_ctm_only(sc, sc.steps)
    congested = [r.k // sc.game.subsample for r in base if downstream_delay(sc.cells, r.speeds) > 1e-6]
    window = range(min(congested), max(congested) + 1)
    rows = []
    ok = True
    for seed in range(5):
        res = {}
        for beta1 in (0.0, 1.0):
            loop = ClosedLoop(sc.replace(pricing__beta1=beta1), seed=seed).run(sc.steps)
            res[beta1] = (loop.stoppers(window), loop.total_delay_h())
        ok &= res[1.0][0] >= res[0.0][0] and res[1.0][1] <= res[0.0][1]
        rows.append(f"seed {seed}: stoppers {res[0.0][0]}->{res[1.0][0]}, delay {res[0.0][1]:.4f}->{res[1.0][1]:.4f} h")
    report(8, ok, f"window {window.start}..{window.stop - 1}; " + "; ".join(rows))


# --- 9 ---------------------------------------------------------------------------

def _digest(directory: Path) -> dict[str, str]:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(directory.iterdir())}


def test_9_determinism(tmp_path):
    sc = load_scenario(SCENARIOS / "congestion_wave.json")
    same = True
    for mode in ("closed-loop", "single-game", "ctm-only"):
        a = io.run(sc, tmp_path / f"{mode}-a", seed=11, steps=120, mode=mode)
        b = io.run(sc, tmp_path / f"{mode}-b", seed=11, steps=120, mode=mode)
        same &= _digest(a) == _digest(b)
    report(9, same, "closed-loop, single-game and ctm-only directories byte-identical across repeated runs")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
