import copy
import logging
import sys

import pytest


def base_scenario() -> dict:
    """Four short cells, a bottleneck at the end and a quick inflow pulse."""
    cell = {
        "length_km": 0.5,
        "free_flow_speed_kmh": 100,
        "congestion_wave_speed_kmh": 20,
        "max_capacity_vehh": 4000,
        "max_jam_density_vehkm": 200,
    }
    cells = [dict(cell) for _ in range(4)]
    cells[-1]["max_capacity_vehh"] = 3000
    return {
        "name": "test",
        "step_s": 15,
        "steps": 48,
        "seed": 3,
        "cells": cells,
        "initial_densities": [25, 25, 25, 25],
        "inflow_vehh": [[0, 2600], [12, 3800], [28, 2600]],
        "penetration": 0.1,
        "game": {"subsample": 4, "horizon": 8, "half_width": 1, "gamma": 0.005, "upsilon": 0.02, "epsilon": 1e-4},
        "station": {
            "plug_count": 4,
            "max_energy_per_interval": 3.0,
            "min_charge_intervals": 1,
            "u_min": 0.2,
            "u_max_per_vehicle": 0.8,
        },
        "pricing": {"c1": 0.01, "c2": 0.01, "c3": 1.0, "beta0": 0.0, "beta1": 1.0, "base_demand": 30},
        "vehicles": {
            "b": [0.015, 0.025],
            "x0": [0.2, 0.9],
            "x_ref": [0.15, 0.3],
            "alpha": [0.3, 0.9],
            "p_bar": [0.28, 0.34],
        },
    }


@pytest.fixture
def scenario_dict():
    return copy.deepcopy(base_scenario())


@pytest.fixture(autouse=True)
def _quiet_infeasibility_warnings(caplog):
    caplog.set_level(logging.ERROR, logger="evhighway")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
