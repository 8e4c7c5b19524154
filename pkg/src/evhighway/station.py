"""Charging-station bookkeeping: plugs, FIFO waiting order, committed plans.

Every vehicle that finished a game is stored with its decision interval and
its strategy over the horizon that started there. Aggregates seen by later
cohorts are sums of those strategies re-indexed on absolute game intervals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:
    from .strategy import Strategy, VehicleParams


@dataclass(frozen=True)
class StationConfig:
    plug_count: int
    max_energy_per_interval: float
    min_charge_intervals: int
    u_min: float
    u_max_per_vehicle: float

    def __post_init__(self) -> None:
        problems = self.validation_errors()
        if problems:
            raise ValueError("; ".join(problems))

    def validation_errors(self, prefix: str = "") -> list[str]:
        errors = []
        if not (isinstance(self.plug_count, int) and self.plug_count >= 1):
            errors.append(f"{prefix}plug_count must be a positive integer")
        if not (isinstance(self.min_charge_intervals, int) and self.min_charge_intervals >= 1):
            errors.append(f"{prefix}min_charge_intervals must be an integer >= 1")
        for name in ("max_energy_per_interval", "u_min", "u_max_per_vehicle"):
            if not getattr(self, name) > 0:
                errors.append(f"{prefix}{name} must be positive")
        if self.u_min > self.u_max_per_vehicle:
            errors.append(f"{prefix}u_min must not exceed u_max_per_vehicle")
        return errors


@dataclass
class CommittedAggregates:
    """Sums of already committed plans over the intervals ``start .. start+len-1``."""

    start: int
    theta_old: np.ndarray
    u_old: np.ndarray
    delta_old: np.ndarray


@dataclass
class CommittedVehicle:
    vehicle_id: int
    decision_interval: int
    strategy: "Strategy"
    params: "VehicleParams"
    estimated_prices: np.ndarray | None = None
    half_width: int = 0

    def at(self, name: str, t: int) -> float:
        """Value of ``u``, ``delta`` or ``theta`` at absolute interval ``t`` (0 outside the plan)."""
        arr = getattr(self.strategy, name)
        p = t - self.decision_interval
        if 0 <= p < len(arr):
            return arr[p]
        return 0

    @property
    def stops(self) -> bool:
        return self.strategy.stops

    @property
    def exit_interval(self) -> int:
        return self.decision_interval + self.strategy.entry_time(self.half_width)

    @property
    def charge_start(self) -> int | None:
        idx = np.flatnonzero(self.strategy.delta)
        return None if idx.size == 0 else self.decision_interval + int(idx[0])

    @property
    def charge_end(self) -> int | None:
        idx = np.flatnonzero(self.strategy.delta)
        return None if idx.size == 0 else self.decision_interval + int(idx[-1])


@dataclass
class StationLedger:
    half_width: int
    vehicles: list[CommittedVehicle] = field(default_factory=list)

    def commit(
        self,
        k: int,
        strategies: Sequence["Strategy"],
        params: Sequence["VehicleParams"],
        estimated_prices: np.ndarray | None = None,
    ) -> list[int]:
        ids = []
        for s, p in zip(strategies, params):
            vid = len(self.vehicles)
            self.vehicles.append(
                CommittedVehicle(vid, k, s, p, estimated_prices, half_width=self.half_width)
            )
            ids.append(vid)
        return ids

    def before(self, k: int) -> list[CommittedVehicle]:
        return [v for v in self.vehicles if v.decision_interval < k]

    def total(self, name: str, t: int) -> float:
        return float(sum(v.at(name, t) for v in self.vehicles))

    def occupants(self, k: int) -> list[CommittedVehicle]:
        """Stoppers inside the station during interval ``k`` (entered, not yet exited)."""
        return [v for v in self.vehicles if v.stops and v.decision_interval <= k < v.exit_interval]

    def queue_length(self, k: int) -> int:
        return sum(1 for v in self.occupants(k) if v.at("delta", k) == 0)

    def plugs_busy(self, k: int) -> int:
        return int(self.total("delta", k))

    def fifo_start(self, k: int) -> int:
        """Earliest relative interval at which a vehicle entering at ``k`` may start charging.

        Vehicles that entered before ``k`` and have not started charging yet
        keep priority: nobody new starts before the latest of their starts.
        """
        latest = 0
        for v in self.before(k):
            start = v.charge_start
            if v.stops and start is not None and start >= k:
                latest = max(latest, start - k)
        return latest


def fold_commitments(ledger: StationLedger, k: int, horizon_length: int) -> CommittedAggregates:
    """Aggregate every plan committed before ``k`` over ``k .. k+horizon_length-1``."""
    theta = np.zeros(horizon_length)
    u = np.zeros(horizon_length)
    delta = np.zeros(horizon_length)
    for v in ledger.before(k):
        off = v.decision_interval - k
        s = v.strategy
        for p in range(len(s.theta)):
            t = p + off
            if 0 <= t < horizon_length:
                theta[t] += s.theta[p]
                u[t] += s.u[p]
                delta[t] += s.delta[p]
    return CommittedAggregates(k, theta, u, delta)


def extract_s2r(ledger: StationLedger, k: int, W: int, l: int, T: float) -> float:
    """Station-to-road flow [veh/h] of game interval ``k``; CTM step ``T`` [h], subsampling ``l``.

    A committed vehicle exits at ``k`` when its entry pulse covers both
    ``k-W`` and ``k+W``; initial (non-stop) pulses are too short to qualify.
    """
    exiting = sum(v.at("theta", k - W) * v.at("theta", k + W) for v in ledger.before(k))
    return exiting / (l * T)


def extract_r2s(strategies: Sequence["Strategy"], n: int, T: float) -> float:
    """Road-to-station flow [veh/h]: vehicles of the cohort whose pulse does not start at ``k``."""
    return (n - sum(int(s.theta[0]) for s in strategies)) / T
