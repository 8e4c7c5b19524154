"""Energy price at the station and the horizon-long estimate sent to each cohort.

The realized price drops with the congestion on the cells downstream of the
station (cells 2..N), so charging during a jam is cheaper. The estimate uses
the predicted delays of a no-stop rollout and per-offset coefficients
``beta0``, ``beta1`` that absorb the, unknown in advance, EV load term.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ctm import SPEED_FLOOR_KMH, CellParams

logger = logging.getLogger(__name__)


@dataclass
class PriceCoefficients:
    c1: float
    c2: float
    c3: float
    beta0: np.ndarray
    beta1: np.ndarray
    price_floor: float = -np.inf

    def __post_init__(self) -> None:
        if not (self.c1 > 0 and self.c2 > 0 and self.c3 > 0):
            raise ValueError("c1, c2 and c3 must be positive")
        self.beta0 = np.asarray(self.beta0, dtype=float)
        self.beta1 = np.asarray(self.beta1, dtype=float)
        if self.beta0.shape != self.beta1.shape or self.beta0.ndim != 1:
            raise ValueError("beta0 and beta1 must be vectors of equal length")

    def with_betas(self, beta0, beta1) -> "PriceCoefficients":
        return PriceCoefficients(self.c1, self.c2, self.c3, beta0, beta1, self.price_floor)


def realized_delay(params: CellParams, v: float, speed_floor: float = SPEED_FLOOR_KMH) -> float:
    """Extra hours needed to cross the cell at speed ``v`` compared with free flow."""
    v = max(v, speed_floor)
    return max(0.0, params.length_km / v - params.length_km / params.free_flow_speed_kmh)


def downstream_delay(params: Sequence[CellParams], cell_speeds: Sequence[float]) -> float:
    """Sum of realized delays over cells 2..N."""
    return float(sum(realized_delay(p, v) for p, v in zip(params[1:], cell_speeds[1:])))


def spot_price(coeffs: PriceCoefficients, d: float, u_pev_total: float, delays: Sequence[float]) -> float:
    """Price applied to the energy bought during the current interval.

    ``delays`` are the realized delays of cells 2..N.
    """
    p = coeffs.c1 * d + coeffs.c2 * u_pev_total - coeffs.c3 * float(np.sum(delays))
    return max(p, coeffs.price_floor)


def estimated_price(coeffs: PriceCoefficients, d, delta_hat_sum) -> np.ndarray:
    """Broadcast estimate over the horizon from base demand and predicted delay sums."""
    d = np.asarray(d, dtype=float)
    dh = np.asarray(delta_hat_sum, dtype=float)
    H = len(d)
    if dh.shape != (H,):
        raise ValueError("d and delta_hat_sum must have the same length")
    if len(coeffs.beta0) < H:
        raise ValueError(f"beta vectors cover {len(coeffs.beta0)} offsets, horizon needs {H}")
    p = coeffs.c1 * d - (coeffs.beta0[:H] + coeffs.beta1[:H] * dh)
    return np.maximum(p, coeffs.price_floor)


def fit_betas(
    realized: Sequence[float],
    delta_hat_sums: Sequence[float],
    base_demand: Sequence[float],
    c1: float,
    rank_tol: float = 1e-12,
) -> tuple[float, float]:
    """Least-squares fit of ``c1 d - p`` against ``(1, sum of predicted delays)`` for one offset.

    Records are aligned triples (realized price, predicted delay sum, base
    demand) for the same absolute interval. With no data both coefficients
    are 0; with constant predicted delay the slope is not identifiable and is
    set to 0 while the offset takes the mean.
    """
    p = np.asarray(realized, dtype=float)
    dh = np.asarray(delta_hat_sums, dtype=float)
    d = np.asarray(base_demand, dtype=float)
    if not (len(p) == len(dh) == len(d)):
        raise ValueError("history columns must have equal length")
    if len(p) == 0:
        return 0.0, 0.0
    y = c1 * d - p
    if len(p) < 2 or np.ptp(dh) <= rank_tol * max(1.0, float(np.max(np.abs(dh)))):
        logger.debug("degenerate price history (%d records), slope set to 0", len(p))
        return float(np.mean(y)), 0.0
    A = np.column_stack([np.ones_like(dh), dh])
    (b0, b1), *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(b0), float(b1)


def fit_beta_vectors(history: Sequence[Sequence[tuple[float, float, float]]], c1: float) -> tuple[np.ndarray, np.ndarray]:
    """Fit one ``(beta0, beta1)`` pair per horizon offset; ``history[p]`` lists the records of offset ``p``."""
    b0 = np.zeros(len(history))
    b1 = np.zeros(len(history))
    for p, records in enumerate(history):
        if records:
            prices, dh, d = zip(*records)
            b0[p], b1[p] = fit_betas(prices, dh, d, c1)
    return b0, b1
