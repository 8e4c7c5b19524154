"""Realized and estimated prices, and the per-offset coefficient fit."""

import numpy as np
import pytest

from evhighway.ctm import CellParams
from evhighway.pricing import (
    PriceCoefficients,
    downstream_delay,
    estimated_price,
    fit_beta_vectors,
    fit_betas,
    realized_delay,
    spot_price,
)


def coeffs(b0=0.0, b1=0.0, H=3, c=(1.0, 1.0, 1.0), floor=-np.inf):
    return PriceCoefficients(*c, np.full(H, b0), np.full(H, b1), floor)


def test_realized_delay_examples():
    cell = CellParams(2.0, 100.0, 20.0, 2000.0, 200.0)
    assert realized_delay(cell, 100.0) == 0.0
    assert realized_delay(cell, 50.0) == pytest.approx(0.02)
    assert realized_delay(cell, 120.0) == 0.0
    # the speed floor keeps a standstill finite
    assert realized_delay(cell, 0.0) == pytest.approx(2.0 - 0.02)


def test_downstream_delay_skips_cell_one():
    cells = [CellParams(2.0, 100.0, 20.0, 2000.0, 200.0)] * 3
    assert downstream_delay(cells, [10.0, 50.0, 100.0]) == pytest.approx(0.02)


def test_spot_price_examples():
    assert spot_price(coeffs(), 0.0, 0.0, [0.0]) == 0.0
    assert spot_price(coeffs(), 10.0, 5.0, [1.5, 0.5]) == 13.0
    assert spot_price(coeffs(), 10.0, 5.0, [3.0]) < spot_price(coeffs(), 10.0, 5.0, [1.0])
    assert spot_price(coeffs(floor=0.0), 1.0, 0.0, [5.0]) == 0.0


def test_spot_price_is_monotone():
    c = coeffs(c=(0.3, 0.2, 0.7))
    base = spot_price(c, 4.0, 2.0, [0.1, 0.2])
    assert spot_price(c, 4.5, 2.0, [0.1, 0.2]) > base
    assert spot_price(c, 4.0, 2.5, [0.1, 0.2]) > base
    assert spot_price(c, 4.0, 2.0, [0.1, 0.3]) < base


def test_estimated_price_examples():
    d = np.array([10.0, 10.0, 10.0])
    assert estimated_price(coeffs(), d, np.array([0.3, 0.1, 0.0])).tolist() == [10.0, 10.0, 10.0]
    assert estimated_price(coeffs(1.0, 2.0), d, np.full(3, 0.5)).tolist() == [8.0, 8.0, 8.0]
    p = estimated_price(coeffs(0.0, 2.0), d, np.array([0.1, 0.2, 0.3]))
    assert np.all(np.diff(p) < 0)


def test_estimated_price_rejects_short_betas():
    with pytest.raises(ValueError):
        estimated_price(coeffs(H=2), np.ones(3), np.zeros(3))


def test_fit_recovers_generating_coefficients():
    rng = np.random.default_rng(3)
    c1, b0, b1 = 0.4, 0.7, 1.9
    dh = rng.uniform(0, 2, 30)
    d = rng.uniform(5, 15, 30)
    p = c1 * d - b0 - b1 * dh
    got = fit_betas(p, dh, d, c1)
    assert got == pytest.approx((b0, b1), abs=1e-9)


def test_fit_degenerate_and_empty():
    assert fit_betas([], [], [], 1.0) == (0.0, 0.0)
    b0, b1 = fit_betas([1.0, 3.0], [0.5, 0.5], [4.0, 4.0], 1.0)
    assert (b0, b1) == (2.0, 0.0)


def test_fit_per_offset():
    history = [[(8.0, 0.5, 10.0), (7.0, 1.0, 10.0)], []]
    b0, b1 = fit_beta_vectors(history, 1.0)
    assert b0.tolist() == pytest.approx([1.0, 0.0]) and b1.tolist() == pytest.approx([2.0, 0.0])
