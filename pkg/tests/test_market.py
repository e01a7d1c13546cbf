"""Tests for demand, profit and the price grid."""

import math

import numpy as np
import pytest

from collusion_lab.market import (
    CournotParams,
    MarketParams,
    PriceGrid,
    cournot_price,
    cournot_profit,
    cournot_profits,
    logit_demand,
    multiplatform_demand,
    multiplatform_profit,
    profit,
    profits,
)


class TestMarketParams:
    def test_defaults(self):
        """Baseline primitives."""
        params = MarketParams()
        assert params.a == (2.0, 2.0)
        assert params.c == (1.0, 1.0)
        assert params.n_sellers == 2

    def test_rejects_nonpositive_mu(self):
        with pytest.raises(ValueError, match="mu must be positive"):
            MarketParams(mu=0.0)

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError, match="must match"):
            MarketParams(a=(2.0, 2.0), c=(1.0,))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            MarketParams(a0=math.inf)

    def test_outside_exponent_convention(self):
        """exp(a0) by default, exp(a0/mu) when scaled."""
        assert MarketParams(a0=0.5).outside_exponent == 0.5
        assert MarketParams(a0=0.5, outside_scaled_by_mu=True).outside_exponent == pytest.approx(2.0)


class TestLogitDemand:
    def test_symmetric_prices_give_equal_shares(self, params):
        shares = logit_demand([1.7, 1.7], params).shares
        assert shares[0] == shares[1]

    def test_shares_sum_to_one(self, params):
        result = logit_demand([1.2, 1.9], params)
        assert result.shares.sum() + result.outside_share == pytest.approx(1.0)

    def test_equal_utilities_split_evenly(self, params):
        """At p = a every exponent is zero, so all three options get a third."""
        result = logit_demand([2.0, 2.0], params)
        np.testing.assert_allclose(result.shares, [1 / 3, 1 / 3])
        assert result.outside_share == pytest.approx(1 / 3)

    def test_share_at_nash_matches_foc_identity(self, params):
        """D = 1 - mu / (p* - c) at the symmetric equilibrium."""
        shares = logit_demand([1.473, 1.473], params).shares
        assert shares[0] == pytest.approx(0.4715, abs=5e-4)

    def test_large_exponents_do_not_overflow(self):
        params = MarketParams(mu=1e-3)
        shares = logit_demand([1.0, 1.0], params).shares
        assert np.all(np.isfinite(shares))
        np.testing.assert_allclose(shares, [0.5, 0.5])

    def test_rejects_non_finite_prices(self, params):
        with pytest.raises(ValueError, match="finite"):
            logit_demand([1.5, math.nan], params)

    def test_rejects_wrong_length(self, params):
        with pytest.raises(ValueError, match="Expected 2 prices"):
            logit_demand([1.5, 1.5, 1.5], params)


class TestDemandProperties:
    def test_normalisation_on_random_prices(self):
        rng = np.random.default_rng(11)
        params = MarketParams(a=(2.0, 1.8, 2.3), c=(1.0, 0.9, 1.2), a0=0.3, mu=0.2)
        worst = 0.0
        for prices in rng.uniform(0.5, 4.0, size=(10_000, 3)):
            result = logit_demand(prices, params)
            worst = max(worst, abs(result.shares.sum() + result.outside_share - 1.0))
        assert worst <= 1e-12

    def test_own_price_lowers_own_share_and_raises_the_others(self, params):
        rng = np.random.default_rng(12)
        for prices in rng.uniform(1.0, 2.5, size=(1_000, 2)):
            base = logit_demand(prices, params).shares
            for i in range(2):
                bumped = prices.copy()
                bumped[i] += 0.01
                shares = logit_demand(bumped, params).shares
                assert shares[i] < base[i]
                assert shares[1 - i] > base[1 - i]


class TestProfit:
    def test_zero_margin(self, params):
        assert profit([1.0, 1.5], params, 0) == 0.0

    def test_baseline_profit(self, params):
        assert profit([1.473, 1.473], params, 0) == pytest.approx(0.223, abs=1e-3)

    def test_profits_vector_matches_scalar(self, params):
        prices = [1.4, 1.8]
        vector = profits(prices, params)
        assert vector[0] == pytest.approx(profit(prices, params, 0))
        assert vector[1] == pytest.approx(profit(prices, params, 1))

    def test_rejects_bad_seller(self, params):
        with pytest.raises(ValueError, match="out of range"):
            profit([1.5, 1.5], params, 2)


class TestMultiplatformDemand:
    def test_single_platform_matches_logit(self, params):
        shares, outside = multiplatform_demand([[1.4], [1.8]], params)
        single = logit_demand([1.4, 1.8], params)
        np.testing.assert_allclose(shares[:, 0], single.shares)
        assert outside == pytest.approx(single.outside_share)

    def test_equal_platform_prices_give_equal_shares(self, params):
        shares, _ = multiplatform_demand([[1.5, 1.5], [1.7, 1.7]], params)
        assert shares[0, 0] == pytest.approx(shares[0, 1])
        assert shares[1, 0] == pytest.approx(shares[1, 1])

    def test_duplicate_platform_raises_total_share(self, params):
        single = logit_demand([1.5, 1.5], params).shares[0]
        shares, _ = multiplatform_demand([[1.5, 1.5], [1.5, 1.5]], params)
        assert shares[0].sum() > single

    def test_profit_sums_platforms(self, params):
        prices = [[1.5, 1.6], [1.7, 1.7]]
        shares, _ = multiplatform_demand(prices, params)
        expected = 0.5 * shares[0, 0] + 0.6 * shares[0, 1]
        assert multiplatform_profit(prices, params, 0) == pytest.approx(expected)

    def test_rejects_bad_shape(self, params):
        with pytest.raises(ValueError, match="price matrix"):
            multiplatform_demand([1.5, 1.5], params)


class TestPriceGrid:
    def test_endpoints(self, grid):
        assert grid.prices[0] == 1.0
        assert grid.prices[-1] == pytest.approx(2.1)
        assert len(grid.prices) == 15

    def test_index_of_grid_point(self, grid):
        assert grid.index_of(float(grid.prices[6])) == 6

    def test_index_of_off_grid_raises(self, grid):
        with pytest.raises(ValueError, match="not a grid point"):
            grid.index_of(1.05)

    def test_nearest_index(self, grid):
        assert grid.nearest_index(1.473) == 6

    def test_prices_are_read_only(self, grid):
        with pytest.raises(ValueError):
            grid.prices[0] = 0.0

    def test_rejects_single_point(self):
        with pytest.raises(ValueError, match="at least 2 points"):
            PriceGrid(m=1)


class TestCournot:
    def test_zero_quantities_price_is_market_size(self, cournot):
        assert cournot_price([0.0, 0.0], cournot) == 10.0

    def test_price(self, cournot):
        assert cournot_price([3.0, 3.0], cournot) == 4.0

    def test_profit(self, cournot):
        assert cournot_profit([3.0, 3.0], cournot, 0) == 9.0
        assert cournot_profit([0.0, 3.0], cournot, 0) == 0.0

    def test_profits_vector(self, cournot):
        np.testing.assert_allclose(cournot_profits([2.5, 3.5], cournot), [7.5, 10.5])

    def test_rejects_negative_quantity(self, cournot):
        with pytest.raises(ValueError, match="non-negative"):
            cournot_price([-1.0, 3.0], cournot)

    def test_rejects_market_below_cost(self):
        with pytest.raises(ValueError, match="must exceed every cost"):
            CournotParams(Q=1.0, c=(1.0, 1.0))
