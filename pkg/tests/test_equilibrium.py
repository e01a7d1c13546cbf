"""Tests for Nash solvers, best responses and incentive diagnostics."""

import itertools
import math

import numpy as np
import pytest

from collusion_lab.equilibrium import (
    best_response_price,
    cournot_aggregate_quantity,
    cournot_best_response,
    cournot_best_response_profit,
    cournot_nash_quantities,
    foc_residuals,
    grid_best_response,
    monopoly_prices,
    nash_prices,
    price_incentive_direction,
    quantity_incentive_direction,
    quantity_incentive_margin,
)
from collusion_lab.errors import UnsupportedParametersError
from collusion_lab.market import CournotParams, MarketParams, logit_demand, profit


class TestNashPrices:
    def test_symmetric_baseline(self, params):
        """Static Nash prices of the baseline market are about 1.473."""
        solution = nash_prices(params)
        np.testing.assert_allclose(solution.prices, [1.473, 1.473], atol=0.005)
        assert solution.max_residual < 1e-9

    def test_symmetric_sellers_get_symmetric_prices(self, params):
        prices = nash_prices(params).prices
        assert prices[0] == pytest.approx(prices[1], abs=1e-12)

    def test_heterogeneous_costs(self):
        solution = nash_prices(MarketParams(c=(1.0, 1.2)))
        np.testing.assert_allclose(solution.prices, [1.5330, 1.6100], atol=0.005)

    def test_residuals_vanish_at_solution(self, params):
        prices = nash_prices(params).prices
        assert np.max(np.abs(foc_residuals(prices, params))) < 1e-9

    def test_three_sellers(self):
        params = MarketParams(a=(2.0, 2.0, 2.0), c=(1.0, 1.0, 1.0))
        solution = nash_prices(params)
        assert solution.max_residual < 1e-9
        assert np.ptp(solution.prices) < 1e-9


class TestBestResponse:
    def test_fixed_point_at_nash(self, params):
        p_star = nash_prices(params).prices
        assert best_response_price([p_star[1]], params, 0) == pytest.approx(p_star[0], abs=1e-9)

    def test_undercuts_collusive_price(self, params):
        """Against 1.6886 the best response is strictly lower."""
        assert best_response_price([1.6886], params, 0) < 1.6886

    def test_absent_opponent_gives_monopoly_identity(self, params):
        price = best_response_price([math.inf], params, 0)
        share = 1.0 / (1.0 + math.exp(-(2.0 - price) / params.mu))
        assert price == pytest.approx(1.0 + params.mu / (1.0 - share), abs=1e-10)

    def test_rejects_wrong_opponent_count(self, params):
        with pytest.raises(ValueError, match="Expected 1 opponent prices"):
            best_response_price([1.5, 1.5], params, 0)

    def test_rejects_nan(self, params):
        with pytest.raises(ValueError, match="Invalid opponent prices"):
            best_response_price([math.nan], params, 0)


class TestPriceIncentiveDirection:
    def test_zero_at_nash(self, params):
        p_star = nash_prices(params).prices
        assert price_incentive_direction(p_star, params, 0) == 0
        assert price_incentive_direction(p_star, params, 1) == 0

    def test_above_nash_every_seller_wants_to_cut(self, params):
        p = nash_prices(params).prices + 0.05
        assert price_incentive_direction(p, params, 0) == -1
        assert price_incentive_direction(p, params, 1) == -1

    def test_below_nash_sellers_want_to_raise(self, params):
        p = nash_prices(params).prices - 0.05
        assert price_incentive_direction(p, params, 0) == 1


class TestEquilibriumProperties:
    def test_fixed_point_identity_on_random_markets(self):
        rng = np.random.default_rng(21)
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(2, 4))
            params = MarketParams(
                a=tuple(rng.uniform(1.5, 2.5, n)),
                c=tuple(rng.uniform(0.5, 1.5, n)),
                a0=float(rng.uniform(-0.5, 0.5)),
                mu=float(rng.uniform(0.1, 0.5)),
            )
            p = nash_prices(params).prices
            shares = logit_demand(p, params).shares
            identity = np.asarray(params.c) + params.mu / (1.0 - shares)
            worst = max(worst, float(np.max(np.abs(p - identity))))
            for i in range(n):
                assert best_response_price(np.delete(p, i), params, i) == pytest.approx(p[i], abs=1e-8)
        assert worst <= 1e-8

    def test_above_nash_some_seller_wants_to_cut(self, params):
        p_star = nash_prices(params).prices
        rng = np.random.default_rng(22)
        checked = 0
        for offset in rng.uniform(-0.4, 0.4, size=(1_000, 2)):
            if offset.max() <= 1e-3:
                continue
            p = p_star + offset
            assert any(price_incentive_direction(p, params, i) == -1 for i in range(2))
            checked += 1
        assert checked > 500

    def test_below_nash_some_seller_wants_to_raise(self, params):
        p_star = nash_prices(params).prices
        rng = np.random.default_rng(23)
        checked = 0
        for offset in rng.uniform(-0.4, 0.4, size=(1_000, 2)):
            if offset.min() >= -1e-3:
                continue
            p = p_star + offset
            assert any(price_incentive_direction(p, params, i) == 1 for i in range(2))
            checked += 1
        assert checked > 500

    def test_best_response_matches_dense_grid(self, params):
        """Grid search at 1e-4 resolution lands within one cell of the solver."""
        rng = np.random.default_rng(24)
        candidates = np.arange(1.0, 4.0, 1e-4)
        for opponent in rng.uniform(1.0, 2.5, 100):
            own = np.exp((params.a[0] - candidates) / params.mu)
            other = math.exp((params.a[1] - opponent) / params.mu)
            shares = own / (own + other + math.exp(params.a0))
            oracle = candidates[np.argmax((candidates - params.c[0]) * shares)]
            assert abs(best_response_price([opponent], params, 0) - oracle) <= 1.0001e-4

    def test_quantity_directions_on_whole_grid(self, cournot):
        """Below the Nash total someone wants to expand; above it someone wants to cut."""
        qgrid = np.linspace(0.0, 9.5, 20)
        total_nash = cournot_aggregate_quantity(cournot)
        below = above = 0
        for q in itertools.product(qgrid, repeat=2):
            total = sum(q)
            directions = [quantity_incentive_direction(q, cournot, i) for i in range(2)]
            if total < total_nash - 1e-12:
                assert 1 in directions
                below += 1
            elif total > total_nash + 1e-12:
                assert -1 in directions
                above += 1
        assert below + above == 400 - 13


class TestMonopolyPrices:
    def test_above_nash(self, params):
        monopoly = monopoly_prices(params)
        assert np.all(monopoly > nash_prices(params).prices)

    def test_beats_nash_joint_profit(self, params):
        monopoly = monopoly_prices(params)
        nash = nash_prices(params).prices
        joint = profit(monopoly, params, 0) + profit(monopoly, params, 1)
        assert joint > profit(nash, params, 0) + profit(nash, params, 1)


class TestCournot:
    def test_symmetric_equilibrium(self, cournot):
        np.testing.assert_allclose(cournot_nash_quantities(cournot), [3.0, 3.0])

    def test_asymmetric_equilibrium(self):
        q = cournot_nash_quantities(CournotParams(c=(1.0, 2.0)))
        np.testing.assert_allclose(q, [10 / 3, 7 / 3])

    def test_corner_solution_rejected(self):
        with pytest.raises(UnsupportedParametersError, match="corner"):
            cournot_nash_quantities(CournotParams(c=(1.0, 9.5)))

    def test_aggregate(self, cournot):
        assert cournot_aggregate_quantity(cournot) == pytest.approx(6.0)

    def test_margin_zero_at_nash(self, cournot):
        q = cournot_nash_quantities(cournot)
        assert quantity_incentive_direction(q, cournot, 0) == 0
        assert quantity_incentive_direction(q, cournot, 1) == 0

    def test_below_nash_total_some_seller_expands(self, cournot):
        q = [2.0, 3.0]
        assert any(quantity_incentive_direction(q, cournot, i) == 1 for i in range(2))

    def test_misallocated_split_margin_equals_shortfall(self, cournot):
        """Nash total, seller 0 short by 0.5: its margin is exactly 0.5."""
        assert quantity_incentive_margin([2.5, 3.5], cournot, 0) == pytest.approx(0.5)
        assert quantity_incentive_direction([2.5, 3.5], cournot, 0) == 1

    def test_best_response(self, cournot):
        assert cournot_best_response([2.5, 3.5], cournot, 0) == pytest.approx(2.75)
        assert cournot_best_response_profit([2.5, 3.5], cournot, 0) == pytest.approx(7.5625)

    def test_best_response_floors_at_zero(self, cournot):
        assert cournot_best_response([0.0, 12.0], cournot, 0) == 0.0


class TestGridBestResponse:
    def test_picks_highest_payoff(self):
        values = np.array([0.0, 1.0, 2.0, 3.0])
        best, payoff = grid_best_response(values, [0.0, 0.0], 0, lambda q, i: -(q[i] - 2.0) ** 2)
        assert best == 2
        assert payoff == 0.0

    def test_lowest_index_wins_ties(self):
        values = np.array([0.0, 1.0, 2.0])
        best, _ = grid_best_response(values, [0.0, 0.0], 1, lambda q, i: 1.0)
        assert best == 0
