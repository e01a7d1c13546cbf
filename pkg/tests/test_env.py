"""Tests for the pricing environment and the state codec."""

import itertools

import numpy as np
import pytest

from collusion_lab.env import AgentView, EnvState, PricingEnv, StateCodec, build_tables
from collusion_lab.market import PriceGrid, logit_demand, profits
from collusion_lab.mechanism import MechanismConfig, Phase, Variant


def admissible_views(m: int) -> list[AgentView]:
    """Every flag assignment AgentView accepts, over two sellers."""
    views = []
    for prices in itertools.product(range(m), repeat=2):
        for mech_first, first, mine, second in itertools.product([False, True], repeat=4):
            for index in [None, *range(m)]:
                try:
                    views.append(AgentView(prices, mech_first, first, mine, index, second))
                except ValueError:
                    pass
    return views


class TestStateCodec:
    def test_plain_state_count(self):
        assert StateCodec(15, 2, augmented=False).total_state_count == 225
        assert StateCodec(2, 2, augmented=False).total_state_count == 4

    def test_augmented_count_matches_enumeration(self):
        codec = StateCodec(15, 2, augmented=True)
        assert codec.total_state_count == len(admissible_views(15))

    def test_encoding_is_a_bijection(self):
        codec = StateCodec(4, 2, augmented=True)
        views = admissible_views(4)
        indices = sorted(codec.encode(v) for v in views)
        assert indices == list(range(codec.total_state_count))
        for view in views:
            assert codec.decode(codec.encode(view)) == view

    def test_base_index_orders_seller_zero_first(self):
        codec = StateCodec(15)
        assert codec.base_index((1, 0)) == 15
        assert codec.base_indices(15) == (1, 0)

    def test_plain_codec_rejects_flags(self):
        codec = StateCodec(15, augmented=False)
        with pytest.raises(ValueError, match="augmented codec"):
            codec.encode(AgentView((0, 0), mech_first_period=True))

    def test_rejects_out_of_range_price(self):
        with pytest.raises(ValueError, match="out of range"):
            StateCodec(3).base_index((0, 3))

    def test_view_rejects_impossible_flags(self):
        with pytest.raises(ValueError, match="Second drop cannot precede"):
            AgentView((0, 0), second_drop_occurred=True)


class TestBuildTables:
    def test_entries_match_market(self, params, grid):
        profit_table, quantity_table = build_tables(params, grid)
        assert profit_table.shape == (15, 15, 2)
        p = grid.prices[[3, 11]]
        np.testing.assert_allclose(profit_table[3, 11], profits(p, params))
        np.testing.assert_allclose(quantity_table[3, 11], logit_demand(p, params).shares)


class TestPricingEnv:
    def test_symmetric_prices_equal_rewards(self, params, grid):
        env = PricingEnv(params, grid)
        env.reset((6, 6))
        result = env.step((6, 6))
        assert result.rewards[0] == result.rewards[1]
        assert result.rewards[0] > 0
        assert result.phase is Phase.INACTIVE

    def test_step_before_reset(self, params, grid):
        env = PricingEnv(params, grid)
        with pytest.raises(RuntimeError, match="reset"):
            env.step((0, 0))

    def test_rejects_invalid_action(self, params, grid):
        env = PricingEnv(params, grid)
        with pytest.raises(ValueError, match="Invalid actions"):
            env.reset((0, 15))

    def test_held_prices_never_drop(self, params, grid):
        config = MechanismConfig(variant=Variant.PLATFORM_FULL, activation_period=2)
        env = PricingEnv(params, grid, mechanism=config)
        result = env.reset((9, 9))
        for _ in range(20):
            result = env.step((9, 9))
            assert not result.state.first_drop_occurred
        assert env.rule.ledger.cumulative_total == 0.0

    def test_baseline_flag_set_for_period_after_activation(self, params, grid):
        config = MechanismConfig(variant=Variant.PLATFORM_FULL, activation_period=2)
        env = PricingEnv(params, grid, mechanism=config)
        env.reset((9, 9))
        assert not env.step((9, 9)).state.mech_first_period
        assert env.step((9, 9)).state.mech_first_period
        assert not env.step((9, 9)).state.mech_first_period

    def test_scripted_two_stage_drop(self, params, grid):
        """Hold, hold, agent 0 cuts for a profit gain, agent 1 punishes."""
        config = MechanismConfig(
            variant=Variant.SIMPLIFIED_AI, activation_period=1, cost_estimate=params.c
        )
        env = PricingEnv(params, grid, mechanism=config)
        env.reset((10, 10))
        env.step((10, 10))
        env.step((10, 10))
        locked = env.step((8, 10))
        assert locked.state.first_drop_occurred
        assert locked.topups[0] == 0.0

        result = env.step((8, 6))
        assert result.state.second_drop_occurred
        assert result.topups[0] > 0
        assert result.rewards[0] == pytest.approx(locked.profits[0])
        assert result.rewards[1] == result.profits[1]

        views = [result.state.view(i) for i in range(2)]
        assert views[0].i_was_first_dropper
        assert views[0].first_drop_price_index == 8
        assert not views[1].i_was_first_dropper
        obs = env.observations()
        assert env.codec.decode(obs[0]) == views[0]

    def test_rejects_three_sellers(self, grid):
        from collusion_lab.market import MarketParams

        with pytest.raises(ValueError, match="two-seller"):
            PricingEnv(MarketParams(a=(2, 2, 2), c=(1, 1, 1)), grid)

    def test_env_state_view_defaults(self):
        view = EnvState(last_price_indices=(1, 2)).view(0)
        assert view == AgentView((1, 2))

    def test_small_grid(self, params):
        env = PricingEnv(params, PriceGrid(m=2))
        assert env.codec.total_state_count == 4


class TestPaymentConservation:
    """Every top-up the rule pays shows up once in rewards and once in the ledger."""

    def test_random_episodes(self, params, grid):
        config = MechanismConfig(variant=Variant.PLATFORM_FULL, activation_period=3)
        rng = np.random.default_rng(51)
        for _ in range(50):
            env = PricingEnv(params, grid, mechanism=config, episode_length=30)
            result = env.reset(rng.integers(grid.m, size=2))
            paid = result.topups @ result.quantities
            while result.period < env.episode_length - 1:
                result = env.step(rng.integers(grid.m, size=2))
                np.testing.assert_allclose(
                    result.rewards, result.profits + result.topups * result.quantities, atol=1e-12
                )
                assert np.all(result.topups >= 0)
                paid += result.topups @ result.quantities
            assert env.rule.ledger.cumulative_total == pytest.approx(paid, abs=1e-9)

    def test_scripted_drop_pays_through_ledger(self, params, grid):
        config = MechanismConfig(variant=Variant.PLATFORM_FULL, activation_period=1)
        env = PricingEnv(params, grid, mechanism=config)
        paid = 0.0
        for actions in [(10, 10), (10, 10), (10, 10), (8, 10), (8, 6), (8, 6)]:
            result = env.reset(actions) if env.period < 0 else env.step(actions)
            paid += result.topups @ result.quantities
        assert paid > 0
        assert env.rule.ledger.cumulative_total == pytest.approx(paid, abs=1e-9)

    def test_constant_prices_pay_nothing(self, params, grid):
        config = MechanismConfig(variant=Variant.PLATFORM_FULL, activation_period=2)
        env = PricingEnv(params, grid, mechanism=config)
        result = env.reset((7, 7))
        for _ in range(40):
            result = env.step((7, 7))
            assert np.all(result.topups == 0.0)
            np.testing.assert_array_equal(result.rewards, result.profits)
        assert len(env.rule.ledger) == 0
