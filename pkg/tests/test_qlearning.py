"""Tests for the tabular Q-learning agent."""

import math

import numpy as np
import pytest

from collusion_lab.qlearning import AgentConfig, QTable, choose_action, is_converged, update


class TestAgentConfig:
    def test_defaults(self):
        config = AgentConfig()
        assert (config.alpha, config.beta, config.delta) == (0.15, 4e-6, 0.95)
        assert config.convergence_threshold == 100_000

    def test_epsilon_schedule(self):
        assert AgentConfig().epsilon(1_000_000) == pytest.approx(math.exp(-4), rel=1e-12)
        assert AgentConfig().epsilon(1_000_000) == pytest.approx(0.0183, abs=1e-4)

    def test_no_decay_explores_forever(self):
        assert AgentConfig(beta=0.0).epsilon(10**9) == 1.0

    @pytest.mark.parametrize(
        "kwargs, message",
        [
            ({"alpha": 0.0}, "alpha"),
            ({"beta": -1.0}, "beta"),
            ({"delta": 1.0}, "delta"),
            ({"convergence_threshold": 0}, "convergence_threshold"),
        ],
    )
    def test_rejects_invalid(self, kwargs, message):
        with pytest.raises(ValueError, match=message):
            AgentConfig(**kwargs)


class TestUpdate:
    def test_full_overwrite(self):
        table = QTable(3, 2)
        update(table, 0, 1, 0.7, 2, AgentConfig(alpha=1.0))
        assert table.values[0, 1] == pytest.approx(0.7)

    def test_bellman_step(self):
        """0.15 * (0.3 + 0.95 * 1.0) from a zero table."""
        table = QTable(3, 3)
        table.values[1, 2] = 1.0
        table.argmax_cache[1] = 2
        update(table, 0, 0, 0.3, 1, AgentConfig())
        assert table.values[0, 0] == pytest.approx(0.1875)

    def test_argmax_change_is_recorded(self):
        table = QTable(2, 3)
        update(table, 0, 2, 1.0, 1, AgentConfig(), iteration=42)
        assert table.greedy_action(0) == 2
        assert table.last_change_iteration == 42

    def test_no_argmax_change_keeps_counter(self):
        table = QTable(2, 3)
        update(table, 0, 0, 1.0, 1, AgentConfig(), iteration=5)
        assert table.last_change_iteration == 0

    def test_ties_break_low(self):
        table = QTable(1, 4)
        table.values[0] = [0.0, 1.0, 1.0, 0.5]
        update(table, 0, 3, 0.0, 0, AgentConfig(alpha=1.0, delta=0.0))
        assert table.greedy_action(0) == 1

    def test_rejects_non_finite_reward(self):
        with pytest.raises(ValueError, match="finite"):
            update(QTable(2, 2), 0, 0, math.nan, 1, AgentConfig())

    def test_rejects_out_of_range_state(self):
        with pytest.raises(ValueError, match="State 5 out of range"):
            update(QTable(2, 2), 5, 0, 0.0, 1, AgentConfig())


class TestUpdateProperties:
    @pytest.fixture
    def table(self):
        rng = np.random.default_rng(31)
        table = QTable(12, 5)
        table.values[:] = rng.normal(size=(12, 5))
        table.argmax_cache[:] = np.argmax(table.values, axis=1)
        return table

    def test_matches_bellman_oracle_on_random_transitions(self, table):
        rng = np.random.default_rng(32)
        config = AgentConfig(alpha=0.3, delta=0.9)
        worst = 0.0
        for _ in range(10_000):
            state, next_state = (int(s) for s in rng.integers(table.n_states, size=2))
            action = int(rng.integers(table.n_actions))
            reward = float(rng.normal())
            expected = (1 - config.alpha) * table.values[state, action] + config.alpha * (
                reward + config.delta * table.values[next_state].max()
            )
            update(table, state, action, reward, next_state, config)
            worst = max(worst, abs(table.values[state, action] - expected))
        assert worst <= 1e-12

    def test_argmax_cache_tracks_values(self, table):
        rng = np.random.default_rng(33)
        for iteration in range(1, 5_001):
            state, next_state = (int(s) for s in rng.integers(table.n_states, size=2))
            update(
                table, state, int(rng.integers(table.n_actions)), float(rng.normal(scale=3.0)),
                next_state, AgentConfig(), iteration=iteration,
            )
            assert table.argmax_cache[state] == np.argmax(table.values[state])
        np.testing.assert_array_equal(table.argmax_cache, np.argmax(table.values, axis=1))


class TestConvergence:
    def test_fresh_table_not_converged(self):
        assert not is_converged(QTable(2, 2), 0)

    def test_threshold_reached(self):
        assert is_converged(QTable(2, 2), 100_000)
        assert not is_converged(QTable(2, 2), 99_999)

    def test_flip_resets_counter(self):
        table = QTable(2, 3)
        update(table, 0, 1, 1.0, 1, AgentConfig(), iteration=500)
        assert not is_converged(table, 100_499)
        assert is_converged(table, 100_500)


class TestChooseAction:
    def test_greedy_when_epsilon_vanishes(self):
        table = QTable(1, 5)
        table.argmax_cache[0] = 3
        rng = np.random.Generator(np.random.PCG64(0))
        config = AgentConfig(beta=1.0)
        assert all(choose_action(table, 0, 10_000, rng, config) == 3 for _ in range(50))

    def test_uniform_when_epsilon_is_one(self):
        table = QTable(1, 3)
        rng = np.random.Generator(np.random.PCG64(1))
        config = AgentConfig(beta=0.0)
        counts = np.bincount([choose_action(table, 0, 0, rng, config) for _ in range(3000)], minlength=3)
        assert np.all(counts > 800)

    def test_same_seed_same_actions(self):
        table = QTable(1, 15)
        config = AgentConfig(beta=1e-3)
        first = [choose_action(table, 0, t, np.random.Generator(np.random.PCG64(9)), config) for t in range(20)]
        second = [choose_action(table, 0, t, np.random.Generator(np.random.PCG64(9)), config) for t in range(20)]
        assert first == second


class TestQTable:
    def test_snapshot_restores_table(self, tmp_path):
        table = QTable(4, 3)
        update(table, 2, 1, 0.5, 3, AgentConfig(), iteration=17)
        path = tmp_path / "agent.npz"
        table.save(path)
        loaded = QTable.load(path)
        np.testing.assert_array_equal(loaded.values, table.values)
        np.testing.assert_array_equal(loaded.argmax_cache, table.argmax_cache)
        assert loaded.last_change_iteration == 17

    def test_copy_is_independent(self):
        table = QTable(2, 2)
        clone = table.copy()
        clone.values[0, 0] = 1.0
        assert table.values[0, 0] == 0.0

    def test_rejects_empty_shape(self):
        with pytest.raises(ValueError, match="Invalid table shape"):
            QTable(0, 3)
