"""Tabular Q-learning agent.

Values start at zero. Exploration is epsilon-greedy with
epsilon = exp(-beta * iteration), where ``iteration`` is the agent's global
training counter. Greedy choices break ties toward the lowest action index.
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from collusion_lab import kernels


@dataclass(frozen=True)
class AgentConfig:
    """Learning hyperparameters.

    Attributes:
        alpha: Learning rate in (0, 1]
        beta: Exploration decay rate (>= 0)
        delta: Discount factor in [0, 1)
        seed: Optional seed for standalone use; simulations derive streams
            from the experiment's base seed instead
        convergence_threshold: Iterations without an argmax change that
            count as converged
    """

    alpha: float = 0.15
    beta: float = 4e-6
    delta: float = 0.95
    seed: int | None = None
    convergence_threshold: int = 100_000

    def __post_init__(self) -> None:
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")
        if not 0 <= self.delta < 1:
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")
        if self.convergence_threshold < 1:
            raise ValueError(
                f"convergence_threshold must be positive, got {self.convergence_threshold}"
            )

    def epsilon(self, iteration: int) -> float:
        return math.exp(-self.beta * iteration)


class QTable:
    """State x action value table with a cached per-state argmax.

    Attributes:
        values: Q(s, a), float64
        argmax_cache: Greedy action per state (lowest index on ties)
        last_change_iteration: Iteration of the most recent argmax change
    """

    def __init__(self, n_states: int, n_actions: int):
        if n_states < 1 or n_actions < 1:
            raise ValueError(f"Invalid table shape: {n_states} x {n_actions}")
        self.values = np.zeros((n_states, n_actions), dtype=np.float64)
        self.argmax_cache = np.zeros(n_states, dtype=np.int64)
        self.last_change_iteration = 0

    @property
    def n_states(self) -> int:
        return self.values.shape[0]

    @property
    def n_actions(self) -> int:
        return self.values.shape[1]

    def greedy_action(self, state: int) -> int:
        return int(self.argmax_cache[state])

    def copy(self) -> "QTable":
        clone = QTable(self.n_states, self.n_actions)
        clone.values[:] = self.values
        clone.argmax_cache[:] = self.argmax_cache
        clone.last_change_iteration = self.last_change_iteration
        return clone

    def save(self, path: str | Path) -> None:
        """Write a snapshot with ``numpy.savez``."""
        np.savez(
            path,
            values=self.values,
            argmax_cache=self.argmax_cache,
            last_change_iteration=np.int64(self.last_change_iteration),
        )

    @classmethod
    def load(cls, path: str | Path) -> "QTable":
        with np.load(path) as data:
            values = data["values"]
            table = cls(*values.shape)
            table.values[:] = values
            table.argmax_cache[:] = data["argmax_cache"]
            table.last_change_iteration = int(data["last_change_iteration"])
        return table

    def _check_state(self, state: int) -> None:
        if not 0 <= state < self.n_states:
            raise ValueError(f"State {state} out of range [0, {self.n_states})")

    def _check_action(self, action: int) -> None:
        if not 0 <= action < self.n_actions:
            raise ValueError(f"Action {action} out of range [0, {self.n_actions})")


def choose_action(
    table: QTable,
    state: int,
    iteration: int,
    rng: np.random.Generator,
    config: AgentConfig,
) -> int:
    """Epsilon-greedy action for ``state`` at ``iteration``."""
    table._check_state(state)
    if rng.random() < config.epsilon(iteration):
        return int(rng.integers(table.n_actions))
    return table.greedy_action(state)


def update(
    table: QTable,
    state: int,
    action: int,
    reward: float,
    next_state: int,
    config: AgentConfig,
    iteration: int = 0,
) -> QTable:
    """Q(s,a) <- (1 - alpha) Q(s,a) + alpha (reward + delta max Q(s', .)).

    Raises:
        ValueError: If an index is out of range or ``reward`` is not finite
    """
    table._check_state(state)
    table._check_state(next_state)
    table._check_action(action)
    if not math.isfinite(reward):
        raise ValueError(f"Reward must be finite, got {reward}")
    changed = kernels.q_update(
        table.values, table.argmax_cache, state, action, reward, next_state,
        config.alpha, config.delta,
    )
    if changed:
        table.last_change_iteration = iteration
    return table


def is_converged(table: QTable, iteration: int, threshold: int = 100_000) -> bool:
    return iteration - table.last_change_iteration >= threshold
