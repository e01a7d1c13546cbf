"""The repeated pricing game as a finite-state environment.

An agent's state is the previous period's price indices (the base state)
combined with the public mechanism flags and its own first-dropper flags.
Only admissible flag combinations get an index:

    combo 0            no first drop, not the baseline period (also all
                       mechanism-off states)
    combo 1            no first drop, baseline period (tau + 1)
    combo 2 + S        first drop by someone else, second drop S
    combo 4 + 2k + S   own first drop at grid index k, second drop S

State index = combo * m**n + base index, with the base index ordering the
previous prices with seller 0 most significant.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from collusion_lab import kernels
from collusion_lab.market import MarketParams, PriceGrid, logit_demand, profits
from collusion_lab.mechanism import MechanismConfig, Phase, TwoStageRule


@dataclass(frozen=True)
class AgentView:
    """One agent's view of the environment state.

    Attributes:
        last_price_indices: Every seller's previous-period grid index
        mech_first_period: Current period is tau + 1 (baseline being set)
        first_drop_occurred: The rule has registered a first drop
        i_was_first_dropper: This agent was among the first droppers
        first_drop_price_index: This agent's grid index at tau1
        second_drop_occurred: The rule has registered a second drop
    """

    last_price_indices: tuple[int, ...]
    mech_first_period: bool = False
    first_drop_occurred: bool = False
    i_was_first_dropper: bool = False
    first_drop_price_index: int | None = None
    second_drop_occurred: bool = False

    def __post_init__(self) -> None:
        if self.second_drop_occurred and not self.first_drop_occurred:
            raise ValueError("Second drop cannot precede the first drop")
        if self.i_was_first_dropper and not self.first_drop_occurred:
            raise ValueError("First dropper flag set without a first drop")
        if (self.first_drop_price_index is not None) != self.i_was_first_dropper:
            raise ValueError("first_drop_price_index is present iff i_was_first_dropper")
        if self.mech_first_period and self.first_drop_occurred:
            raise ValueError("No drop can be registered before the baseline period")


@dataclass(frozen=True)
class EnvState:
    """Public environment state shared by all agents."""

    last_price_indices: tuple[int, ...]
    mech_first_period: bool = False
    first_drop_occurred: bool = False
    first_droppers: tuple[bool, ...] = ()
    first_drop_price_indices: tuple[int | None, ...] = ()
    second_drop_occurred: bool = False

    def view(self, agent: int) -> AgentView:
        was_first = bool(self.first_droppers[agent]) if self.first_droppers else False
        return AgentView(
            last_price_indices=self.last_price_indices,
            mech_first_period=self.mech_first_period,
            first_drop_occurred=self.first_drop_occurred,
            i_was_first_dropper=was_first,
            first_drop_price_index=self.first_drop_price_indices[agent] if was_first else None,
            second_drop_occurred=self.second_drop_occurred,
        )


class StateCodec:
    """Dense bijection between admissible agent views and state indices."""

    def __init__(self, m: int, n_agents: int = 2, augmented: bool = True):
        if m < 2:
            raise ValueError(f"Grid needs at least 2 points, got m={m}")
        if n_agents < 2:
            raise ValueError(f"Need at least 2 agents, got {n_agents}")
        self.m = m
        self.n_agents = n_agents
        self.augmented = augmented

    @property
    def base_count(self) -> int:
        return self.m**self.n_agents

    @property
    def flag_count(self) -> int:
        return 4 + 2 * self.m if self.augmented else 1

    @property
    def total_state_count(self) -> int:
        return self.flag_count * self.base_count

    def base_index(self, price_indices: Sequence[int]) -> int:
        if len(price_indices) != self.n_agents:
            raise ValueError(f"Expected {self.n_agents} price indices, got {len(price_indices)}")
        index = 0
        for k in price_indices:
            if not 0 <= k < self.m:
                raise ValueError(f"Price index {k} out of range [0, {self.m})")
            index = index * self.m + int(k)
        return index

    def base_indices(self, base: int) -> tuple[int, ...]:
        digits = []
        for _ in range(self.n_agents):
            base, k = divmod(base, self.m)
            digits.append(k)
        return tuple(reversed(digits))

    def encode(self, view: AgentView) -> int:
        base = self.base_index(view.last_price_indices)
        if not self.augmented:
            if view.mech_first_period or view.first_drop_occurred:
                raise ValueError("Mechanism flags need an augmented codec")
            return base
        price_index = view.first_drop_price_index if view.i_was_first_dropper else 0
        if not 0 <= price_index < self.m:
            raise ValueError(f"First-drop price index {price_index} out of range")
        combo = kernels.flag_combo(
            view.first_drop_occurred,
            view.i_was_first_dropper,
            price_index,
            view.second_drop_occurred,
            view.mech_first_period,
        )
        return int(combo) * self.base_count + base

    def decode(self, index: int) -> AgentView:
        if not 0 <= index < self.total_state_count:
            raise ValueError(f"State index {index} out of range [0, {self.total_state_count})")
        combo, base = divmod(index, self.base_count)
        prices = self.base_indices(base)
        if combo < 2:
            return AgentView(prices, mech_first_period=combo == 1)
        if combo < 4:
            return AgentView(prices, first_drop_occurred=True, second_drop_occurred=combo == 3)
        k, second = divmod(combo - 4, 2)
        return AgentView(
            prices,
            first_drop_occurred=True,
            i_was_first_dropper=True,
            first_drop_price_index=k,
            second_drop_occurred=bool(second),
        )


def enumerate_states(grid: PriceGrid, n_agents: int = 2, augmented: bool = True) -> StateCodec:
    return StateCodec(grid.m, n_agents, augmented)


def build_tables(params: MarketParams, grid: PriceGrid) -> tuple[np.ndarray, np.ndarray]:
    """Profit and quantity for every two-seller grid profile, shape (m, m, 2)."""
    if params.n_sellers != 2:
        raise ValueError(f"Tables are built for two sellers, got {params.n_sellers}")
    profit_table = np.empty((grid.m, grid.m, 2))
    quantity_table = np.empty((grid.m, grid.m, 2))
    for a0 in range(grid.m):
        for a1 in range(grid.m):
            p = np.array([grid.prices[a0], grid.prices[a1]])
            quantity_table[a0, a1] = logit_demand(p, params).shares
            profit_table[a0, a1] = profits(p, params)
    return profit_table, quantity_table


@dataclass(frozen=True)
class StepResult:
    """Outcome of one period.

    Attributes:
        period: Period index
        actions: Grid index per agent
        prices: Price per agent
        quantities: Logit demand per agent
        profits: Base flow profit (p - c) q per agent
        topups: Per-unit top-up per agent
        rewards: profits + topups * quantities
        phase: Mechanism phase after the period
        state: State the agents observe next
    """

    period: int
    actions: tuple[int, ...]
    prices: np.ndarray
    quantities: np.ndarray
    profits: np.ndarray
    topups: np.ndarray
    rewards: np.ndarray
    phase: Phase
    state: EnvState


class PricingEnv:
    """Two-seller repeated pricing game with an optional single-platform rule.

    Usage:
        env = PricingEnv(market, grid, mechanism=config)
        result = env.reset(first_actions)       # period 0
        while result.period < env.episode_length - 1:
            result = env.step(actions_for(result.state))
    """

    def __init__(
        self,
        market: MarketParams,
        grid: PriceGrid,
        mechanism: MechanismConfig | None = None,
        episode_length: int = 100,
    ):
        if market.n_sellers != 2:
            raise ValueError(f"PricingEnv is a two-seller game, got {market.n_sellers} sellers")
        self.market = market
        self.grid = grid
        self.mechanism = mechanism
        self.episode_length = episode_length
        self.codec = StateCodec(grid.m, 2, augmented=mechanism is not None)
        self.rule = TwoStageRule(mechanism, 2) if mechanism is not None else None
        self.period = -1
        self.state: EnvState | None = None

    def observations(self, state: EnvState | None = None) -> list[int]:
        """State index of each agent's view."""
        state = state or self.state
        return [self.codec.encode(state.view(i)) for i in range(2)]

    def reset(self, actions: Sequence[int]) -> StepResult:
        """Start an episode; ``actions`` are the (random) period-0 prices."""
        if self.rule is not None:
            self.rule.reset()
        self.period = -1
        return self._play(actions)

    def step(self, actions: Sequence[int]) -> StepResult:
        if self.period < 0:
            raise RuntimeError("Cannot step: call reset() first")
        return self._play(actions)

    def _play(self, actions: Sequence[int]) -> StepResult:
        actions = tuple(int(a) for a in actions)
        if len(actions) != 2 or any(not 0 <= a < self.grid.m for a in actions):
            raise ValueError(f"Invalid actions: {actions}")
        self.period += 1
        period = self.period
        prices = self.grid.prices[list(actions)]
        quantities = logit_demand(prices, self.market).shares
        base_profits = profits(prices, self.market)
        topups = np.zeros(2)
        phase = Phase.INACTIVE
        if self.rule is not None and period >= self.rule.config.activation_period:
            topups = self.rule.step(period, prices, quantities, base_profits)
            phase = self.rule.phase
        rewards = base_profits + topups * quantities
        self.state = self._next_state(actions, period + 1)
        return StepResult(
            period=period,
            actions=actions,
            prices=prices,
            quantities=quantities,
            profits=base_profits,
            topups=topups,
            rewards=rewards,
            phase=phase,
            state=self.state,
        )

    def _next_state(self, actions: tuple[int, ...], next_period: int) -> EnvState:
        if self.rule is None:
            return EnvState(last_price_indices=actions)
        mech = self.rule.state
        first_droppers = tuple(i in mech.first_droppers for i in range(2))
        return EnvState(
            last_price_indices=actions,
            mech_first_period=next_period == self.rule.config.activation_period + 1,
            first_drop_occurred=mech.tau1 is not None,
            first_droppers=first_droppers,
            first_drop_price_indices=tuple(
                self.grid.index_of(float(mech.locked_price[i][0])) if first_droppers[i] else None
                for i in range(2)
            ),
            second_drop_occurred=mech.tau2 is not None,
        )
