"""Brute-force checks of the equilibrium claims for the price drop rules.

Cartel strategies come from a declared finite family: a stationary
prescription per seller, a punishment length T in 0..t_max and one constant
punishment level per seller. For every strategy the verifier searches for a
unilateral deviation that beats the cartel flow in every period once the rule
is in force (per-period dominance). A strategy with no such deviation
survives.

Deviation traces start at the activation period tau:

    tau, tau + 1     everyone plays the prescription (tau + 1 is the baseline)
    tau + 2          the deviator moves
    next T periods   the others play their punishment level, unless it is
                     not credible (then it is dropped): every punisher
                     would earn less by punishing than by acquiescing, or
                     acquiescing already pays every punisher at least its
                     cartel flow
    2 more periods   the others are back on the prescription; the last
                     period repeats forever

The deviator follows the rule's guidance while it holds a guarantee and
otherwise best-responds to the others' current play.
"""

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterator, Sequence

import numpy as np

from collusion_lab.env import PricingEnv
from collusion_lab.equilibrium import (
    cournot_aggregate_quantity,
    cournot_best_response,
    cournot_nash_quantities,
    grid_best_response,
    nash_prices,
    quantity_incentive_margin,
)
from collusion_lab.errors import ResourceLimitError
from collusion_lab.market import (
    CournotParams,
    MarketParams,
    PriceGrid,
    cournot_price,
    cournot_profits,
    logit_demand,
    profits,
)
from collusion_lab.mechanism import (
    PRICE_TOL,
    QUANTITY_TOL,
    DirectMarketRule,
    MechanismConfig,
    Phase,
    TwoStageRule,
    Variant,
)

logger = logging.getLogger(__name__)

DEFAULT_DELTAS = (0.5, 0.9, 0.95, 0.99)
DEFAULT_MAX_STRATEGIES = 500_000
PROFIT_TOL = 1e-12
TRACE_TAU = 1
_REVERTED_PERIODS = 2
FAMILY_RESTRICTION = (
    "constant prescriptions x constant per-seller punishment levels x "
    "punishment length 0..t_max; punishments start the period after the deviation"
)


# Strategy family


@dataclass(frozen=True)
class CartelStrategy:
    """One cartel strategy, all levels given as grid indices.

    Attributes:
        prescription: Stationary level per seller
        punishment_length: T, periods of punishment after a deviation
        punishment: Level per seller during punishment (None when T = 0)
    """

    prescription: tuple[int, ...]
    punishment_length: int = 0
    punishment: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.punishment_length < 0:
            raise ValueError(f"Punishment length must be >= 0, got {self.punishment_length}")
        if (self.punishment is None) != (self.punishment_length == 0):
            raise ValueError("A punishment schedule is given iff the punishment length is positive")
        if self.punishment is not None and len(self.punishment) != len(self.prescription):
            raise ValueError("Punishment and prescription must cover the same sellers")

    def prescribed(self, seller: int, periods_since_deviation: int) -> int:
        """Level of ``seller`` k periods after a deviation (0 = no deviation yet)."""
        if 1 <= periods_since_deviation <= self.punishment_length:
            return self.punishment[seller]
        return self.prescription[seller]


class StrategyFamily:
    """Prescriptions x punishment lengths x constant punishment levels."""

    def __init__(self, n_levels: int, n_sellers: int = 2, t_max: int = 2):
        if n_levels < 2:
            raise ValueError(f"Need at least 2 levels, got {n_levels}")
        if n_sellers < 2:
            raise ValueError(f"Need at least 2 sellers, got {n_sellers}")
        if t_max < 0:
            raise ValueError(f"t_max must be >= 0, got {t_max}")
        self.n_levels = n_levels
        self.n_sellers = n_sellers
        self.t_max = t_max

    @property
    def profile_count(self) -> int:
        return self.n_levels**self.n_sellers

    @property
    def declared_count(self) -> int:
        return self.profile_count * (1 + self.t_max * self.profile_count)

    def __len__(self) -> int:
        return self.declared_count

    def prescriptions(self) -> Iterator[tuple[int, ...]]:
        return itertools.product(range(self.n_levels), repeat=self.n_sellers)

    def strategies_for(self, prescription: tuple[int, ...]) -> Iterator[CartelStrategy]:
        yield CartelStrategy(prescription)
        for length in range(1, self.t_max + 1):
            for punishment in itertools.product(range(self.n_levels), repeat=self.n_sellers):
                yield CartelStrategy(prescription, length, punishment)

    def __iter__(self) -> Iterator[CartelStrategy]:
        for prescription in self.prescriptions():
            yield from self.strategies_for(prescription)

    def check_budget(self, max_strategies: int) -> None:
        if self.declared_count > max_strategies:
            raise ResourceLimitError(
                f"Strategy family has {self.declared_count} strategies, "
                f"above the limit of {max_strategies}"
            )

    def describe(self) -> dict[str, Any]:
        return {
            "n_levels": self.n_levels,
            "n_sellers": self.n_sellers,
            "t_max": self.t_max,
            "declared_count": self.declared_count,
            "restriction": FAMILY_RESTRICTION,
        }


# Discounting


@dataclass(frozen=True)
class FlowPath:
    """Per-period flows: a transient, then a cycle repeated forever.

    Both arrays are periods x sellers; an absent cycle means zero flows.
    """

    transient: np.ndarray
    cycle: np.ndarray | None = None


@dataclass(frozen=True)
class DiscountedPayoff:
    values: np.ndarray
    tail_bound: float
    horizon: int


def horizon_for(delta: float, tolerance: float = 1e-9) -> int:
    """Smallest H >= 1 with delta**H / (1 - delta) <= tolerance."""
    if not 0 <= delta < 1:
        raise ValueError(f"delta must lie in [0, 1), got {delta}")
    if delta == 0:
        return 1
    bound = math.log(tolerance * (1 - delta)) / math.log(delta)
    return max(1, math.ceil(bound))


def discounted_payoff(
    path: FlowPath, delta: float, horizon: int | None = None
) -> DiscountedPayoff:
    """Sum of delta**t f_t over t < horizon, with a bound on the omitted tail.

    The bound is delta**H * max|f| / (1 - delta), so the true infinite sum
    lies within ``tail_bound`` of ``values``.
    """
    if horizon is None:
        horizon = horizon_for(delta)
    transient = np.atleast_2d(np.asarray(path.transient, dtype=np.float64))
    cycle = None if path.cycle is None else np.atleast_2d(np.asarray(path.cycle, dtype=np.float64))
    n = transient.shape[1] if transient.size else cycle.shape[1]
    values = np.zeros(n)
    scale = 0.0
    weight = 1.0
    for t in range(horizon):
        if t < len(transient) and transient.size:
            flow = transient[t]
        elif cycle is not None:
            flow = cycle[(t - len(transient)) % len(cycle)]
        else:
            break
        values += weight * flow
        weight *= delta
    if transient.size:
        scale = float(np.max(np.abs(transient)))
    if cycle is not None:
        scale = max(scale, float(np.max(np.abs(cycle))))
    tail_bound = delta**horizon * scale / (1 - delta)
    return DiscountedPayoff(values=values, tail_bound=tail_bound, horizon=horizon)


# Deviation traces


@dataclass(frozen=True)
class DeviationTrace:
    """A deviation and the play it induces, from the activation period on.

    Attributes:
        deviator: Deviating seller
        deviation: Level chosen at tau + 2
        punishment_length: T of the strategy
        punishment: Others' punishment levels actually played (None if
            dropped as not credible or T = 0)
        credible: Whether the strategy's punishment passed the credibility test
        periods: Period index per row
        levels: Levels (prices or quantities) of all sellers per period
        flows: Deviator flow per period, including guarantee payments
        guarantees: Per-unit top-up (platform) or offer price (direct) per period
        cartel_flow: Deviator's flow under the prescription
        start: Row of the deviation period
    """

    deviator: int
    deviation: float
    punishment_length: int
    punishment: tuple[float, ...] | None
    credible: bool
    periods: tuple[int, ...]
    levels: tuple[tuple[float, ...], ...]
    flows: tuple[float, ...]
    guarantees: tuple[float, ...]
    cartel_flow: float
    start: int = 2
    complete: bool = True

    @property
    def profitable(self) -> bool:
        return self.complete and all(f > self.cartel_flow for f in self.flows[self.start :])

    def discounted_dominance(self, deltas: Sequence[float] = DEFAULT_DELTAS) -> dict[float, bool]:
        flows = np.asarray(self.flows[self.start :]).reshape(-1, 1)
        result = {}
        for delta in deltas:
            horizon = horizon_for(delta, 1e-12)
            own = discounted_payoff(FlowPath(flows[:-1], flows[-1:]), delta, horizon)
            cartel = discounted_payoff(
                FlowPath(np.empty((0, 1)), np.array([[self.cartel_flow]])), delta, horizon
            )
            result[delta] = bool(own.values[0] > cartel.values[0])
        return result

    def to_dict(self) -> dict[str, Any]:
        return {
            "deviator": self.deviator,
            "deviation": self.deviation,
            "punishment_length": self.punishment_length,
            "punishment": None if self.punishment is None else list(self.punishment),
            "credible": self.credible,
            "periods": list(self.periods),
            "levels": [list(row) for row in self.levels],
            "flows": list(self.flows),
            "guarantees": list(self.guarantees),
            "cartel_flow": self.cartel_flow,
            "start": self.start,
        }


def _punishment_credible(
    punishers: Sequence[int],
    cartel: np.ndarray,
    acquiesce: np.ndarray,
    punish: np.ndarray,
) -> bool:
    """Whether punishers would carry out a punishment, given per-seller profits.

    A deviation that leaves every punisher at least as well off as the
    cartel is accepted rather than punished; a deviation that hurts some
    punisher is punished unless punishing hurts all of them further.
    """
    if all(acquiesce[j] >= cartel[j] - PROFIT_TOL for j in punishers):
        return False
    return not all(punish[j] < acquiesce[j] for j in punishers)


def _case_label(levels: Sequence[float], reference: Sequence[float], tol: float) -> int:
    """1: some level above the reference, 2: none above and some below, 3: equal."""
    diff = np.asarray(levels) - np.asarray(reference)
    if np.any(diff > tol):
        return 1
    if np.any(diff < -tol):
        return 2
    return 3


class _PlatformGame:
    """Single-platform logit game on a price grid with memoised outcomes."""

    def __init__(
        self,
        params: MarketParams,
        grid: PriceGrid,
        variant: Variant,
        cost_estimate: tuple[float, ...] | None,
    ):
        if variant not in (Variant.PLATFORM_FULL, Variant.SIMPLIFIED_AI):
            raise ValueError(f"Platform verification runs a single-platform rule, not {variant.value}")
        if variant is Variant.SIMPLIFIED_AI and cost_estimate is None:
            cost_estimate = params.c
        self.params = params
        self.grid = grid
        self.config = MechanismConfig(
            variant=variant,
            activation_period=TRACE_TAU,
            cost_estimate=cost_estimate if variant is Variant.SIMPLIFIED_AI else None,
        )
        self._outcomes: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = {}

    def outcome(self, profile: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
        """(profits, quantities) at a grid profile."""
        cached = self._outcomes.get(profile)
        if cached is None:
            prices = self.grid.prices[list(profile)]
            cached = (profits(prices, self.params), logit_demand(prices, self.params).shares)
            self._outcomes[profile] = cached
        return cached

    def grid_best_response(self, profile: tuple[int, ...], i: int) -> int:
        def payoff(trial: np.ndarray, seller: int) -> float:
            return float(self.outcome(tuple(int(k) for k in trial))[0][seller])

        best, _ = grid_best_response(np.arange(self.grid.m), profile, i, payoff)
        return best

    def _guided_price(self, rule: TwoStageRule, i: int, others: tuple[int, ...]) -> int | None:
        """Best price inside the band that keeps the guarantee, or None."""
        state = rule.state
        punisher_prices = state.previous_prices[sorted(state.punishers), :]
        low, high = float(punisher_prices.min()), float(punisher_prices.max())
        locked_p = float(state.locked_price[i][0])
        locked_q = float(state.locked_quantity[i][0])
        best, best_flow = None, -math.inf
        for k in range(self.grid.m):
            price = self.grid.prices[k]
            if price < low - PRICE_TOL or price > high + PRICE_TOL:
                continue
            profile = others[:i] + (k,) + others[i + 1 :]
            profit_k, quantity = self.outcome(profile)
            if quantity[i] > locked_q + QUANTITY_TOL:
                continue
            flow = max(float(profit_k[i]), locked_p * locked_q - self.params.c[i] * quantity[i])
            if flow > best_flow:
                best, best_flow = k, flow
        return best

    def deviator_level(self, rule: TwoStageRule, i: int, d: int, others: tuple[int, ...]) -> int:
        state = rule.state
        if i in state.first_droppers and state.eligible[i]:
            if self.config.variant is Variant.SIMPLIFIED_AI or state.phase is not Phase.SECOND_DROPPED:
                return d
            guided = self._guided_price(rule, i, others)
            if guided is not None:
                return guided
        return self.grid_best_response(others, i)

    def trace(
        self,
        prescription: tuple[int, ...],
        i: int,
        d: int,
        length: int,
        punishment: tuple[int, ...] | None,
        stop_early: bool = True,
    ) -> DeviationTrace:
        n = self.params.n_sellers
        deviated = prescription[:i] + (d,) + prescription[i + 1 :]
        cartel_flow = float(self.outcome(prescription)[0][i])

        credible = True
        effective = None
        if length > 0 and punishment is not None:
            punishers = [j for j in range(n) if j != i and punishment[j] != prescription[j]]
            if punishers:
                punished = tuple(
                    punishment[j] if j in punishers else deviated[j] for j in range(n)
                )
                credible = _punishment_credible(
                    punishers,
                    self.outcome(prescription)[0],
                    self.outcome(deviated)[0],
                    self.outcome(punished)[0],
                )
                if credible:
                    effective = tuple(
                        punishment[j] if j != i else prescription[i] for j in range(n)
                    )

        schedule = [prescription, prescription, deviated]
        if effective is not None:
            schedule += [effective] * length
        schedule += [prescription] * _REVERTED_PERIODS

        rule = TwoStageRule(self.config, n)
        periods, levels, flows, guarantees = [], [], [], []
        complete = True
        for row, target in enumerate(schedule):
            period = TRACE_TAU + row
            profile = target
            if row > 2:
                profile = target[:i] + (self.deviator_level(rule, i, d, target),) + target[i + 1 :]
            profit_t, quantity = self.outcome(profile)
            prices = self.grid.prices[list(profile)]
            topups = rule.step(period, prices, quantity, profit_t)
            flow = float(profit_t[i] + topups[i] * quantity[i])
            periods.append(period)
            levels.append(tuple(float(p) for p in prices))
            flows.append(flow)
            guarantees.append(float(topups[i]))
            if stop_early and row >= 2 and flow <= cartel_flow:
                complete = False
                break

        return DeviationTrace(
            deviator=i,
            deviation=float(self.grid.prices[d]),
            punishment_length=length,
            punishment=None
            if effective is None
            else tuple(float(self.grid.prices[k]) for k in effective),
            credible=credible,
            periods=tuple(periods),
            levels=tuple(levels),
            flows=tuple(flows),
            guarantees=tuple(guarantees),
            cartel_flow=cartel_flow,
            complete=complete,
        )

    def nash_path_topups(self, profile: tuple[int, ...], periods: int = 10) -> float:
        rule = TwoStageRule(self.config, self.params.n_sellers)
        profit_t, quantity = self.outcome(profile)
        prices = self.grid.prices[list(profile)]
        for row in range(periods):
            rule.step(TRACE_TAU + row, prices, quantity, profit_t)
        return rule.ledger.cumulative_total


@dataclass
class _PrescriptionResult:
    prescription: tuple[int, ...]
    n_strategies: int
    n_surviving: int
    witness: DeviationTrace | None
    witness_strategy: CartelStrategy | None


def _first_deviation(
    game: "_PlatformGame | _DirectGame",
    strategy: CartelStrategy,
    candidates: list[list],
    memo: dict[tuple, DeviationTrace | None],
) -> DeviationTrace | None:
    """First profitable deviation over sellers in order, each seller's
    ``candidates`` tried in order. Traces depend only on the deviator's own
    row, the punishment length and the others' punishment entries."""
    for i, options in enumerate(candidates):
        others = None
        if strategy.punishment is not None:
            others = tuple(k for j, k in enumerate(strategy.punishment) if j != i)
        for d in options:
            key = (i, strategy.punishment_length, others, d)
            if key not in memo:
                trace = game.trace(
                    strategy.prescription, i, d, strategy.punishment_length, strategy.punishment
                )
                memo[key] = trace if trace.profitable else None
            if memo[key] is not None:
                return memo[key]
    return None


def _platform_candidates(game: "_PlatformGame", prescription: tuple[int, ...]) -> list[list[int]]:
    candidates = []
    for i in range(game.params.n_sellers):
        br = game.grid_best_response(prescription, i)
        order = [br] + [d for d in range(game.grid.m) if d != br]
        candidates.append([d for d in order if d != prescription[i]])
    return candidates


def _search(
    game: "_PlatformGame | _DirectGame",
    family: StrategyFamily,
    prescription: tuple[int, ...],
    candidates: list[list],
) -> _PrescriptionResult:
    memo: dict[tuple, DeviationTrace | None] = {}
    n_strategies = n_surviving = 0
    witness = witness_strategy = None
    for strategy in family.strategies_for(prescription):
        n_strategies += 1
        found = _first_deviation(game, strategy, candidates, memo)
        if found is None:
            n_surviving += 1
        elif witness is None:
            witness, witness_strategy = found, strategy
    return _PrescriptionResult(prescription, n_strategies, n_surviving, witness, witness_strategy)


def _search_platform(
    game: "_PlatformGame", family: StrategyFamily, prescription: tuple[int, ...]
) -> _PrescriptionResult:
    return _search(game, family, prescription, _platform_candidates(game, prescription))


def find_platform_deviation(
    strategy: CartelStrategy,
    params: MarketParams,
    grid: PriceGrid,
    variant: Variant = Variant.PLATFORM_FULL,
    cost_estimate: tuple[float, ...] | None = None,
) -> DeviationTrace | None:
    """Profitable one-shot deviation from ``strategy`` under the price rule, if any.

    Deviators are tried in seller order, each starting from its grid best
    response to the prescription.
    """
    game = _PlatformGame(params, grid, variant, cost_estimate)
    candidates = _platform_candidates(game, strategy.prescription)
    return _first_deviation(game, strategy, candidates, {})


def _platform_worker(
    params: MarketParams,
    grid: PriceGrid,
    variant: Variant,
    cost_estimate: tuple[float, ...] | None,
    t_max: int,
    prescriptions: list[tuple[int, ...]],
) -> list[_PrescriptionResult]:
    game = _PlatformGame(params, grid, variant, cost_estimate)
    family = StrategyFamily(grid.m, params.n_sellers, t_max)
    return [_search_platform(game, family, p) for p in prescriptions]


def _chunks(items: list, n_chunks: int) -> list[list]:
    return [items[k::n_chunks] for k in range(n_chunks) if items[k::n_chunks]]


@dataclass
class PlatformCertificate:
    """Outcome of the platform verification."""

    instance: dict[str, Any]
    family: dict[str, Any]
    variant: str
    nash_prices: list[float]
    nash_profile: tuple[int, ...]
    survivors: list[tuple[int, ...]]
    n_surviving_strategies: int
    visited_count: int
    nash_path_topups: float
    witnesses: dict[tuple[int, ...], dict[str, Any]] = field(default_factory=dict)
    discounted_ok: bool = True

    @property
    def ok(self) -> bool:
        return (
            self.survivors == [self.nash_profile]
            and self.nash_path_topups == 0.0
            and self.discounted_ok
            and self.visited_count == self.family["declared_count"]
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "platform",
            "ok": self.ok,
            "instance": self.instance,
            "family": {**self.family, "visited_count": self.visited_count},
            "variant": self.variant,
            "nash_prices": self.nash_prices,
            "nash_profile": list(self.nash_profile),
            "survivors": [list(s) for s in self.survivors],
            "n_surviving_strategies": self.n_surviving_strategies,
            "nash_path_topups": self.nash_path_topups,
            "discounted_ok": self.discounted_ok,
            "witnesses": {
                ",".join(map(str, k)): v for k, v in sorted(self.witnesses.items())
            },
        }


def verify_platform_theorem(
    grid: PriceGrid,
    params: MarketParams,
    family: StrategyFamily,
    variant: Variant = Variant.PLATFORM_FULL,
    cost_estimate: tuple[float, ...] | None = None,
    max_strategies: int = DEFAULT_MAX_STRATEGIES,
    deltas: Sequence[float] = DEFAULT_DELTAS,
    workers: int = 1,
) -> PlatformCertificate:
    """Check that only the grid-nearest Nash prescription survives the rule.

    Raises:
        ResourceLimitError: If the family exceeds ``max_strategies``
    """
    family.check_budget(max_strategies)
    if family.n_levels != grid.m or family.n_sellers != params.n_sellers:
        raise ValueError("Strategy family does not match the grid and market")

    nash = nash_prices(params).prices
    nash_profile = tuple(grid.nearest_index(p) for p in nash)
    prescriptions = list(family.prescriptions())

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(
                    _platform_worker, params, grid, variant, cost_estimate, family.t_max, chunk
                )
                for chunk in _chunks(prescriptions, workers)
            ]
            results = [r for f in futures for r in f.result()]
    else:
        results = _platform_worker(params, grid, variant, cost_estimate, family.t_max, prescriptions)
    results.sort(key=lambda r: r.prescription)

    game = _PlatformGame(params, grid, variant, cost_estimate)
    witnesses = {}
    discounted_ok = True
    for r in results:
        if r.witness is None:
            continue
        checks = r.witness.discounted_dominance(deltas)
        discounted_ok &= all(checks.values())
        witnesses[r.prescription] = {
            "case": _case_label(grid.prices[list(r.prescription)], nash, PRICE_TOL),
            "strategy": {
                "punishment_length": r.witness_strategy.punishment_length,
                "punishment": None
                if r.witness_strategy.punishment is None
                else list(r.witness_strategy.punishment),
            },
            "trace": r.witness.to_dict(),
            "discounted": {str(k): v for k, v in checks.items()},
        }

    certificate = PlatformCertificate(
        instance={
            "market": {
                "a": list(params.a),
                "c": list(params.c),
                "a0": params.a0,
                "mu": params.mu,
                "outside_scaled_by_mu": params.outside_scaled_by_mu,
            },
            "grid": {"m": grid.m, "p_min": grid.p_min, "p_max": grid.p_max},
        },
        family=family.describe(),
        variant=variant.value,
        nash_prices=[float(p) for p in nash],
        nash_profile=nash_profile,
        survivors=[r.prescription for r in results if r.n_surviving > 0],
        n_surviving_strategies=sum(r.n_surviving for r in results),
        visited_count=sum(r.n_strategies for r in results),
        nash_path_topups=game.nash_path_topups(nash_profile),
        witnesses=witnesses,
        discounted_ok=discounted_ok,
    )
    logger.info(
        "Platform verification: %d strategies, survivors %s, ok=%s",
        certificate.visited_count,
        certificate.survivors,
        certificate.ok,
    )
    return certificate


def replay_platform_deviation(
    trace: DeviationTrace,
    params: MarketParams,
    grid: PriceGrid,
    variant: Variant = Variant.PLATFORM_FULL,
    cost_estimate: tuple[float, ...] | None = None,
) -> np.ndarray:
    """Re-run a two-seller trace through ``PricingEnv``; returns the deviator's rewards."""
    if variant is Variant.SIMPLIFIED_AI and cost_estimate is None:
        cost_estimate = params.c
    config = MechanismConfig(
        variant=variant,
        activation_period=TRACE_TAU,
        cost_estimate=cost_estimate if variant is Variant.SIMPLIFIED_AI else None,
    )
    env = PricingEnv(params, grid, mechanism=config, episode_length=len(trace.periods) + 1)
    actions = [tuple(grid.index_of(p) for p in row) for row in trace.levels]
    env.reset(actions[0])
    rewards = [env.step(a).rewards[trace.deviator] for a in actions]
    return np.asarray(rewards)


# Direct market


class _DirectGame:
    """Cournot game on a quantity grid; deviations may also use the exact best response."""

    def __init__(self, params: CournotParams, qgrid: np.ndarray):
        self.params = params
        self.qgrid = np.asarray(qgrid, dtype=np.float64)
        self.config = MechanismConfig(variant=Variant.DIRECT_MARKET, activation_period=TRACE_TAU)

    def level(self, k: int) -> float:
        return float(self.qgrid[k])

    def trace(
        self,
        prescription: tuple[int, ...],
        i: int,
        d: float,
        length: int,
        punishment: tuple[int, ...] | None,
        stop_early: bool = True,
    ) -> DeviationTrace:
        n = self.params.n_sellers
        cartel = np.array([self.level(k) for k in prescription])
        deviated = cartel.copy()
        deviated[i] = d
        cartel_flow = float(cournot_profits(cartel, self.params)[i])

        credible = True
        effective = None
        if length > 0 and punishment is not None:
            punishers = [j for j in range(n) if j != i and punishment[j] != prescription[j]]
            if punishers:
                punished = deviated.copy()
                for j in punishers:
                    punished[j] = self.level(punishment[j])
                credible = _punishment_credible(
                    punishers,
                    cournot_profits(cartel, self.params),
                    cournot_profits(deviated, self.params),
                    cournot_profits(punished, self.params),
                )
                if credible:
                    effective = punished.copy()
                    effective[i] = cartel[i]

        schedule = [cartel, cartel, deviated]
        if effective is not None:
            schedule += [effective] * length
        schedule += [cartel] * _REVERTED_PERIODS

        rule = DirectMarketRule(self.config, self.params)
        periods, levels, flows, guarantees = [], [], [], []
        complete = True
        for row, target in enumerate(schedule):
            period = TRACE_TAU + row
            q = target.copy()
            state = rule.state
            if row > 2:
                protected = i in state.first_movers and i not in state.punishers
                q[i] = d if protected else cournot_best_response(target, self.params, i)
            offers = rule.step(period, q)
            market_price = cournot_price(q, self.params)
            offer = offers.get(i)
            if offer is not None:
                flow = (max(market_price, offer.price) - self.params.c[i]) * offer.quantity
                guarantees.append(offer.price)
            else:
                flow = (market_price - self.params.c[i]) * q[i]
                guarantees.append(0.0)
            periods.append(period)
            levels.append(tuple(float(x) for x in q))
            flows.append(float(flow))
            if stop_early and row >= 2 and flow <= cartel_flow:
                complete = False
                break

        return DeviationTrace(
            deviator=i,
            deviation=float(d),
            punishment_length=length,
            punishment=None if effective is None else tuple(float(x) for x in effective),
            credible=credible,
            periods=tuple(periods),
            levels=tuple(levels),
            flows=tuple(flows),
            guarantees=tuple(guarantees),
            cartel_flow=cartel_flow,
            complete=complete,
        )

    def nash_path_offers(self, profile: tuple[int, ...], periods: int = 10) -> int:
        rule = DirectMarketRule(self.config, self.params)
        q = np.array([self.level(k) for k in profile])
        for row in range(periods):
            rule.step(TRACE_TAU + row, q)
        return len(rule.offers)


def _direct_candidates(game: _DirectGame, prescription: tuple[int, ...]) -> list[list[float]]:
    cartel = np.array([game.level(k) for k in prescription])
    candidates = []
    for i in range(game.params.n_sellers):
        exact = cournot_best_response(cartel, game.params, i)
        options = [exact] + [float(x) for x in game.qgrid]
        candidates.append([d for d in options if abs(d - cartel[i]) > QUANTITY_TOL])
    return candidates


def _search_direct(
    game: _DirectGame, family: StrategyFamily, prescription: tuple[int, ...]
) -> _PrescriptionResult:
    return _search(game, family, prescription, _direct_candidates(game, prescription))


def find_direct_deviation(
    strategy: CartelStrategy, params: CournotParams, qgrid: Sequence[float]
) -> DeviationTrace | None:
    """Profitable one-shot deviation from ``strategy`` under the direct market, if any.

    The exact best response to the prescription is tried before the grid.
    """
    game = _DirectGame(params, qgrid)
    return _first_deviation(game, strategy, _direct_candidates(game, strategy.prescription), {})


def _direct_worker(
    params: CournotParams, qgrid: np.ndarray, t_max: int, prescriptions: list[tuple[int, ...]]
) -> list[_PrescriptionResult]:
    game = _DirectGame(params, qgrid)
    family = StrategyFamily(len(qgrid), params.n_sellers, t_max)
    return [_search_direct(game, family, p) for p in prescriptions]


@dataclass
class DirectCertificate:
    """Outcome of the direct-market verification."""

    instance: dict[str, Any]
    family: dict[str, Any]
    nash_quantities: list[float]
    nash_profile: tuple[int, ...]
    survivors: list[tuple[int, ...]]
    n_surviving_strategies: int
    visited_count: int
    nash_path_offers: int
    witnesses: dict[tuple[int, ...], dict[str, Any]] = field(default_factory=dict)
    misallocation_witnesses: list[dict[str, Any]] = field(default_factory=list)
    discounted_ok: bool = True

    @property
    def ok(self) -> bool:
        return (
            self.survivors == [self.nash_profile]
            and self.nash_path_offers == 0
            and self.discounted_ok
            and self.visited_count == self.family["declared_count"]
            and all(w["profitable"] for w in self.misallocation_witnesses)
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "direct",
            "ok": self.ok,
            "instance": self.instance,
            "family": {**self.family, "visited_count": self.visited_count},
            "nash_quantities": self.nash_quantities,
            "nash_profile": list(self.nash_profile),
            "survivors": [list(s) for s in self.survivors],
            "n_surviving_strategies": self.n_surviving_strategies,
            "nash_path_offers": self.nash_path_offers,
            "discounted_ok": self.discounted_ok,
            "misallocation_witnesses": self.misallocation_witnesses,
            "witnesses": {
                ",".join(map(str, k)): v for k, v in sorted(self.witnesses.items())
            },
        }


def _misallocation_witnesses(
    results: list[_PrescriptionResult],
    game: _DirectGame,
    nash: np.ndarray,
    nash_profile: tuple[int, ...],
) -> list[dict[str, Any]]:
    """Prescriptions with the Nash aggregate but a different split."""
    aggregate = cournot_aggregate_quantity(game.params)
    out = []
    for r in results:
        q = np.array([game.level(k) for k in r.prescription])
        if r.prescription == nash_profile or abs(q.sum() - aggregate) > 1e-9:
            continue
        j = int(np.argmin(q - nash))
        delta = float(nash[j] - q[j])
        if delta <= 0:
            continue
        margin = quantity_incentive_margin(q, game.params, j)
        out.append(
            {
                "prescription": list(r.prescription),
                "quantities": q.tolist(),
                "seller": j,
                "delta": delta,
                "margin": margin,
                "margin_matches_delta": abs(margin - delta) <= 1e-9,
                "profitable": r.witness is not None,
            }
        )
    return out


def verify_direct_theorem(
    qgrid: Sequence[float],
    params: CournotParams,
    family: StrategyFamily,
    max_strategies: int = DEFAULT_MAX_STRATEGIES,
    deltas: Sequence[float] = DEFAULT_DELTAS,
    workers: int = 1,
) -> DirectCertificate:
    """Cournot analogue: only the Nash quantities survive and no offers are made on path.

    Raises:
        ResourceLimitError: If the family exceeds ``max_strategies``
        UnsupportedParametersError: If the Cournot equilibrium is a corner
    """
    family.check_budget(max_strategies)
    qgrid = np.asarray(qgrid, dtype=np.float64)
    if family.n_levels != len(qgrid) or family.n_sellers != params.n_sellers:
        raise ValueError("Strategy family does not match the quantity grid and market")

    nash = cournot_nash_quantities(params)
    nash_profile = tuple(int(np.argmin(np.abs(qgrid - q))) for q in nash)
    prescriptions = list(family.prescriptions())

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_direct_worker, params, qgrid, family.t_max, chunk)
                for chunk in _chunks(prescriptions, workers)
            ]
            results = [r for f in futures for r in f.result()]
    else:
        results = _direct_worker(params, qgrid, family.t_max, prescriptions)
    results.sort(key=lambda r: r.prescription)

    game = _DirectGame(params, qgrid)
    witnesses = {}
    discounted_ok = True
    for r in results:
        if r.witness is None:
            continue
        checks = r.witness.discounted_dominance(deltas)
        discounted_ok &= all(checks.values())
        witnesses[r.prescription] = {
            "case": _case_label(nash, qgrid[list(r.prescription)], QUANTITY_TOL),
            "strategy": {
                "punishment_length": r.witness_strategy.punishment_length,
                "punishment": None
                if r.witness_strategy.punishment is None
                else list(r.witness_strategy.punishment),
            },
            "trace": r.witness.to_dict(),
            "discounted": {str(k): v for k, v in checks.items()},
        }

    certificate = DirectCertificate(
        instance={
            "market": {"Q": params.Q, "c": list(params.c), "beta": list(params.beta)},
            "qgrid": qgrid.tolist(),
        },
        family=family.describe(),
        nash_quantities=nash.tolist(),
        nash_profile=nash_profile,
        survivors=[r.prescription for r in results if r.n_surviving > 0],
        n_surviving_strategies=sum(r.n_surviving for r in results),
        visited_count=sum(r.n_strategies for r in results),
        nash_path_offers=game.nash_path_offers(nash_profile),
        witnesses=witnesses,
        misallocation_witnesses=_misallocation_witnesses(results, game, nash, nash_profile),
        discounted_ok=discounted_ok,
    )
    logger.info(
        "Direct verification: %d strategies, survivors %s, ok=%s",
        certificate.visited_count,
        certificate.survivors,
        certificate.ok,
    )
    return certificate


def replay_direct_deviation(trace: DeviationTrace, params: CournotParams) -> np.ndarray:
    """Re-run a Cournot trace through ``DirectMarketRule``; returns the deviator's flows."""
    rule = DirectMarketRule(
        MechanismConfig(variant=Variant.DIRECT_MARKET, activation_period=TRACE_TAU), params
    )
    flows = []
    i = trace.deviator
    for period, q in zip(trace.periods, trace.levels):
        offer = rule.step(period, q).get(i)
        market_price = cournot_price(q, params)
        if offer is not None:
            flows.append((max(market_price, offer.price) - params.c[i]) * offer.quantity)
        else:
            flows.append((market_price - params.c[i]) * q[i])
    return np.asarray(flows)
