"""The two-stage price drop rule as a deterministic state machine.

The rule is announced at the activation period tau. Prices at tau + 1 form
the baseline. A seller that cuts below its baseline (period tau1) has its
price and quantity locked. If some sellers then cut again (period tau2, the
punishers), the locked sellers that stayed out of the punishment are topped
up to their period-tau1 revenue (platform rule) or profit (simplified rule)
for as long as they keep following the rule's guidance.

Variants:
    PLATFORM_FULL   revenue matching, band + quantity cap after tau2
    SIMPLIFIED_AI   profit matching with an estimated cost, price held from tau1
    MULTI_PLATFORM  PLATFORM_FULL applied per platform, drops on any platform
    DIRECT_MARKET   Cournot purchase guarantee, triggered by quantity increases
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Sequence

import numpy as np

from collusion_lab.errors import DegenerateInputError, ProtocolError
from collusion_lab.market import CournotParams, cournot_price

logger = logging.getLogger(__name__)

PRICE_TOL = 1e-12
QUANTITY_TOL = 1e-12


class Variant(Enum):
    """Which version of the rule is deployed."""

    PLATFORM_FULL = "platform_full"
    SIMPLIFIED_AI = "simplified_ai"
    MULTI_PLATFORM = "multi_platform"
    DIRECT_MARKET = "direct_market"


class Phase(Enum):
    """Progress of the state machine within one run of the rule."""

    INACTIVE = "inactive"
    BASELINE = "baseline"
    FIRST_DROPPED = "first_dropped"
    SECOND_DROPPED = "second_dropped"

    @property
    def code(self) -> int:
        return PHASE_CODES[self]


PHASE_CODES = {
    Phase.INACTIVE: 0,
    Phase.BASELINE: 1,
    Phase.FIRST_DROPPED: 2,
    Phase.SECOND_DROPPED: 3,
}
PHASE_BY_CODE = {code: phase for phase, code in PHASE_CODES.items()}


@dataclass(frozen=True)
class MechanismConfig:
    """Rule parameters.

    Attributes:
        variant: Rule version
        activation_period: Period tau at which the rule is announced
        cost_estimate: Platform's per-seller marginal cost estimate
            (SIMPLIFIED_AI only)
    """

    variant: Variant = Variant.SIMPLIFIED_AI
    activation_period: int = 50
    cost_estimate: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.activation_period < 1:
            raise ValueError(f"Activation period must be >= 1, got {self.activation_period}")
        if self.variant is Variant.SIMPLIFIED_AI:
            if self.cost_estimate is None:
                raise ValueError("SIMPLIFIED_AI rule requires a cost estimate")
            object.__setattr__(
                self, "cost_estimate", tuple(float(x) for x in self.cost_estimate)
            )
            if any(not math.isfinite(x) or x < 0 for x in self.cost_estimate):
                raise ValueError(f"Invalid cost estimate: {self.cost_estimate}")
        elif self.cost_estimate is not None:
            raise ValueError(f"Cost estimate only applies to SIMPLIFIED_AI, not {self.variant.value}")


@dataclass
class MechanismState:
    """State of one deployment of a platform rule.

    Prices and quantities are held as seller x platform matrices; the
    single-platform rules use one column.

    Attributes:
        phase: Current phase
        baseline_prices: Prices observed at tau + 1
        reference_profits: Profits observed at tau (SIMPLIFIED_AI first-drop test)
        tau1: Period of the first drop
        tau2: Period of the second drop
        first_droppers: Sellers that cut at tau1
        locked_price: p_{i,tau1} per first dropper
        locked_quantity: q_{i,tau1} per first dropper
        punishers: Sellers that cut at tau2
        eligible: Per-seller guarantee flag (never regained once lost)
        band: (low, high) price band for the current period, after tau2
    """

    config: MechanismConfig
    n_sellers: int
    n_platforms: int = 1
    phase: Phase = Phase.INACTIVE
    last_period: int | None = None
    previous_prices: np.ndarray | None = None
    baseline_prices: np.ndarray | None = None
    reference_profits: np.ndarray | None = None
    tau1: int | None = None
    tau2: int | None = None
    first_droppers: frozenset[int] = frozenset()
    locked_price: dict[int, np.ndarray] = field(default_factory=dict)
    locked_quantity: dict[int, np.ndarray] = field(default_factory=dict)
    punishers: frozenset[int] = frozenset()
    eligible: np.ndarray = field(default=None)  # type: ignore[assignment]
    band: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.n_sellers < 2:
            raise ValueError(f"Need at least 2 sellers, got {self.n_sellers}")
        if self.n_platforms < 1:
            raise ValueError(f"Need at least 1 platform, got {self.n_platforms}")
        if self.eligible is None:
            self.eligible = np.zeros(self.n_sellers, dtype=bool)

    @property
    def tau(self) -> int:
        return self.config.activation_period

    def snapshot(self) -> dict[str, Any]:
        """Plain-data view used for trace comparison and logging."""
        return {
            "phase": self.phase.value,
            "last_period": self.last_period,
            "baseline_prices": None
            if self.baseline_prices is None
            else self.baseline_prices.tolist(),
            "tau1": self.tau1,
            "tau2": self.tau2,
            "first_droppers": sorted(self.first_droppers),
            "locked_price": {i: v.tolist() for i, v in sorted(self.locked_price.items())},
            "locked_quantity": {i: v.tolist() for i, v in sorted(self.locked_quantity.items())},
            "punishers": sorted(self.punishers),
            "eligible": self.eligible.tolist(),
            "band": self.band,
        }


@dataclass(frozen=True)
class TopupEntry:
    """One top-up payment: p_hat per unit on ``quantity`` units."""

    period: int
    seller: int
    platform: int
    topup: float
    quantity: float

    @property
    def payment(self) -> float:
        return self.topup * self.quantity


@dataclass
class TopupLedger:
    """Per-period, per-seller top-ups paid by the rule."""

    entries: list[TopupEntry] = field(default_factory=list)

    def record(self, entry: TopupEntry) -> None:
        if entry.topup < 0:
            raise ValueError(f"Top-up must be non-negative, got {entry.topup}")
        self.entries.append(entry)

    @property
    def cumulative_total(self) -> float:
        return math.fsum(e.payment for e in self.entries)

    def total_for(self, seller: int) -> float:
        return math.fsum(e.payment for e in self.entries if e.seller == seller)

    def for_period(self, period: int) -> list[TopupEntry]:
        return [e for e in self.entries if e.period == period]

    def __len__(self) -> int:
        return len(self.entries)


def _as_matrix(values: Sequence[float] | np.ndarray, n_sellers: int, n_platforms: int) -> np.ndarray:
    matrix = np.asarray(values, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix.reshape(-1, 1)
    if matrix.shape != (n_sellers, n_platforms):
        raise ValueError(
            f"Expected a {n_sellers} x {n_platforms} matrix, got shape {matrix.shape}"
        )
    return matrix


def _advance(
    state: MechanismState,
    period: int,
    prices: np.ndarray,
    quantities: np.ndarray,
    profits: np.ndarray | None,
) -> MechanismState:
    """Shared transition for all platform variants (matrix inputs)."""
    if state.last_period is None:
        if period != state.tau:
            raise ProtocolError(
                f"First observed period must be the activation period {state.tau}, got {period}"
            )
    elif period != state.last_period + 1:
        raise ProtocolError(
            f"Periods must be observed in order: expected {state.last_period + 1}, got {period}"
        )

    if state.phase is Phase.SECOND_DROPPED and period > state.tau2:
        punisher_prices = state.previous_prices[sorted(state.punishers), :]
        state.band = (float(punisher_prices.min()), float(punisher_prices.max()))

    if period == state.tau:
        if profits is not None:
            state.reference_profits = np.asarray(profits, dtype=np.float64).copy()
    elif period == state.tau + 1:
        state.baseline_prices = prices.copy()
        state.phase = Phase.BASELINE
    elif state.phase is Phase.BASELINE:
        below = np.any(prices < state.baseline_prices - PRICE_TOL, axis=1)
        if state.config.variant is Variant.SIMPLIFIED_AI:
            below &= np.asarray(profits) > state.reference_profits
        droppers = frozenset(int(i) for i in np.flatnonzero(below))
        if droppers:
            state.tau1 = period
            state.first_droppers = droppers
            for i in droppers:
                state.locked_price[i] = prices[i].copy()
                state.locked_quantity[i] = quantities[i].copy()
                state.eligible[i] = True
            state.phase = Phase.FIRST_DROPPED
            logger.debug("First drop at period %d by sellers %s", period, sorted(droppers))
    elif state.phase is Phase.FIRST_DROPPED:
        cut = np.any(prices < state.previous_prices - PRICE_TOL, axis=1)
        cutters = frozenset(int(i) for i in np.flatnonzero(cut))
        if cutters:
            state.tau2 = period
            state.punishers = cutters
            for i in state.first_droppers & cutters:
                state.eligible[i] = False
            state.phase = Phase.SECOND_DROPPED
            logger.debug("Second drop at period %d by sellers %s", period, sorted(cutters))

    state.previous_prices = prices.copy()
    state.last_period = period
    return state


def observe_period(
    state: MechanismState,
    prices: Sequence[float],
    quantities: Sequence[float],
    profits: Sequence[float] | None,
    period: int,
) -> MechanismState:
    """Advance a single-platform rule by one period.

    Raises:
        ProtocolError: If ``period`` does not follow the last observed period
    """
    if state.n_platforms != 1:
        raise ValueError("observe_period is for single-platform rules")
    p = _as_matrix(prices, state.n_sellers, 1)
    q = _as_matrix(quantities, state.n_sellers, 1)
    if profits is None and state.config.variant is Variant.SIMPLIFIED_AI:
        raise ValueError("SIMPLIFIED_AI rule needs per-seller profits")
    return _advance(state, period, p, q, None if profits is None else np.asarray(profits))


def observe_period_multiplatform(
    state: MechanismState,
    price_matrix: Sequence[Sequence[float]],
    quantity_matrix: Sequence[Sequence[float]],
    period: int,
) -> MechanismState:
    """Advance a multi-platform rule; a cut on any platform counts."""
    p = _as_matrix(price_matrix, state.n_sellers, state.n_platforms)
    q = _as_matrix(quantity_matrix, state.n_sellers, state.n_platforms)
    return _advance(state, period, p, q, None)


def eligibility_check(
    state: MechanismState,
    seller: int,
    price: float | Sequence[float],
    quantity: float | Sequence[float],
    period: int,
) -> bool:
    """Whether ``seller`` still qualifies for the guarantee at ``period``.

    Updates ``state.eligible``; a violation is permanent.
    """
    if seller not in state.first_droppers or not state.eligible[seller]:
        return False
    p = np.atleast_1d(np.asarray(price, dtype=np.float64))
    q = np.atleast_1d(np.asarray(quantity, dtype=np.float64))
    locked_p = state.locked_price[seller]
    locked_q = state.locked_quantity[seller]

    if state.config.variant is Variant.SIMPLIFIED_AI:
        ok = bool(np.all(np.abs(p - locked_p) <= PRICE_TOL))
    elif state.phase is not Phase.SECOND_DROPPED or period < state.tau2:
        ok = True
    elif period == state.tau2:
        ok = bool(
            np.all(np.abs(p - locked_p) <= PRICE_TOL)
            and np.all(q <= locked_q + QUANTITY_TOL)
        )
    else:
        low, high = state.band
        ok = bool(
            np.all((p >= low - PRICE_TOL) & (p <= high + PRICE_TOL))
            and np.all(q <= locked_q + QUANTITY_TOL)
        )

    if not ok:
        state.eligible[seller] = False
        logger.debug("Seller %d lost eligibility at period %d", seller, period)
    return ok


def compute_topup(
    state: MechanismState,
    seller: int,
    price: float,
    quantity: float,
    config: MechanismConfig,
    platform: int = 0,
) -> float:
    """Per-unit top-up restoring the locked profit (simplified) or revenue.

    Raises:
        DegenerateInputError: If ``quantity`` is not positive
    """
    if quantity <= 0:
        raise DegenerateInputError(
            f"Top-up undefined at zero sales (seller {seller}, quantity {quantity})"
        )
    locked_p = float(state.locked_price[seller][platform])
    locked_q = float(state.locked_quantity[seller][platform])
    if config.variant is Variant.SIMPLIFIED_AI:
        cp = config.cost_estimate[seller]
        topup = locked_q * (locked_p - cp) / quantity - (price - cp)
    else:
        topup = locked_p * locked_q / quantity - price
    return max(0.0, topup)


def _pay_topups(
    state: MechanismState,
    ledger: TopupLedger,
    period: int,
    prices: np.ndarray,
    quantities: np.ndarray,
) -> np.ndarray:
    topups = np.zeros_like(prices)
    for seller in sorted(state.first_droppers):
        if state.tau1 is None or period < state.tau1:
            continue
        if not eligibility_check(state, seller, prices[seller], quantities[seller], period):
            continue
        if state.phase is not Phase.SECOND_DROPPED:
            continue
        for j in range(state.n_platforms):
            try:
                topup = compute_topup(
                    state, seller, prices[seller, j], quantities[seller, j], state.config, j
                )
            except DegenerateInputError as e:
                logger.warning("No top-up paid: %s", e)
                continue
            topups[seller, j] = topup
            ledger.record(TopupEntry(period, seller, j, topup, float(quantities[seller, j])))
    return topups


class TwoStageRule:
    """Single-platform rule (PLATFORM_FULL or SIMPLIFIED_AI) with its ledger.

    Usage:
        rule = TwoStageRule(config, n_sellers=2)
        for t in range(tau, horizon):
            topups = rule.step(t, prices, quantities, profits)
    """

    def __init__(self, config: MechanismConfig, n_sellers: int):
        if config.variant not in (Variant.PLATFORM_FULL, Variant.SIMPLIFIED_AI):
            raise ValueError(f"TwoStageRule does not run the {config.variant.value} variant")
        self.config = config
        self.n_sellers = n_sellers
        self.reset()

    def reset(self) -> None:
        self.state = MechanismState(config=self.config, n_sellers=self.n_sellers)
        self.ledger = TopupLedger()

    @property
    def phase(self) -> Phase:
        return self.state.phase

    def step(
        self,
        period: int,
        prices: Sequence[float],
        quantities: Sequence[float],
        profits: Sequence[float] | None = None,
    ) -> np.ndarray:
        """Observe one period and return the per-seller top-ups p_hat."""
        observe_period(self.state, prices, quantities, profits, period)
        p = _as_matrix(prices, self.n_sellers, 1)
        q = _as_matrix(quantities, self.n_sellers, 1)
        return _pay_topups(self.state, self.ledger, period, p, q)[:, 0]


class MultiPlatformRule:
    """PLATFORM_FULL logic over several platforms, with per-platform top-ups."""

    def __init__(self, config: MechanismConfig, n_sellers: int, n_platforms: int):
        if config.variant is not Variant.MULTI_PLATFORM:
            raise ValueError(f"MultiPlatformRule does not run the {config.variant.value} variant")
        self.config = config
        self.n_sellers = n_sellers
        self.n_platforms = n_platforms
        self.reset()

    def reset(self) -> None:
        self.state = MechanismState(
            config=self.config, n_sellers=self.n_sellers, n_platforms=self.n_platforms
        )
        self.ledger = TopupLedger()

    @property
    def phase(self) -> Phase:
        return self.state.phase

    def step(
        self,
        period: int,
        price_matrix: Sequence[Sequence[float]],
        quantity_matrix: Sequence[Sequence[float]],
    ) -> np.ndarray:
        """Observe one period and return the seller x platform top-ups."""
        observe_period_multiplatform(self.state, price_matrix, quantity_matrix, period)
        p = _as_matrix(price_matrix, self.n_sellers, self.n_platforms)
        q = _as_matrix(quantity_matrix, self.n_sellers, self.n_platforms)
        return _pay_topups(self.state, self.ledger, period, p, q)


# Direct market (Cournot)


@dataclass(frozen=True)
class PurchaseOffer:
    """Committed purchase of ``quantity`` units at ``price`` per unit."""

    seller: int
    quantity: float
    price: float

    @property
    def value(self) -> float:
        return self.quantity * self.price


@dataclass
class DirectMarketState:
    """State of the direct-market rule; quantity increases play the role of price cuts."""

    config: MechanismConfig
    n_sellers: int
    last_period: int | None = None
    previous_quantities: np.ndarray | None = None
    tau1: int | None = None
    tau2: int | None = None
    first_movers: frozenset[int] = frozenset()
    locked_quantity: dict[int, float] = field(default_factory=dict)
    locked_price: float | None = None
    punishers: frozenset[int] = frozenset()

    @property
    def phase(self) -> Phase:
        if self.tau2 is not None:
            return Phase.SECOND_DROPPED
        if self.tau1 is not None:
            return Phase.FIRST_DROPPED
        if self.last_period is None:
            return Phase.INACTIVE
        return Phase.BASELINE


def observe_direct_period(
    state: DirectMarketState,
    quantities: Sequence[float],
    params: CournotParams,
    period: int,
) -> DirectMarketState:
    """Advance the direct-market rule; increases are measured against the previous period."""
    q = np.asarray(quantities, dtype=np.float64)
    if q.shape != (state.n_sellers,):
        raise ValueError(f"Expected {state.n_sellers} quantities, got shape {q.shape}")
    tau = state.config.activation_period
    if state.last_period is None:
        if period != tau:
            raise ProtocolError(
                f"First observed period must be the activation period {tau}, got {period}"
            )
    elif period != state.last_period + 1:
        raise ProtocolError(
            f"Periods must be observed in order: expected {state.last_period + 1}, got {period}"
        )

    if state.previous_quantities is not None and state.tau2 is None:
        raised = frozenset(
            int(i) for i in np.flatnonzero(q > state.previous_quantities + QUANTITY_TOL)
        )
        if raised and state.tau1 is None:
            state.tau1 = period
            state.first_movers = raised
            state.locked_quantity = {i: float(q[i]) for i in raised}
            state.locked_price = cournot_price(q, params)
            logger.debug("First quantity increase at period %d by sellers %s", period, sorted(raised))
        elif raised:
            state.tau2 = period
            state.punishers = raised
            logger.debug("Second quantity increase at period %d by sellers %s", period, sorted(raised))

    state.previous_quantities = q.copy()
    state.last_period = period
    return state


def direct_market_guarantee(
    state: DirectMarketState, seller: int, period: int
) -> PurchaseOffer | None:
    """Purchase offer owed to ``seller`` at ``period``, if any."""
    if state.tau2 is None or period < state.tau2:
        return None
    if seller not in state.first_movers or seller in state.punishers:
        return None
    return PurchaseOffer(
        seller=seller, quantity=state.locked_quantity[seller], price=state.locked_price
    )


class DirectMarketRule:
    """Direct-market rule with a record of every honoured offer."""

    def __init__(self, config: MechanismConfig, params: CournotParams):
        if config.variant is not Variant.DIRECT_MARKET:
            raise ValueError(f"DirectMarketRule does not run the {config.variant.value} variant")
        self.config = config
        self.params = params
        self.reset()

    def reset(self) -> None:
        self.state = DirectMarketState(config=self.config, n_sellers=self.params.n_sellers)
        self.offers: list[tuple[int, PurchaseOffer]] = []

    @property
    def phase(self) -> Phase:
        return self.state.phase

    def step(self, period: int, quantities: Sequence[float]) -> dict[int, PurchaseOffer]:
        """Observe one period and return the offers honoured in it, by seller."""
        observe_direct_period(self.state, quantities, self.params, period)
        honoured = {}
        for seller in range(self.params.n_sellers):
            offer = direct_market_guarantee(self.state, seller, period)
            if offer is not None:
                honoured[seller] = offer
                self.offers.append((period, offer))
        return honoured
