"""Demand, quantity and profit for the three market models.

- monopoly-platform logit: ``logit_demand`` / ``profit``
- multi-platform logit: ``multiplatform_demand``
- direct-market Cournot: ``cournot_price`` / ``cournot_profit``

All functions are pure and safe to call from any thread.
"""

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ArrayLike = Sequence[float] | np.ndarray


@dataclass(frozen=True)
class MarketParams:
    """Demand-side and cost primitives of the logit market.

    Attributes:
        a0: Outside-option utility
        a: Per-seller product quality (utility units)
        c: Per-seller constant marginal cost
        mu: Logit scale parameter (> 0)
        outside_scaled_by_mu: If True, the outside term is exp(a0/mu) instead
            of exp(a0). Both coincide for a0 = 0.
    """

    a: tuple[float, ...] = (2.0, 2.0)
    c: tuple[float, ...] = (1.0, 1.0)
    a0: float = 0.0
    mu: float = 0.25
    outside_scaled_by_mu: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "a", tuple(float(x) for x in self.a))
        object.__setattr__(self, "c", tuple(float(x) for x in self.c))
        if len(self.a) < 2:
            raise ValueError(f"Need at least 2 sellers, got {len(self.a)}")
        if len(self.c) != len(self.a):
            raise ValueError(
                f"Cost vector length ({len(self.c)}) must match quality vector length "
                f"({len(self.a)})"
            )
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if any(ci < 0 for ci in self.c):
            raise ValueError(f"Marginal costs must be non-negative, got {self.c}")
        if not all(math.isfinite(x) for x in (*self.a, *self.c, self.a0, self.mu)):
            raise ValueError("Market parameters must be finite")

    @property
    def n_sellers(self) -> int:
        return len(self.a)

    @property
    def outside_exponent(self) -> float:
        return self.a0 / self.mu if self.outside_scaled_by_mu else self.a0


@dataclass(frozen=True)
class PriceGrid:
    """Equally spaced, strictly ascending price points (the action space)."""

    m: int = 15
    p_min: float = 1.0
    p_max: float = 2.1
    prices: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.m < 2:
            raise ValueError(f"Price grid needs at least 2 points, got m={self.m}")
        if not self.p_max > self.p_min:
            raise ValueError(f"Invalid price range: [{self.p_min}, {self.p_max}]")
        values = np.linspace(self.p_min, self.p_max, self.m)
        values.setflags(write=False)
        object.__setattr__(self, "prices", values)

    @property
    def step(self) -> float:
        return (self.p_max - self.p_min) / (self.m - 1)

    def price(self, index: int) -> float:
        if not 0 <= index < self.m:
            raise ValueError(f"Grid index {index} out of range [0, {self.m})")
        return float(self.prices[index])

    def index_of(self, price: float, tol: float = 1e-12) -> int:
        """Exact inverse of ``price``; raises if ``price`` is not a grid point."""
        index = self.nearest_index(price)
        if abs(self.prices[index] - price) > tol:
            raise ValueError(f"Price {price} is not a grid point")
        return index

    def nearest_index(self, price: float) -> int:
        """Index of the closest grid point (lower index on exact ties)."""
        return int(np.argmin(np.abs(self.prices - price)))


@dataclass(frozen=True)
class DemandResult:
    """Logit market shares.

    Attributes:
        shares: Per-seller share in (0, 1)
        outside_share: Share of the outside option
    """

    shares: np.ndarray
    outside_share: float


@dataclass(frozen=True)
class CournotParams:
    """Direct-market primitives.

    Attributes:
        Q: Market size (inverse demand p = Q - q)
        c: Per-seller marginal cost
        beta: Per-seller discount factor in [0, 1)
    """

    Q: float = 10.0
    c: tuple[float, ...] = (1.0, 1.0)
    beta: tuple[float, ...] = (0.95, 0.95)

    def __post_init__(self) -> None:
        object.__setattr__(self, "c", tuple(float(x) for x in self.c))
        object.__setattr__(self, "beta", tuple(float(x) for x in self.beta))
        if len(self.c) < 2:
            raise ValueError(f"Need at least 2 sellers, got {len(self.c)}")
        if len(self.beta) != len(self.c):
            raise ValueError(
                f"Discount vector length ({len(self.beta)}) must match cost vector length "
                f"({len(self.c)})"
            )
        if not self.Q > max(self.c):
            raise ValueError(f"Market size Q={self.Q} must exceed every cost {self.c}")
        if any(not 0 <= b < 1 for b in self.beta):
            raise ValueError(f"Discount factors must lie in [0, 1), got {self.beta}")

    @property
    def n_sellers(self) -> int:
        return len(self.c)


def _check_seller(i: int, n: int) -> None:
    if not 0 <= i < n:
        raise ValueError(f"Seller index {i} out of range [0, {n})")


def _as_prices(prices: ArrayLike, n: int) -> np.ndarray:
    p = np.asarray(prices, dtype=np.float64)
    if p.shape != (n,):
        raise ValueError(f"Expected {n} prices, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError(f"Prices must be finite, got {p.tolist()}")
    return p


def logit_demand(prices: ArrayLike, params: MarketParams) -> DemandResult:
    """Logit shares D_i(p) for a single platform.

    Exponents are shifted by their maximum before exponentiation so large
    user parameters cannot overflow.
    """
    p = _as_prices(prices, params.n_sellers)
    utilities = (np.asarray(params.a) - p) / params.mu
    outside = params.outside_exponent
    shift = max(float(utilities.max()), outside)
    weights = np.exp(utilities - shift)
    outside_weight = math.exp(outside - shift)
    denominator = weights.sum() + outside_weight
    return DemandResult(shares=weights / denominator, outside_share=outside_weight / denominator)


def profit(prices: ArrayLike, params: MarketParams, i: int) -> float:
    """Flow profit (p_i - c_i) * D_i(p) of seller ``i``."""
    _check_seller(i, params.n_sellers)
    p = _as_prices(prices, params.n_sellers)
    shares = logit_demand(p, params).shares
    return float((p[i] - params.c[i]) * shares[i])


def profits(prices: ArrayLike, params: MarketParams) -> np.ndarray:
    """Flow profits of every seller."""
    p = _as_prices(prices, params.n_sellers)
    return (p - np.asarray(params.c)) * logit_demand(p, params).shares


def multiplatform_demand(prices: ArrayLike, params: MarketParams) -> tuple[np.ndarray, float]:
    """Logit shares when every seller lists on several identical platforms.

    Args:
        prices: Seller x platform price matrix

    Returns:
        (share matrix of the same shape, outside share). A seller's total
        demand is the row sum.
    """
    p = np.asarray(prices, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != params.n_sellers or p.shape[1] < 1:
        raise ValueError(
            f"Expected a {params.n_sellers} x n_platforms price matrix, got shape {p.shape}"
        )
    if not np.all(np.isfinite(p)):
        raise ValueError("Prices must be finite")
    utilities = (np.asarray(params.a)[:, None] - p) / params.mu
    outside = params.outside_exponent
    shift = max(float(utilities.max()), outside)
    weights = np.exp(utilities - shift)
    outside_weight = math.exp(outside - shift)
    denominator = weights.sum() + outside_weight
    return weights / denominator, outside_weight / denominator


def multiplatform_profit(prices: ArrayLike, params: MarketParams, i: int) -> float:
    """Seller ``i``'s profit summed over platforms."""
    _check_seller(i, params.n_sellers)
    shares, _ = multiplatform_demand(prices, params)
    p = np.asarray(prices, dtype=np.float64)
    return float(np.sum((p[i] - params.c[i]) * shares[i]))


def _as_quantities(quantities: ArrayLike, n: int) -> np.ndarray:
    q = np.asarray(quantities, dtype=np.float64)
    if q.shape != (n,):
        raise ValueError(f"Expected {n} quantities, got shape {q.shape}")
    for i, qi in enumerate(q):
        if qi < 0:
            raise ValueError(f"Quantity q_{i} = {qi} must be non-negative")
    return q


def cournot_price(quantities: ArrayLike, params: CournotParams) -> float:
    """Inverse demand p = Q - sum(q). May be negative; callers decide admissibility."""
    q = _as_quantities(quantities, params.n_sellers)
    return params.Q - float(q.sum())


def cournot_profit(quantities: ArrayLike, params: CournotParams, i: int) -> float:
    """pi_i(q) = (Q - sum_j q_j) q_i - c_i q_i."""
    _check_seller(i, params.n_sellers)
    q = _as_quantities(quantities, params.n_sellers)
    return (cournot_price(q, params) - params.c[i]) * float(q[i])


def cournot_profits(quantities: ArrayLike, params: CournotParams) -> np.ndarray:
    q = _as_quantities(quantities, params.n_sellers)
    return (cournot_price(q, params) - np.asarray(params.c)) * q
