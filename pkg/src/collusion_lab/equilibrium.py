"""Static Nash equilibria, best responses and incentive diagnostics.

Logit side: the profit-maximising price of seller i given its opponents
solves the fixed-point identity p = c_i + mu / (1 - D_i(p)). The best
response is found by bracketing that identity; the joint equilibrium by
damped simultaneous best-response iteration.

Cournot side: the interior equilibrium is a linear system.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq, minimize

from collusion_lab.errors import SolverError, UnsupportedParametersError
from collusion_lab.market import CournotParams, MarketParams, logit_demand, profits

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-10
DEFAULT_MAX_ITERATIONS = 100_000
DAMPING = 0.5
DIRECTION_TOLERANCE = 1e-12
_POLISH_STEPS = 200


@dataclass(frozen=True)
class NashSolution:
    """Static Nash price vector with solver diagnostics.

    Attributes:
        prices: Equilibrium price per seller
        residuals: Per-seller residual of p_i - c_i - mu / (1 - D_i(p))
        iterations: Best-response sweeps used
    """

    prices: np.ndarray
    residuals: np.ndarray
    iterations: int

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residuals)))


def _opponent_log_mass(opponent_prices: np.ndarray, params: MarketParams, i: int) -> float:
    """log(sum_{j != i} exp((a_j - p_j)/mu) + exp(outside)). Opponents at +inf drop out."""
    a_others = np.delete(np.asarray(params.a), i)
    terms = np.append((a_others - opponent_prices) / params.mu, params.outside_exponent)
    return float(np.logaddexp.reduce(terms))


def _check_opponents(opponent_prices: Sequence[float], params: MarketParams, i: int) -> np.ndarray:
    if not 0 <= i < params.n_sellers:
        raise ValueError(f"Seller index {i} out of range [0, {params.n_sellers})")
    p = np.asarray(opponent_prices, dtype=np.float64)
    if p.shape != (params.n_sellers - 1,):
        raise ValueError(
            f"Expected {params.n_sellers - 1} opponent prices, got shape {p.shape}"
        )
    if np.any(np.isnan(p)) or np.any(p == -np.inf):
        raise ValueError(f"Invalid opponent prices: {p.tolist()}")
    return p


def best_response_price(
    opponent_prices: Sequence[float], params: MarketParams, i: int
) -> float:
    """Unique profit-maximising price of seller ``i`` against fixed opponents.

    Args:
        opponent_prices: Prices of the other sellers in seller order (``i``
            omitted). ``+inf`` marks an absent opponent.
        params: Market primitives
        i: Seller index

    Raises:
        SolverError: If the bracketing solve does not converge
    """
    p_others = _check_opponents(opponent_prices, params, i)
    log_mass = _opponent_log_mass(p_others, params, i)
    a_i, c_i, mu = params.a[i], params.c[i], params.mu

    def identity(p: float) -> float:
        # mu / (1 - D_i) == mu * (1 + exp(u_i - log_mass))
        return p - c_i - mu * (1.0 + math.exp((a_i - p) / mu - log_mass))

    upper = c_i + mu * (1.0 + math.exp((a_i - c_i) / mu - log_mass))
    try:
        return float(brentq(identity, c_i, upper, xtol=1e-15, maxiter=500))
    except (RuntimeError, ValueError) as e:
        raise SolverError(
            f"Best response for seller {i} did not converge: {e}",
            last_iterate=np.array([upper]),
            residuals=np.array([identity(upper)]),
        ) from e


def foc_residuals(prices: Sequence[float], params: MarketParams) -> np.ndarray:
    """Residual p_i - c_i - mu / (1 - D_i(p)) for every seller."""
    p = np.asarray(prices, dtype=np.float64)
    shares = logit_demand(p, params).shares
    return p - np.asarray(params.c) - params.mu / (1.0 - shares)


def _best_responses(p: np.ndarray, params: MarketParams) -> np.ndarray:
    return np.array(
        [best_response_price(np.delete(p, i), params, i) for i in range(params.n_sellers)]
    )


def nash_prices(
    params: MarketParams,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    tolerance: float = DEFAULT_TOLERANCE,
) -> NashSolution:
    """Static Bertrand-logit Nash equilibrium.

    Damped simultaneous best-response iteration from c + mu. If it stalls,
    falls back to sequential (Gauss-Seidel) best responses.

    Raises:
        SolverError: If neither scheme reaches ``tolerance``
    """
    p = np.asarray(params.c) + params.mu
    iterations = 0
    residuals = foc_residuals(p, params)
    while np.max(np.abs(residuals)) > tolerance and iterations < max_iterations:
        p = (1.0 - DAMPING) * p + DAMPING * _best_responses(p, params)
        residuals = foc_residuals(p, params)
        iterations += 1

    if np.max(np.abs(residuals)) > tolerance:
        logger.warning(
            "Damped iteration stalled after %d sweeps (residual %.3e); trying sequential sweeps",
            iterations,
            np.max(np.abs(residuals)),
        )
        for _ in range(max_iterations):
            for i in range(params.n_sellers):
                p[i] = best_response_price(np.delete(p, i), params, i)
            residuals = foc_residuals(p, params)
            iterations += 1
            if np.max(np.abs(residuals)) <= tolerance:
                break
        else:
            raise SolverError(
                f"Nash solver did not converge after {iterations} sweeps",
                last_iterate=p.copy(),
                residuals=residuals,
            )

    # Polish to round-off so derivative signs at the solution read as zero.
    best = np.max(np.abs(residuals))
    for _ in range(_POLISH_STEPS):
        candidate = (1.0 - DAMPING) * p + DAMPING * _best_responses(p, params)
        candidate_residuals = foc_residuals(candidate, params)
        if np.max(np.abs(candidate_residuals)) >= best:
            break
        p, residuals = candidate, candidate_residuals
        best = np.max(np.abs(residuals))

    logger.debug("Nash prices %s after %d sweeps (residual %.2e)", p, iterations, best)
    return NashSolution(prices=p, residuals=residuals, iterations=iterations)


def price_incentive_direction(prices: Sequence[float], params: MarketParams, i: int) -> int:
    """Sign of d pi_i / d p_i at ``prices`` (0 when below 1e-12 in magnitude).

    d pi_i / d p_i = D_i * (1 - (p_i - c_i)(1 - D_i) / mu)
    """
    if not 0 <= i < params.n_sellers:
        raise ValueError(f"Seller index {i} out of range [0, {params.n_sellers})")
    p = np.asarray(prices, dtype=np.float64)
    share = logit_demand(p, params).shares[i]
    derivative = share * (1.0 - (p[i] - params.c[i]) * (1.0 - share) / params.mu)
    if abs(derivative) < DIRECTION_TOLERANCE:
        return 0
    return 1 if derivative > 0 else -1


def monopoly_prices(params: MarketParams) -> np.ndarray:
    """Price vector maximising joint profit."""
    start = nash_prices(params).prices
    result = minimize(
        lambda p: -float(profits(p, params).sum()),
        x0=start,
        method="L-BFGS-B",
        bounds=[(ci, None) for ci in params.c],
        options={"ftol": 1e-15, "gtol": 1e-12},
    )
    if not result.success:
        raise SolverError(
            f"Joint-profit maximisation failed: {result.message}",
            last_iterate=np.asarray(result.x),
            residuals=np.asarray(result.jac),
        )
    return np.asarray(result.x)


def cournot_nash_quantities(params: CournotParams) -> np.ndarray:
    """Interior Cournot equilibrium from 2 q_i + sum_{j != i} q_j = Q - c_i.

    Raises:
        UnsupportedParametersError: If any equilibrium quantity is not positive
    """
    n = params.n_sellers
    system = np.eye(n) + np.ones((n, n))
    quantities = np.linalg.solve(system, params.Q - np.asarray(params.c))
    if np.any(quantities <= 0):
        raise UnsupportedParametersError(
            f"Cournot equilibrium is a corner solution: q = {quantities.tolist()}"
        )
    return quantities


def cournot_aggregate_quantity(params: CournotParams) -> float:
    """(I Q - sum c) / (I + 1)."""
    n = params.n_sellers
    return (n * params.Q - sum(params.c)) / (n + 1)


def quantity_incentive_margin(quantities: Sequence[float], params: CournotParams, i: int) -> float:
    """Q - sum_{j != i} q_j - c_i - 2 q_i, the marginal profit of raising q_i."""
    if not 0 <= i < params.n_sellers:
        raise ValueError(f"Seller index {i} out of range [0, {params.n_sellers})")
    q = np.asarray(quantities, dtype=np.float64)
    others = float(q.sum()) - float(q[i])
    return params.Q - others - params.c[i] - 2.0 * float(q[i])


def quantity_incentive_direction(quantities: Sequence[float], params: CournotParams, i: int) -> int:
    margin = quantity_incentive_margin(quantities, params, i)
    if abs(margin) < DIRECTION_TOLERANCE:
        return 0
    return 1 if margin > 0 else -1


def cournot_best_response(quantities: Sequence[float], params: CournotParams, i: int) -> float:
    """max(0, (Q - sum_{j != i} q_j - c_i) / 2)."""
    if not 0 <= i < params.n_sellers:
        raise ValueError(f"Seller index {i} out of range [0, {params.n_sellers})")
    q = np.asarray(quantities, dtype=np.float64)
    others = float(q.sum()) - float(q[i])
    return max(0.0, (params.Q - others - params.c[i]) / 2.0)


def cournot_best_response_profit(
    quantities: Sequence[float], params: CournotParams, i: int
) -> float:
    q = np.asarray(quantities, dtype=np.float64).copy()
    q[i] = cournot_best_response(q, params, i)
    others = float(q.sum()) - float(q[i])
    return (params.Q - others - q[i] - params.c[i]) * q[i]


def grid_best_response(
    grid_values: np.ndarray,
    profile: Sequence[float],
    i: int,
    payoff: Callable[[np.ndarray, int], float],
) -> tuple[int, float]:
    """Discrete best response of seller ``i`` over ``grid_values``.

    Returns:
        (grid index, payoff) with the lowest index winning ties
    """
    trial = np.asarray(profile, dtype=np.float64).copy()
    values = np.empty(len(grid_values))
    for k, value in enumerate(grid_values):
        trial[i] = value
        values[k] = payoff(trial, i)
    best = int(np.argmax(values))
    return best, float(values[best])
