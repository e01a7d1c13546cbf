"""Compiled inner loops for training.

Everything here works on plain arrays so numba can compile it and release
the GIL. The Python classes in ``qlearning``, ``mechanism`` and ``env`` are
the reference semantics; these kernels must reproduce them bit for bit.

Random draws are never made inside a kernel. Callers pass pre-drawn blocks
(exploration uniforms and uniform random actions per agent) so results do
not depend on how work is split across calls or threads.
"""

import math

import numpy as np
from numba import njit

VARIANT_SIMPLIFIED_AI = 0
VARIANT_PLATFORM_FULL = 1

STATUS_RUNNING = 0
STATUS_CONVERGED = 1
STATUS_CAPPED = 2

PRICE_TOL = 1e-12
QUANTITY_TOL = 1e-12

# Mechanism state vector: [phase, tau1, tau2] followed by per-seller slots.
_HEADER = 3
SLOT_DROPPER = 0
SLOT_PUNISHER = 1
SLOT_ELIGIBLE = 2
SLOT_LOCKED = 3
SLOT_BASELINE = 4
SLOT_PREVIOUS = 5
_N_SLOTS = 6


@njit(nogil=True, cache=True)
def q_update(values, best, state, action, reward, next_state, alpha, delta):
    """Q(s,a) <- (1 - alpha) Q(s,a) + alpha (r + delta max_a' Q(s',a')).

    ``best`` caches the per-state argmax (lowest index on ties) and is kept
    in sync. Returns True when the argmax of ``state`` changed.
    """
    target = reward + delta * values[next_state, best[next_state]]
    values[state, action] = (1.0 - alpha) * values[state, action] + alpha * target
    old = best[state]
    new = np.argmax(values[state])
    best[state] = new
    return new != old


@njit(nogil=True, cache=True)
def flag_combo(first_drop, i_was_first, first_price_index, second_drop, mech_first):
    """Dense index of an admissible flag combination (4 + 2m of them)."""
    if not first_drop:
        return 1 if mech_first else 0
    if not i_was_first:
        return 2 + (1 if second_drop else 0)
    return 4 + 2 * first_price_index + (1 if second_drop else 0)


@njit(nogil=True, cache=True)
def slot(kind, seller, n_sellers):
    return _HEADER + kind * n_sellers + seller


@njit(nogil=True, cache=True)
def new_mechanism_state(n_sellers):
    """Fresh (ints, floats) pair; floats hold locked quantities then reference profits."""
    ints = np.zeros(_HEADER + _N_SLOTS * n_sellers, dtype=np.int64)
    ints[1] = -1
    ints[2] = -1
    for i in range(n_sellers):
        ints[slot(SLOT_LOCKED, i, n_sellers)] = -1
        ints[slot(SLOT_BASELINE, i, n_sellers)] = -1
        ints[slot(SLOT_PREVIOUS, i, n_sellers)] = -1
    floats = np.zeros(2 * n_sellers)
    return ints, floats


@njit(nogil=True, cache=True)
def mechanism_step(
    period, actions, profits, quantities, prices, variant, cost_estimate, tau, ints, floats, topups
):
    """One period of the single-platform rule on grid indices; fills ``topups``."""
    n = actions.shape[0]
    for i in range(n):
        topups[i] = 0.0
    phase = ints[0]

    band_lo = -1
    band_hi = -1
    if phase == 3 and period > ints[2]:
        band_lo = prices.shape[0]
        for i in range(n):
            if ints[slot(SLOT_PUNISHER, i, n)] == 1:
                idx = ints[slot(SLOT_PREVIOUS, i, n)]
                band_lo = min(band_lo, idx)
                band_hi = max(band_hi, idx)

    if period == tau:
        for i in range(n):
            floats[n + i] = profits[i]
    elif period == tau + 1:
        for i in range(n):
            ints[slot(SLOT_BASELINE, i, n)] = actions[i]
        ints[0] = 1
    elif phase == 1:
        dropped = False
        for i in range(n):
            drop = actions[i] < ints[slot(SLOT_BASELINE, i, n)]
            if variant == VARIANT_SIMPLIFIED_AI:
                drop = drop and profits[i] > floats[n + i]
            if drop:
                ints[slot(SLOT_DROPPER, i, n)] = 1
                ints[slot(SLOT_ELIGIBLE, i, n)] = 1
                ints[slot(SLOT_LOCKED, i, n)] = actions[i]
                floats[i] = quantities[i]
                dropped = True
        if dropped:
            ints[1] = period
            ints[0] = 2
    elif phase == 2:
        cut = False
        for i in range(n):
            if actions[i] < ints[slot(SLOT_PREVIOUS, i, n)]:
                ints[slot(SLOT_PUNISHER, i, n)] = 1
                if ints[slot(SLOT_DROPPER, i, n)] == 1:
                    ints[slot(SLOT_ELIGIBLE, i, n)] = 0
                cut = True
        if cut:
            ints[2] = period
            ints[0] = 3

    if ints[1] >= 0:
        for i in range(n):
            if ints[slot(SLOT_DROPPER, i, n)] == 0 or ints[slot(SLOT_ELIGIBLE, i, n)] == 0:
                continue
            locked = ints[slot(SLOT_LOCKED, i, n)]
            if variant == VARIANT_SIMPLIFIED_AI:
                ok = actions[i] == locked
            elif ints[0] != 3:
                ok = True
            elif period == ints[2]:
                ok = actions[i] == locked and quantities[i] <= floats[i] + QUANTITY_TOL
            else:
                ok = (
                    actions[i] >= band_lo
                    and actions[i] <= band_hi
                    and quantities[i] <= floats[i] + QUANTITY_TOL
                )
            if not ok:
                ints[slot(SLOT_ELIGIBLE, i, n)] = 0
                continue
            if ints[0] == 3 and quantities[i] > 0:
                locked_p = prices[locked]
                locked_q = floats[i]
                price = prices[actions[i]]
                if variant == VARIANT_SIMPLIFIED_AI:
                    cp = cost_estimate[i]
                    topup = locked_q * (locked_p - cp) / quantities[i] - (price - cp)
                else:
                    topup = locked_p * locked_q / quantities[i] - price
                topups[i] = max(0.0, topup)

    for i in range(n):
        ints[slot(SLOT_PREVIOUS, i, n)] = actions[i]


@njit(nogil=True, cache=True)
def agent_state(ints, seller, n_sellers, base, n_base, mech_first):
    """State index of ``seller``'s view given the mechanism state vector."""
    phase = ints[0]
    combo = flag_combo(
        phase >= 2,
        ints[slot(SLOT_DROPPER, seller, n_sellers)] == 1,
        ints[slot(SLOT_LOCKED, seller, n_sellers)],
        phase == 3,
        mech_first,
    )
    return combo * n_base + base


@njit(nogil=True, cache=True)
def phase1_block(
    values0, best0, values1, best1, last_change, profit_table, base, iteration,
    alpha, delta, beta, threshold, cap, explore0, random0, explore1, random1,
):
    """Mechanism-off training for up to one block of iterations.

    Returns:
        (status, iteration, base state) where status is one of STATUS_*
    """
    m = profit_table.shape[0]
    for k in range(explore0.shape[0]):
        eps = math.exp(-beta * iteration)
        s = base
        a0 = random0[k] if explore0[k] < eps else best0[s]
        a1 = random1[k] if explore1[k] < eps else best1[s]
        nxt = a0 * m + a1
        if q_update(values0, best0, s, a0, profit_table[a0, a1, 0], nxt, alpha, delta):
            last_change[0] = iteration
        if q_update(values1, best1, s, a1, profit_table[a0, a1, 1], nxt, alpha, delta):
            last_change[1] = iteration
        iteration += 1
        base = nxt
        if iteration - last_change[0] >= threshold and iteration - last_change[1] >= threshold:
            return STATUS_CONVERGED, iteration, base
        if iteration >= cap:
            return STATUS_CAPPED, iteration, base
    return STATUS_RUNNING, iteration, base


@njit(nogil=True, cache=True)
def phase2_block(
    values0, best0, values1, best1, last_change, profit_table, quantity_table, prices,
    variant, cost_estimate, tau, episode_length, iteration, alpha, delta, beta,
    first_actions, explore0, random0, explore1, random1,
):
    """Mechanism experiments: one episode per row of ``first_actions``.

    Period 0 prices come from ``first_actions``; periods 1.. are chosen
    epsilon-greedily and learned from. Returns the updated iteration count.
    """
    m = prices.shape[0]
    n_base = m * m
    actions = np.empty(2, dtype=np.int64)
    profits = np.empty(2)
    quantities = np.empty(2)
    topups = np.empty(2)
    for e in range(first_actions.shape[0]):
        ints, floats = new_mechanism_state(2)
        base = first_actions[e, 0] * m + first_actions[e, 1]
        for t in range(1, episode_length):
            k = t - 1
            mech_first = t == tau + 1
            s0 = agent_state(ints, 0, 2, base, n_base, mech_first)
            s1 = agent_state(ints, 1, 2, base, n_base, mech_first)
            eps = math.exp(-beta * iteration)
            actions[0] = random0[e, k] if explore0[e, k] < eps else best0[s0]
            actions[1] = random1[e, k] if explore1[e, k] < eps else best1[s1]
            for i in range(2):
                profits[i] = profit_table[actions[0], actions[1], i]
                quantities[i] = quantity_table[actions[0], actions[1], i]
            r0 = profits[0]
            r1 = profits[1]
            if t >= tau:
                mechanism_step(
                    t, actions, profits, quantities, prices, variant, cost_estimate,
                    tau, ints, floats, topups,
                )
                r0 += topups[0] * quantities[0]
                r1 += topups[1] * quantities[1]
            base = actions[0] * m + actions[1]
            next_first = t + 1 == tau + 1
            n0 = agent_state(ints, 0, 2, base, n_base, next_first)
            n1 = agent_state(ints, 1, 2, base, n_base, next_first)
            if q_update(values0, best0, s0, actions[0], r0, n0, alpha, delta):
                last_change[0] = iteration
            if q_update(values1, best1, s1, actions[1], r1, n1, alpha, delta):
                last_change[1] = iteration
            iteration += 1
    return iteration
