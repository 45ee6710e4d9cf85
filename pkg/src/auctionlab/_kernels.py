"""Compiled inner loop of a trial.

Uniform draws are read sequentially from ``u`` starting at ``pos`` in the
same order the pure-Python path consumes ``Generator.random()``:
bidder selections in index order, then the tie-break draw if any.
"""

import numpy as np
from numba import njit

STOP_POLICY = 0
STOP_WINNING_BID = 1


@njit(cache=True)
def argmax_lowest(row):
    best = 0
    for j in range(1, row.shape[0]):
        if row[j] > row[best]:
            best = j
    return best


@njit(cache=True)
def boltzmann_index(row, beta, u):
    n = row.shape[0]
    m = row[0]
    for j in range(1, n):
        if row[j] > m:
            m = row[j]
    cdf = np.empty(n)
    acc = 0.0
    for j in range(n):
        acc += np.exp((row[j] - m) / beta)
        cdf[j] = acc
    target = u * cdf[n - 1]
    for j in range(n):
        if cdf[j] > target:
            return j
    return n - 1


@njit(cache=True)
def counterfactual_row(first_price, grid, rival_max, rival_count, rewards, next_idx):
    """Fill expected rewards and counterfactual winning-bid indices per action."""
    n = grid.shape[0]
    for b in range(n):
        if b < rival_max:
            rewards[b] = 0.0
            next_idx[b] = rival_max
        else:
            price = grid[b] if first_price else grid[rival_max]
            r = 1.0 - price
            if b == rival_max:
                r = r / (rival_count + 1)
            rewards[b] = r
            next_idx[b] = b


@njit(cache=True)
def run_episodes(
    q, greedy, u, pos, t, t_stop, state, param, prev_at_floor, stable,
    grid, first_price, asynchronous, feedback, egreedy,
    alpha, gamma, decay, floor, window,
    win_out, price_out, bids_out, record_bids, stop_rule, last_top,
):
    """Run episodes ``t .. t_stop-1`` or until ``u`` runs short or convergence.

    ``stop_rule`` selects what must stay unchanged over the window: the
    realized winning bid (``STOP_WINNING_BID``) or every bidder's greedy
    action in every state (``STOP_POLICY``).

    Returns ``(t, pos, state, param, prev_at_floor, stable, converged,
    last_top)``;
    on convergence ``t`` is the index of the declaring episode, otherwise
    the next episode to run.
    """
    n_agents = q.shape[0]
    n_actions = q.shape[2]
    need = 2 * n_agents + 1
    bids = np.empty(n_agents, dtype=np.int64)
    counts = np.zeros(n_actions, dtype=np.int64)
    cf_r = np.empty(n_actions)
    cf_next = np.empty(n_actions, dtype=np.int64)
    targets = np.empty(n_actions)

    while t < t_stop:
        if pos + need > u.shape[0]:
            break

        for i in range(n_agents):
            row = q[i, state]
            if egreedy:
                if u[pos] < param:
                    a = int(u[pos + 1] * n_actions)
                    if a > n_actions - 1:
                        a = n_actions - 1
                    pos += 2
                else:
                    a = argmax_lowest(row)
                    pos += 1
            else:
                a = boltzmann_index(row, param, u[pos])
                pos += 1
            bids[i] = a

        for j in range(n_actions):
            counts[j] = 0
        top = 0
        for i in range(n_agents):
            counts[bids[i]] += 1
            if bids[i] > top:
                top = bids[i]
        k = counts[top]
        if k >= 2:
            pick = int(u[pos] * k)
            pos += 1
            seen = 0
            winner = 0
            for i in range(n_agents):
                if bids[i] == top:
                    if seen == pick:
                        winner = i
                        break
                    seen += 1
        else:
            winner = 0
            for i in range(n_agents):
                if bids[i] == top:
                    winner = i
                    break

        if first_price or k >= 2:
            price_idx = top
        else:
            price_idx = 0
            for j in range(top - 1, -1, -1):
                if counts[j] > 0:
                    price_idx = j
                    break
        win_reward = 1.0 - grid[price_idx]
        next_state = top if feedback else 0

        changed = False
        for i in range(n_agents):
            row = q[i, state]
            if asynchronous:
                r = win_reward if i == winner else 0.0
                nrow = q[i, next_state]
                nmax = nrow[0]
                for j in range(1, n_actions):
                    if nrow[j] > nmax:
                        nmax = nrow[j]
                a = bids[i]
                row[a] = (1.0 - alpha) * row[a] + alpha * (r + gamma * nmax)
            else:
                counts[bids[i]] -= 1
                rival_max = 0
                for j in range(n_actions - 1, -1, -1):
                    if counts[j] > 0:
                        rival_max = j
                        break
                rival_count = counts[rival_max]
                counts[bids[i]] += 1
                counterfactual_row(first_price, grid, rival_max, rival_count, cf_r, cf_next)
                for b in range(n_actions):
                    s_next = cf_next[b] if feedback else 0
                    nrow = q[i, s_next]
                    nmax = nrow[0]
                    for j in range(1, n_actions):
                        if nrow[j] > nmax:
                            nmax = nrow[j]
                    targets[b] = (1.0 - alpha) * row[b] + alpha * (cf_r[b] + gamma * nmax)
                for b in range(n_actions):
                    row[b] = targets[b]
            g = argmax_lowest(row)
            if g != greedy[i, state]:
                greedy[i, state] = g
                changed = True

        if stop_rule == STOP_WINNING_BID:
            changed = top != last_top
            last_top = top
        at_floor = param <= floor
        if changed or not prev_at_floor:
            stable = 0
        else:
            stable += 1
        prev_at_floor = at_floor
        param = param * decay
        if param < floor:
            param = floor

        win_out[t] = top
        price_out[t] = price_idx
        if record_bids:
            for i in range(n_agents):
                bids_out[t, i] = bids[i]
        state = next_state

        if stable >= window:
            return t, pos, state, param, prev_at_floor, stable, True, last_top
        t += 1

    return t, pos, state, param, prev_at_floor, stable, False, last_top
