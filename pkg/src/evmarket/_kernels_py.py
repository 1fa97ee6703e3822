"""Pure-Python/numpy reference versions of the hot kernels.

Each function here has a twin with the same signature in ``_kernels.pyx``;
``evmarket.kernels`` picks the compiled one when it imports.  Both follow
the same arithmetic order closely enough that results agree to rounding.
"""

import math

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
STATUS_OK = 0
STATUS_BUDGET = 1


def splitmix64(state):
    """Advance a splitmix64 state; returns (new_state, uniform in [0, 1))."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    z = z ^ (z >> 31)
    return state, (z >> 11) * (1.0 / 9007199254740992.0)


def waiting_hours(free, group, slots, k_ch):
    if free > 0:
        if free >= group:
            return 0.0
        return k_ch * group / (slots + free)
    return k_ch * (abs(free) + group) / slots


def _best(i, cost, price, loc, sid, free, slots, groups, ww, k_ch, cur):
    m = cost.shape[1]
    if cur >= 0:
        best = cur
        u_best = -(cost[i, cur] + ww * waiting_hours(free[cur], groups[cur], slots[cur], k_ch))
    else:
        best = -1
        u_best = -math.inf
    for j in range(m):
        if j == cur:
            continue
        c = cost[i, j]
        if c == math.inf:
            continue
        u = -(c + ww * waiting_hours(free[j], groups[j] + 1, slots[j], k_ch))
        if best < 0:
            best, u_best = j, u
            continue
        tol = 1e-9 * (1.0 + abs(u_best))
        if u > u_best + tol:
            best, u_best = j, u
        elif u >= u_best - tol and best != cur:
            key = (price[i, j], loc[j], sid[j])
            if key < (price[i, best], loc[best], sid[best]):
                best, u_best = j, u
    return best


def cssg_solve(cost, price, loc, sid, free, slots, base_group, ww, k_ch,
               assign, seed, max_revisions):
    """Synchronous-round best-response dynamics with stamp arbitration.

    ``assign`` (station index per EV, -1 for none) is updated in place.
    Returns (revisions, rounds, status).
    """
    n, m = cost.shape
    groups = np.array(base_group, dtype=np.int64)
    for i in range(n):
        if assign[i] >= 0:
            groups[assign[i]] += 1
    satisfied = np.zeros(n, dtype=bool)
    state = int(seed) & _MASK
    revisions = 0
    rounds = 0
    while True:
        rounds += 1
        winner = -1
        winner_to = -1
        top = -1.0
        for i in range(n):
            if satisfied[i]:
                continue
            cur = assign[i]
            b = _best(i, cost, price, loc, sid, free, slots, groups, ww, k_ch, cur)
            if b != cur:
                state, stamp = splitmix64(state)
                if stamp > top:
                    top, winner, winner_to = stamp, i, b
        if winner < 0:
            return revisions, rounds, STATUS_OK
        if revisions >= max_revisions:
            return revisions, rounds, STATUS_BUDGET
        old = assign[winner]
        if old >= 0:
            groups[old] -= 1
        groups[winner_to] += 1
        assign[winner] = winner_to
        revisions += 1
        satisfied[:] = False
        satisfied[winner] = True


def stability_violations(cost, free, slots, base_group, ww, k_ch, assign):
    """Count EVs that strictly gain by a unilateral move (exhaustive check)."""
    n, m = cost.shape
    groups = np.array(base_group, dtype=np.int64)
    for i in range(n):
        groups[assign[i]] += 1
    bad = 0
    for i in range(n):
        cur = assign[i]
        if cost[i, cur] == math.inf:
            bad += 1
            continue
        u_cur = -(cost[i, cur] + ww * waiting_hours(free[cur], groups[cur], slots[cur], k_ch))
        tol = 1e-9 * (1.0 + abs(u_cur))
        for j in range(m):
            if j == cur or cost[i, j] == math.inf:
                continue
            u = -(cost[i, j] + ww * waiting_hours(free[j], groups[j] + 1, slots[j], k_ch))
            if u > u_cur + tol:
                bad += 1
                break
    return bad


def mlp_forward(W1, b1, W2, b2, X):
    hidden = np.maximum(X @ W1.T + b1, 0.0)
    return hidden @ W2.T + b2


def mlp_grad_step(W1, b1, W2, b2, X, actions, targets, lr):
    """One SGD step on mean squared TD error, through taken actions only.

    Parameters are updated in place; the pre-step loss is returned.
    """
    n = X.shape[0]
    pre = X @ W1.T + b1
    hidden = np.maximum(pre, 0.0)
    q = hidden @ W2.T + b2
    rows = np.arange(n)
    err = q[rows, actions] - targets
    loss = float(np.mean(err * err))
    dq = np.zeros_like(q)
    dq[rows, actions] = 2.0 * err / n
    gW2 = dq.T @ hidden
    gb2 = dq.sum(axis=0)
    dh = (dq @ W2) * (pre > 0)
    gW1 = dh.T @ X
    gb1 = dh.sum(axis=0)
    W2 -= lr * gW2
    b2 -= lr * gb2
    W1 -= lr * gW1
    b1 -= lr * gb1
    return loss
