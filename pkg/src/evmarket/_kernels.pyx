# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_kernels_py.py`` for the reference versions."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, fabs
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef int STATUS_OK = 0
cdef int STATUS_BUDGET = 1


cdef inline uint64_t _mix(uint64_t* state) nogil:
    state[0] += <uint64_t>0x9E3779B97F4A7C15
    cdef uint64_t z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


def splitmix64(state):
    cdef uint64_t s = <uint64_t>(int(state) & 0xFFFFFFFFFFFFFFFF)
    cdef uint64_t z = _mix(&s)
    return int(s), (z >> 11) * (1.0 / 9007199254740992.0)


cdef inline double _wait(int64_t free, int64_t group, int64_t slots, double k_ch) nogil:
    if free > 0:
        if free >= group:
            return 0.0
        return k_ch * group / (slots + free)
    if free < 0:
        free = -free
    return k_ch * (free + group) / slots


def waiting_hours(free, group, slots, k_ch):
    return _wait(free, group, slots, k_ch)


cdef inline bint _key_less(double p1, double l1, int64_t s1,
                           double p2, double l2, int64_t s2) nogil:
    if p1 != p2:
        return p1 < p2
    if l1 != l2:
        return l1 < l2
    return s1 < s2


cdef Py_ssize_t _best(Py_ssize_t i, double[:, ::1] cost, double[:, ::1] price,
                      double[::1] loc, int64_t[::1] sid, int64_t[::1] free,
                      int64_t[::1] slots, int64_t[::1] groups, double ww,
                      double k_ch, Py_ssize_t cur) nogil:
    cdef Py_ssize_t m = cost.shape[1]
    cdef Py_ssize_t j, best
    cdef double u, u_best, c, tol
    if cur >= 0:
        best = cur
        u_best = -(cost[i, cur] + ww * _wait(free[cur], groups[cur], slots[cur], k_ch))
    else:
        best = -1
        u_best = -INFINITY
    for j in range(m):
        if j == cur:
            continue
        c = cost[i, j]
        if c == INFINITY:
            continue
        u = -(c + ww * _wait(free[j], groups[j] + 1, slots[j], k_ch))
        if best < 0:
            best = j
            u_best = u
            continue
        tol = 1e-9 * (1.0 + fabs(u_best))
        if u > u_best + tol:
            best = j
            u_best = u
        elif u >= u_best - tol and best != cur:
            if _key_less(price[i, j], loc[j], sid[j], price[i, best], loc[best], sid[best]):
                best = j
                u_best = u
    return best


def cssg_solve(double[:, ::1] cost, double[:, ::1] price, double[::1] loc,
               int64_t[::1] sid, int64_t[::1] free, int64_t[::1] slots,
               int64_t[::1] base_group, double ww, double k_ch,
               int64_t[::1] assign, seed, int64_t max_revisions):
    cdef Py_ssize_t n = cost.shape[0]
    cdef Py_ssize_t m = cost.shape[1]
    cdef Py_ssize_t i, b, winner, winner_to, old
    cdef int64_t revisions = 0, rounds = 0
    cdef double stamp, top
    cdef uint64_t state = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    groups_arr = np.array(base_group, dtype=np.int64)
    cdef int64_t[::1] groups = groups_arr
    sat_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] satisfied = sat_arr
    with nogil:
        for i in range(n):
            if assign[i] >= 0:
                groups[assign[i]] += 1
        while True:
            rounds += 1
            winner = -1
            winner_to = -1
            top = -1.0
            for i in range(n):
                if satisfied[i]:
                    continue
                b = _best(i, cost, price, loc, sid, free, slots, groups, ww, k_ch, assign[i])
                if b != assign[i]:
                    stamp = (_mix(&state) >> 11) * (1.0 / 9007199254740992.0)
                    if stamp > top:
                        top = stamp
                        winner = i
                        winner_to = b
            if winner < 0:
                break
            if revisions >= max_revisions:
                with gil:
                    return revisions, rounds, STATUS_BUDGET
            old = assign[winner]
            if old >= 0:
                groups[old] -= 1
            groups[winner_to] += 1
            assign[winner] = winner_to
            revisions += 1
            for i in range(n):
                satisfied[i] = 0
            satisfied[winner] = 1
    return revisions, rounds, STATUS_OK


def stability_violations(double[:, ::1] cost, int64_t[::1] free, int64_t[::1] slots,
                         int64_t[::1] base_group, double ww, double k_ch,
                         int64_t[::1] assign):
    cdef Py_ssize_t n = cost.shape[0]
    cdef Py_ssize_t m = cost.shape[1]
    cdef Py_ssize_t i, j, cur
    cdef int64_t bad = 0
    cdef double u, u_cur, tol
    groups_arr = np.array(base_group, dtype=np.int64)
    cdef int64_t[::1] groups = groups_arr
    for i in range(n):
        groups[assign[i]] += 1
    for i in range(n):
        cur = assign[i]
        if cost[i, cur] == INFINITY:
            bad += 1
            continue
        u_cur = -(cost[i, cur] + ww * _wait(free[cur], groups[cur], slots[cur], k_ch))
        tol = 1e-9 * (1.0 + fabs(u_cur))
        for j in range(m):
            if j == cur or cost[i, j] == INFINITY:
                continue
            u = -(cost[i, j] + ww * _wait(free[j], groups[j] + 1, slots[j], k_ch))
            if u > u_cur + tol:
                bad += 1
                break
    return bad


def mlp_forward(double[:, ::1] W1, double[::1] b1, double[:, ::1] W2,
                double[::1] b2, double[:, ::1] X):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t h = W1.shape[0], a = W2.shape[0]
    cdef Py_ssize_t r, k, l
    cdef double acc
    out_arr = np.empty((n, a), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    hid_arr = np.empty(h, dtype=np.float64)
    cdef double[::1] hid = hid_arr
    with nogil:
        for r in range(n):
            for k in range(h):
                acc = b1[k]
                for l in range(d):
                    acc = acc + W1[k, l] * X[r, l]
                hid[k] = acc if acc > 0.0 else 0.0
            for l in range(a):
                acc = b2[l]
                for k in range(h):
                    acc = acc + W2[l, k] * hid[k]
                out[r, l] = acc
    return out_arr


def mlp_grad_step(double[:, ::1] W1, double[::1] b1, double[:, ::1] W2,
                  double[::1] b2, double[:, ::1] X, int64_t[::1] actions,
                  double[::1] targets, double lr):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t h = W1.shape[0], a = W2.shape[0]
    cdef Py_ssize_t r, k, l, act
    cdef double acc, q, err, g, loss = 0.0
    gW1_arr = np.zeros((h, d))
    gb1_arr = np.zeros(h)
    gW2_arr = np.zeros((a, h))
    gb2_arr = np.zeros(a)
    pre_arr = np.empty(h)
    hid_arr = np.empty(h)
    cdef double[:, ::1] gW1 = gW1_arr
    cdef double[::1] gb1 = gb1_arr
    cdef double[:, ::1] gW2 = gW2_arr
    cdef double[::1] gb2 = gb2_arr
    cdef double[::1] pre = pre_arr
    cdef double[::1] hid = hid_arr
    with nogil:
        for r in range(n):
            act = actions[r]
            for k in range(h):
                acc = b1[k]
                for l in range(d):
                    acc = acc + W1[k, l] * X[r, l]
                pre[k] = acc
                hid[k] = acc if acc > 0.0 else 0.0
            q = b2[act]
            for k in range(h):
                q = q + W2[act, k] * hid[k]
            err = q - targets[r]
            loss += err * err
            g = 2.0 * err / n
            gb2[act] += g
            for k in range(h):
                gW2[act, k] += g * hid[k]
                if pre[k] > 0.0:
                    gb1[k] += g * W2[act, k]
                    for l in range(d):
                        gW1[k, l] += g * W2[act, k] * X[r, l]
        for k in range(h):
            b1[k] -= lr * gb1[k]
            for l in range(d):
                W1[k, l] -= lr * gW1[k, l]
        for l in range(a):
            b2[l] -= lr * gb2[l]
            for k in range(h):
                W2[l, k] -= lr * gW2[l, k]
    return loss / n
