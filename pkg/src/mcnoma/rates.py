"""Optimal rate split for a fixed user schedule.

Once the schedule is fixed, write ``a = 2**r_m`` and ``b = 2**r_n`` for a pair
with ``beta_m >= beta_n``.  The pair power becomes::

    a*b / beta_m + b * (1/beta_n - 1/beta_m) - 1/beta_n

which is a nonnegative combination of exponentials of linear functions of the
rates, hence convex.  Solo users cost ``(2**r - 1) / beta``.  The demand
constraints ``sum_i r_im >= R_m`` are linear, so the problem is a smooth convex
program handled here with SLSQP.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import minimize

from .sic import build_allocation

LN2 = np.log(2.0)


class _RateProblem:
    def __init__(self, s, beta, rate_total):
        s = np.asarray(s) > 0
        self.s = s
        self.beta = np.asarray(beta, float)
        self.R = np.asarray(rate_total, float)
        self.links = np.argwhere(s)              # (k, 2) rows of (i, m)
        self.nvar = len(self.links)
        pos = -np.ones(s.shape, dtype=int)
        pos[s] = np.arange(self.nvar)
        solo, big, small = [], [], []
        for i in range(s.shape[0]):
            idx = np.flatnonzero(s[i])
            if idx.size == 1:
                solo.append(pos[i, idx[0]])
            elif idx.size == 2:
                a, b = idx
                if self.beta[i, a] < self.beta[i, b]:
                    a, b = b, a
                big.append(pos[i, a])
                small.append(pos[i, b])
            elif idx.size > 2:
                raise ValueError("more than two users scheduled on a subcarrier")
        self.solo = np.array(solo, int)
        self.big = np.array(big, int)
        self.small = np.array(small, int)
        lb = self.beta[tuple(self.links.T)] if self.nvar else np.zeros(0)
        self.b_link = lb
        self.user = self.links[:, 1] if self.nvar else np.zeros(0, int)

    def power(self, r):
        bl = self.b_link
        val = np.sum(np.expm1(LN2 * r[self.solo]) / bl[self.solo])
        if self.big.size:
            rm, rn = r[self.big], r[self.small]
            bm, bn = bl[self.big], bl[self.small]
            val += np.sum(np.exp2(rm + rn) / bm + np.exp2(rn) * (1.0 / bn - 1.0 / bm) - 1.0 / bn)
        return float(val)

    def grad(self, r):
        g = np.zeros(self.nvar)
        bl = self.b_link
        g[self.solo] = LN2 * np.exp2(r[self.solo]) / bl[self.solo]
        if self.big.size:
            rm, rn = r[self.big], r[self.small]
            bm, bn = bl[self.big], bl[self.small]
            ab = np.exp2(rm + rn) / bm
            g[self.big] = LN2 * ab
            g[self.small] = LN2 * (ab + np.exp2(rn) * (1.0 / bn - 1.0 / bm))
        return g


def solve_fixed_schedule(s, beta, rate_total, tol: float = 1e-12):
    """Minimum-power rates for schedule ``s``.

    Returns ``(allocation, power)``; ``(None, inf)`` when some user with
    positive demand has no subcarrier.
    """
    s = (np.asarray(s) > 0)
    beta = np.asarray(beta, float)
    R = np.asarray(rate_total, float)
    covered = s.any(axis=0)
    if np.any((R > 0) & ~covered):
        return None, np.inf
    prob = _RateProblem(s, beta, R)
    if prob.nvar == 0:
        alloc = build_allocation(s, np.zeros(s.shape), beta)
        return alloc, 0.0

    users = np.unique(prob.user)
    A = np.zeros((users.size, prob.nvar))
    for k, m in enumerate(users):
        A[k, prob.user == m] = 1.0
    rhs = R[users]
    # start from the equal split, which is feasible
    counts = A.sum(axis=1)
    r0 = (rhs / counts)[np.searchsorted(users, prob.user)]
    scale = max(prob.power(r0), 1e-300)
    res = minimize(lambda r: prob.power(r) / scale, r0, jac=lambda r: prob.grad(r) / scale,
                   method="SLSQP",
                   bounds=[(0.0, R[m]) for m in prob.user],
                   constraints=[{"type": "ineq", "fun": lambda r: A @ r - rhs, "jac": lambda r: A}],
                   options={"ftol": tol, "maxiter": 500})
    r = np.clip(res.x, 0.0, None)
    # restore demands exactly (SLSQP may leave ~1e-10 shortfalls)
    short = rhs - A @ r
    for k in np.flatnonzero(short > 0):
        sel = np.flatnonzero(A[k] > 0)
        r[sel] += short[k] / sel.size
    rates = np.zeros(s.shape)
    rates[tuple(prob.links.T)] = r
    alloc = build_allocation(s, rates, beta)
    return alloc, alloc.total_power


def local_search_schedule(s, beta, rate_total, limit: int = 2, row_pairs: bool = True,
                          time_limit: float | None = None, cache: dict | None = None):
    """Descent over schedules, each scored by its optimal rate split.

    Moves rewrite one subcarrier's user set, then (with ``row_pairs``) two
    subcarriers at once.  Returns ``(schedule, power)``; ``cache`` maps
    schedule bytes to power and may be shared between calls.
    """
    import itertools
    import time

    t0 = time.perf_counter()
    beta = np.asarray(beta, float)
    s = np.asarray(s, bool).copy()
    nf, M = s.shape
    opts = [c for k in range(1, limit + 1) for c in itertools.combinations(range(M), k)]
    cache = {} if cache is None else cache

    def cost(t):
        key = t.tobytes()
        if key not in cache:
            cache[key] = solve_fixed_schedule(t, beta, rate_total)[1]
        return cache[key]

    def out_of_time():
        return time_limit is not None and time.perf_counter() - t0 > time_limit

    best = cost(s)
    while True:
        improved = False
        for i in range(nf):
            for o in opts:
                t = s.copy()
                t[i] = False
                t[i, list(o)] = True
                c = cost(t)
                if c < best * (1 - 1e-9):
                    s, best, improved = t, c, True
            if out_of_time():
                return s, best
        if improved:
            continue
        if not row_pairs:
            break
        for i, j in itertools.combinations(range(nf), 2):
            for a in opts:
                for b in opts:
                    t = s.copy()
                    t[i] = t[j] = False
                    t[i, list(a)] = True
                    t[j, list(b)] = True
                    c = cost(t)
                    if c < best * (1 - 1e-9):
                        s, best, improved = t, c, True
                if out_of_time():
                    return s, best
        if not improved:
            break
    return s, best
