"""Reference schemes: orthogonal access, random pairing, equal rate split, and a
grid brute-force oracle for tiny instances."""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .channel import Link, Scenario, SystemConfig, _complex_normal, cnr_outage_threshold, path_loss
from .rates import solve_fixed_schedule
from .report import CONVERGED, INFEASIBLE, OPTIMAL, SolverReport
from .sic import Allocation, build_allocation, rate_to_gamma

OMA, RANDOM_PAIRING, EQUAL_RATE, ORACLE = "OMA", "RANDOM_PAIRING", "EQUAL_RATE", "ORACLE"
LN2 = np.log(2.0)


@dataclass
class BaselineSpec:
    kind: str
    c7_limit: int = 2
    grid_step: float = 0.25

    def __post_init__(self):
        if self.kind not in (OMA, RANDOM_PAIRING, EQUAL_RATE, ORACLE):
            raise ValueError(f"unknown baseline {self.kind!r}")
        if self.kind == OMA and self.c7_limit != 1:
            raise ValueError("OMA allows one user per subcarrier")
        if self.c7_limit not in (1, 2):
            raise ValueError("c7_limit must be 1 or 2")


# --- OMA ----------------------------------------------------------------------

def oma_scenario(scenario: Scenario, rng=None, scale_noise: bool = False) -> Scenario:
    """Same users on ``M`` subcarriers of width ``N_F / M`` times the original.

    Positions and demands carry over.  Demands are rescaled so the bit rate is
    unchanged, and channels and outage targets are redrawn.  Noise per
    subcarrier stays at the configured level unless ``scale_noise``.
    """
    cfg = scenario.config
    if scenario.distance_m is None:
        raise ValueError("scenario has no user distances to regenerate from")
    nf, M = scenario.shape
    factor = nf / M
    rng = np.random.default_rng([cfg.seed, 1]) if rng is None else rng
    noise_dbm = cfg.noise_dbm + (10.0 * np.log10(factor) if scale_noise else 0.0)
    new_cfg = SystemConfig(**{**cfg.__dict__, "n_subcarriers": M,
                              "subcarrier_bw_hz": cfg.subcarrier_bw_hz * factor,
                              "noise_dbm": noise_dbm})
    dist = np.asarray(scenario.distance_m, float)
    lo, hi = np.log(cfg.outage_range[0]), np.log(cfg.outage_range[1])
    delta = np.exp(rng.uniform(lo, hi, size=(M, M)))
    pl = path_loss(dist, cfg)
    h_hat = _complex_normal(rng, (1.0 - cfg.err_var) / pl, size=(M, M))
    err = cfg.err_var / pl
    noise = new_cfg.noise_w
    links = [[Link(complex(h_hat[i, k]), float(err[k]), noise, float(delta[i, k]),
                   cnr_outage_threshold(h_hat[i, k], err[k], noise, delta[i, k]))
              for k in range(M)] for i in range(M)]
    return Scenario(new_cfg, links, scenario.rate_total / factor, dist)


def min_cost_assignment(cost):
    """Exact one-to-one assignment; returns (rows, cols, total)."""
    cost = np.asarray(cost, float)
    rows, cols = linear_sum_assignment(cost)
    return rows, cols, float(cost[rows, cols].sum())


def solve_oma(scenario: Scenario, rng=None, regenerate: bool = True, scale_noise: bool = False,
              use_dc: bool = True):
    """Orthogonal access: at most one user per subcarrier.

    With ``regenerate`` the link grid is rebuilt on ``M`` subcarriers first.
    The D.C. solver runs with a per-subcarrier limit of one.  When subcarriers
    and users are equal in number, the exact assignment is computed as well,
    and the cheaper of the two allocations is returned.
    """
    from .dc import solve_dc

    t0 = time.perf_counter()
    sc = oma_scenario(scenario, rng, scale_noise) if regenerate else scenario
    beta, R = sc.beta, sc.rate_total
    nf, M = beta.shape
    best, best_power, notes = None, np.inf, {"n_subcarriers": nf}
    if use_dc:
        alloc, rep = solve_dc(sc, limit=1)
        notes["dc_power"] = rep.objective
        notes["dc_status"] = rep.status
        if alloc is not None:
            best, best_power = alloc, alloc.total_power
    if nf == M:
        cost = rate_to_gamma(R)[None, :] / beta
        rows, cols, total = min_cost_assignment(cost)
        notes["assignment_power"] = total
        if total < best_power:
            s = np.zeros((nf, M), bool)
            s[rows, cols] = True
            rates = np.where(s, R[None, :], 0.0)
            best, best_power = build_allocation(s, rates, beta), total
    notes["seconds"] = time.perf_counter() - t0
    if best is None:
        return None, SolverReport("oma", INFEASIBLE, 0, np.inf, notes=notes)
    return best, SolverReport("oma", CONVERGED, 1, best_power, [best_power], best, notes)


# --- random pairing -----------------------------------------------------------

def random_pairing_schedule(n_subcarriers: int, n_users: int, rng) -> np.ndarray:
    """Random covering schedule with every subcarrier carrying two users.

    Users are dealt into the ``2 N_F`` slots in random order; leftover slots
    get random users not already on that subcarrier.
    """
    if n_users > 2 * n_subcarriers:
        raise ValueError("more users than slots: no covering pairing exists")
    s = np.zeros((n_subcarriers, n_users), bool)
    slots = rng.permutation(2 * n_subcarriers) // 2
    users = rng.permutation(n_users)
    for u, i in zip(users, slots):
        s[i, u] = True
    for i in slots[n_users:]:
        free = np.flatnonzero(~s[i])
        if n_users > 1 and s[i].sum() < 2:
            s[i, rng.choice(free)] = True
    return s


def solve_random_pairing(scenario: Scenario, rng=None, schedule=None):
    rng = np.random.default_rng([scenario.config.seed, 2]) if rng is None else rng
    beta, R = scenario.beta, scenario.rate_total
    s = random_pairing_schedule(*beta.shape, rng) if schedule is None else np.asarray(schedule, bool)
    alloc, power = solve_fixed_schedule(s, beta, R)
    if alloc is None:
        return None, SolverReport("random", INFEASIBLE, 0, np.inf)
    return alloc, SolverReport("random", OPTIMAL, 1, power, [power], alloc)


# --- equal rate split ---------------------------------------------------------

def _pair_matrix(beta):
    mx = np.maximum(beta[:, :, None], beta[:, None, :])
    return np.triu(1.0 / mx, 1)


def equal_rate_power(s, beta, rate_total, _w=None) -> np.ndarray:
    """Power of schedule(s) ``s`` (..., N_F, M) when each user splits its demand
    equally over its subcarriers; ``inf`` for schedules leaving a user out."""
    s = np.asarray(s, bool)
    beta = np.asarray(beta, float)
    R = np.asarray(rate_total, float)
    k = s.sum(axis=-2, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        g = np.where(s, rate_to_gamma(R / np.maximum(k, 1)), 0.0)
        w = _pair_matrix(beta) if _w is None else _w
        p = np.sum(g / beta, axis=(-2, -1)) + np.einsum("...im,imn,...in->...", g, w, g)
    covered = np.all((k > 0) | (R == 0), axis=(-2, -1))
    return np.where(covered, p, np.inf)


def _row_options(M, limit):
    return [c for k in range(limit + 1) for c in itertools.combinations(range(M), k)]


def _all_schedules(nf, M, limit):
    opts = _row_options(M, limit)
    rows = np.zeros((len(opts), M), bool)
    for j, c in enumerate(opts):
        rows[j, list(c)] = True
    idx = np.array(list(itertools.product(range(len(opts)), repeat=nf)), int)
    return rows[idx]


def _greedy_equal_rate(beta, R, limit, w):
    nf, M = beta.shape
    s = np.zeros((nf, M), bool)
    for m in np.argsort(-R, kind="stable"):
        room = s.sum(axis=1) < limit
        if not room.any():
            return None
        s[int(np.argmax(np.where(room, beta[:, m], -np.inf))), m] = True
    cost = equal_rate_power(s, beta, R, w)
    improved = True
    while improved:
        improved = False
        for cand in _neighbours(s, limit):
            c = equal_rate_power(cand, beta, R, w)
            if c < cost * (1 - 1e-12):
                s, cost, improved = cand, c, True
                break
    return s


def _neighbours(s, limit):
    nf, M = s.shape
    load = s.sum(axis=1)
    for i, m in itertools.product(range(nf), range(M)):
        if not s[i, m] and load[i] < limit:
            t = s.copy(); t[i, m] = True
            yield t
        if s[i, m]:
            if s[:, m].sum() > 1:
                t = s.copy(); t[i, m] = False
                yield t
            for j in range(nf):
                if j != i and not s[j, m] and load[j] < limit:
                    t = s.copy(); t[i, m] = False; t[j, m] = True
                    yield t
    for (i, m), (j, n) in itertools.combinations(zip(*np.nonzero(s)), 2):
        if i != j and m != n and not s[i, n] and not s[j, m]:
            t = s.copy()
            t[i, m] = t[j, n] = False
            t[i, n] = t[j, m] = True
            yield t


def solve_equal_rate(scenario: Scenario, limit: int = 2, exhaustive_limit: int = 16):
    """Best schedule when each user's demand is split equally over its
    subcarriers.  Exhaustive for ``N_F * M <= exhaustive_limit``, otherwise
    greedy construction followed by add/drop/move/swap local search."""
    beta, R = scenario.beta, scenario.rate_total
    nf, M = beta.shape
    w = _pair_matrix(beta)
    heuristic = nf * M > exhaustive_limit
    if heuristic:
        s = _greedy_equal_rate(beta, R, limit, w)
    else:
        cands = _all_schedules(nf, M, limit)
        costs = equal_rate_power(cands, beta, R, w)
        j = int(np.argmin(costs))
        s = cands[j] if np.isfinite(costs[j]) else None
    if s is None:
        return None, SolverReport("equal_rate", INFEASIBLE, 0, np.inf, notes={"heuristic": heuristic})
    k = s.sum(axis=0)
    rates = np.where(s, R / np.maximum(k, 1), 0.0)
    alloc = build_allocation(s, rates, beta)
    status = CONVERGED if heuristic else OPTIMAL
    return alloc, SolverReport("equal_rate", status, 1, alloc.total_power, [alloc.total_power],
                               alloc, {"heuristic": heuristic})


# --- brute-force oracle -------------------------------------------------------

def _shift(F, axis, k, n):
    """``out[c] = min F[c']`` over states c' that reach c after adding ``k``
    units on ``axis`` (saturating at ``n``)."""
    out = np.full(F.shape, np.inf)
    sl = [slice(None)] * F.ndim
    if n - k > 0:
        dst = list(sl); dst[axis] = slice(k, n)
        src = list(sl); src[axis] = slice(0, n - k)
        out[tuple(dst)] = F[tuple(src)]
    top = list(sl); top[axis] = n
    lo = list(sl); lo[axis] = slice(max(n - k, 0), n + 1)
    out[tuple(top)] = F[tuple(lo)].min(axis=axis)
    return out


def _pair_cost(bm, bn, gm, gn):
    """Closed-form pair power with the stronger user decoding by SIC."""
    big = np.maximum(bm, bn)
    return gm / bm + gn / bn + gm * gn / big


def brute_force_oracle(scenario, grid_step: float = 0.25, limit: int = 2, rate_total=None,
                       force: bool = False):
    """Grid optimum over all schedules and rate splits.

    User ``m``'s demand is cut into ``ceil(R_m / grid_step)`` equal units, so
    every grid point meets the demand exactly.  A dynamic program over the
    subcarriers tracks the units delivered per user.  Returns
    ``(allocation, value)``, or ``(None, inf)`` when no schedule covers
    every user.
    """
    if rate_total is None:
        beta, R = scenario.beta, scenario.rate_total
    else:
        beta, R = np.asarray(scenario, float), np.asarray(rate_total, float)
    beta = np.atleast_2d(beta)
    nf, M = beta.shape
    if not force and (nf > 3 or M > 4 or grid_step < 0.25):
        raise ValueError("oracle limited to N_F <= 3, M <= 4, grid_step >= 0.25")
    units = np.maximum(np.ceil(R / grid_step - 1e-9).astype(int), 0)
    step = np.where(units > 0, R / np.maximum(units, 1), 0.0)
    shape = tuple(units + 1)

    def gam(m, k):
        return np.exp2(k * step[m]) - 1.0

    F = np.full(shape, np.inf)
    F[(0,) * M] = 0.0
    stages = [F]
    for i in range(nf):
        G = F.copy()
        for m in range(M):
            for k in range(1, units[m] + 1):
                G = np.minimum(G, _shift(F, m, k, units[m]) + gam(m, k) / beta[i, m])
        if limit >= 2:
            for m, n in itertools.combinations(range(M), 2):
                for km in range(1, units[m] + 1):
                    A = _shift(F, m, km, units[m])
                    for kn in range(1, units[n] + 1):
                        c = _pair_cost(beta[i, m], beta[i, n], gam(m, km), gam(n, kn))
                        G = np.minimum(G, _shift(A, n, kn, units[n]) + c)
        F = G
        stages.append(F)
    target = tuple(units)
    value = float(F[target])
    if not np.isfinite(value):
        return None, np.inf

    # walk back through the stages to recover one optimal schedule
    s = np.zeros((nf, M), bool)
    rates = np.zeros((nf, M))
    state = np.array(target)
    for i in range(nf - 1, -1, -1):
        prev, here = stages[i], stages[i + 1][tuple(state)]
        found = _backtrack(prev, here, state, i, beta, units, gam, limit)
        state, acts = found
        for m, k in acts:
            s[i, m] = True
            rates[i, m] = k * step[m]
    return build_allocation(s, rates, beta), value


def _predecessors(state, acts, units):
    """All states that reach ``state`` under the unit additions ``acts``."""
    ranges = []
    for m, c in enumerate(state):
        k = dict(acts).get(m, 0)
        if k == 0:
            ranges.append([c])
        elif c < units[m]:
            ranges.append([c - k] if c - k >= 0 else [])
        else:
            ranges.append(range(max(units[m] - k, 0), units[m] + 1))
    return itertools.product(*ranges)


def _backtrack(prev, here, state, i, beta, units, gam, limit):
    M = len(units)
    tol = 1e-9 * max(1.0, abs(here))
    options = [()]
    options += [((m, k),) for m in range(M) for k in range(1, units[m] + 1)]
    if limit >= 2:
        options += [((m, km), (n, kn)) for m, n in itertools.combinations(range(M), 2)
                    for km in range(1, units[m] + 1) for kn in range(1, units[n] + 1)]
    for acts in options:
        if len(acts) == 0:
            cost = 0.0
        elif len(acts) == 1:
            (m, k), = acts
            cost = gam(m, k) / beta[i, m]
        else:
            (m, km), (n, kn) = acts
            cost = _pair_cost(beta[i, m], beta[i, n], gam(m, km), gam(n, kn))
        for p in _predecessors(state, acts, units):
            if abs(prev[p] + cost - here) <= tol:
                return np.array(p), acts
    raise RuntimeError("oracle backtracking failed")


def oracle_slack(scenario, grid_step: float = 0.25, rate_total=None) -> float:
    """Upper bound on (oracle value - true optimum).

    Rounding the optimal rates to the unit grid with sums preserved moves
    each link rate by less than one unit.  The bound multiplies that by the
    largest rate derivative of the link's subcarrier power over the box
    ``0 <= r <= R``, taken over all possible partners.
    """
    if rate_total is None:
        beta, R = scenario.beta, scenario.rate_total
    else:
        beta, R = np.asarray(scenario, float), np.asarray(rate_total, float)
    beta = np.atleast_2d(beta)
    nf, M = beta.shape
    units = np.maximum(np.ceil(R / grid_step - 1e-9), 1)
    step = R / units
    top = np.exp2(R)
    L = LN2 * top[None, :] / beta                       # solo
    for m, n in itertools.permutations(range(M), 2):
        bm, bn = beta[:, m], beta[:, n]
        strong = bm >= bn
        # m decodes by SIC: d/dr_m of a*b/bm
        as_strong = LN2 * top[m] * top[n] / bm
        # m is the weak user: d/dr_m of a*b/bn' + a*(1/bm - 1/bn')
        as_weak = LN2 * (top[m] * top[n] / bn + top[m] * (1.0 / bm - 1.0 / bn))
        L[:, m] = np.maximum(L[:, m], np.where(strong, as_strong, as_weak))
    return float(np.sum(L * step[None, :]))
