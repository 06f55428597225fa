"""Global branch-and-bound on the penalised continuous reformulation.

Decision vector per subcarrier ``i``: ``v[i, :M] = gamma[i]`` and
``v[i, M:] = sbar[i]``.  The penalised objective is::

    G(sbar, gamma) = sum gamma/beta + sum_{m<n} gamma_m gamma_n / max(beta_m, beta_n)
                     + theta * sum gamma * (1 - sbar)

Bilinear terms are replaced by McCormick envelopes on the current box to get a
convex lower bound; boxes are bisected along their longest normalised edge.
"""
from __future__ import annotations

import heapq
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernel
from .kernel import ConvexProblem
from .rates import local_search_schedule, solve_fixed_schedule
from .report import BUDGET, INFEASIBLE, OPTIMAL, SolverReport
from .sic import Allocation, build_allocation, rate_to_gamma

log = logging.getLogger(__name__)

RECOVERY_THRESHOLD = 1e-6
LOCAL_SEARCH_SECONDS = 30.0


@dataclass
class Box:
    lower: np.ndarray      # (N_F, 2M)
    upper: np.ndarray

    @classmethod
    def initial(cls, rate_total, n_subcarriers):
        M = len(rate_total)
        lo = np.zeros((n_subcarriers, 2 * M))
        hi = np.empty((n_subcarriers, 2 * M))
        hi[:, :M] = rate_to_gamma(rate_total)
        hi[:, M:] = 1.0
        return cls(lo, hi)

    @property
    def width(self):
        return self.upper - self.lower

    def contains(self, v, tol=0.0):
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))


@dataclass(order=True)
class NodeRecord:
    local_lb: float
    seq: int
    box: Box = field(compare=False)
    local_ub: float = field(compare=False, default=np.inf)
    point: np.ndarray | None = field(compare=False, default=None)


# --- objective pieces ---------------------------------------------------------

def _pair_weights(beta):
    """Upper-triangular 1/max(beta_m, beta_n) per subcarrier, shape (N_F, M, M)."""
    mx = np.maximum(beta[:, :, None], beta[:, None, :])
    w = 1.0 / mx
    M = beta.shape[1]
    return w * np.triu(np.ones((M, M)), 1)


def penalty_objective(sbar, gamma, theta, beta) -> float:
    sbar = np.asarray(sbar, float)
    gamma = np.asarray(gamma, float)
    beta = np.asarray(beta, float)
    lin = np.sum(gamma / beta)
    pair = np.einsum("im,imn,in->", gamma, _pair_weights(beta), gamma)
    return float(lin + pair + theta * np.sum(gamma - sbar * gamma))


def mccormick_lower(sign, v, w, vL, vU, wL, wU):
    """Convex envelope of ``sign * v * w`` over ``[vL, vU] x [wL, wU]``."""
    v, w = np.asarray(v, float), np.asarray(w, float)
    if sign > 0:
        return np.maximum(vL * w + wL * v - vL * wL, vU * w + wU * v - vU * wU)
    return -np.minimum(vL * w + wU * v - vL * wU, vU * w + wL * v - vU * wL)


def branch(box: Box, init: Box) -> tuple[Box, Box]:
    """Bisect the longest normalised edge; ties go to the first (i, m)."""
    span = init.upper - init.lower
    with np.errstate(invalid="ignore", divide="ignore"):
        norm = np.where(span > 0, box.width / span, 0.0)
    k = int(np.argmax(norm))            # row-major argmax = lexicographic tie-break
    i, m = np.unravel_index(k, norm.shape)
    mid = 0.5 * (box.lower[i, m] + box.upper[i, m])
    left = Box(box.lower.copy(), box.upper.copy())
    right = Box(box.lower.copy(), box.upper.copy())
    left.upper[i, m] = mid
    right.lower[i, m] = mid
    return left, right


# --- lower-bounding problem ------------------------------------------------------

class _LBTemplate:
    """Sparsity pattern of the lower-bounding problem for fixed (N_F, M)."""

    def __init__(self, beta, rate_total, theta):
        self.beta = np.asarray(beta, float)
        self.R = np.asarray(rate_total, float)
        self.theta = float(theta)
        nf, M = self.beta.shape
        self.nf, self.M = nf, M
        self.n = nf * 2 * M
        ii, mm, nn = [], [], []
        for i in range(nf):
            for m in range(M):
                for n in range(m + 1, M):
                    ii.append(i); mm.append(m); nn.append(n)
        self.pi = np.array(ii, int)
        self.pm = np.array(mm, int)
        self.pn = np.array(nn, int)
        self.pw = 1.0 / np.maximum(self.beta[self.pi, self.pm], self.beta[self.pi, self.pn])
        gi, gm = np.divmod(np.arange(nf * M), M)
        self.gi, self.gm = gi, gm

    def gidx(self, i, m):
        return i * 2 * self.M + m

    def sidx(self, i, m):
        return i * 2 * self.M + self.M + m

    def build(self, box: Box) -> ConvexProblem:
        nf, M = self.nf, self.M
        lo, hi = box.lower, box.upper
        prob = ConvexProblem(self.n, lo.ravel(), hi.ravel())
        gi, gm = self.gi, self.gm
        gcol = self.gidx(gi, gm)
        scol = self.sidx(gi, gm)
        prob.add_linear(gcol, 1.0 / self.beta[gi, gm] + self.theta)

        # +gamma_m gamma_n envelopes
        v, w = self.gidx(self.pi, self.pm), self.gidx(self.pi, self.pn)
        vL, vU = lo[self.pi, self.pm], hi[self.pi, self.pm]
        wL, wU = lo[self.pi, self.pn], hi[self.pi, self.pn]
        # - sbar * gamma envelopes: v = sbar, w = gamma
        sv, sw = scol, gcol
        svL, svU = lo[gi, M + gm], hi[gi, M + gm]
        swL, swU = lo[gi, gm], hi[gi, gm]

        k1 = len(v)
        k2 = len(sv)
        rows = np.arange(k1 + k2)
        rows2 = np.concatenate([rows, rows])
        cols = np.concatenate([v, sv, w, sw])
        # affine 1 (sign +): vL*w + wL*v - vL*wL ; affine 2: vU*w + wU*v - vU*wU
        # sign -: max(-(vL*w + wU*v) + vL*wU, -(vU*w + wL*v) + vU*wL)
        c1v = np.concatenate([wL, -swU])
        c1w = np.concatenate([vL, -svL])
        b1 = np.concatenate([-vL * wL, svL * swU])
        c2v = np.concatenate([wU, -swL])
        c2w = np.concatenate([vU, -svU])
        b2 = np.concatenate([-vU * wU, svU * swL])
        shape = (k1 + k2, self.n)
        A1 = sp.csr_matrix((np.concatenate([c1v, c1w]), (rows2, cols)), shape=shape)
        A2 = sp.csr_matrix((np.concatenate([c2v, c2w]), (rows2, cols)), shape=shape)
        weights = np.concatenate([self.pw, np.full(k2, self.theta)])
        prob.add_max_affines(A1, b1, A2, b2, weights)

        for m in range(M):
            prob.add_sum_log(self.gidx(np.arange(nf), m), self.R[m])
        for i in range(nf):
            prob.add_le(self.sidx(i, np.arange(M)), np.ones(M), 2.0)
        return prob

    def split(self, x):
        v = np.asarray(x).reshape(self.nf, 2 * self.M)
        return v[:, self.M:], v[:, :self.M]      # sbar, gamma


def lower_bound_problem(box: Box, theta, scenario_or_beta, rate_total=None) -> ConvexProblem:
    beta, R = _unpack(scenario_or_beta, rate_total)
    return _LBTemplate(beta, R, theta).build(box)


def _unpack(scenario_or_beta, rate_total):
    if rate_total is None:
        return scenario_or_beta.beta, scenario_or_beta.rate_total
    return np.asarray(scenario_or_beta, float), np.asarray(rate_total, float)


def polish_sbar(sbar, gamma, box: Box):
    """Best ``sbar`` inside the box for fixed ``gamma``.

    Maximises ``sum gamma * sbar`` subject to ``sum_m sbar <= 2`` per subcarrier,
    a fractional knapsack solved greedily by decreasing ``gamma``.
    """
    M = gamma.shape[1]
    lo, hi = box.lower[:, M:], box.upper[:, M:]
    out = lo.copy()
    for i in range(gamma.shape[0]):
        room = 2.0 - lo[i].sum()
        for m in np.argsort(-gamma[i], kind="stable"):
            if room <= 0:
                break
            add = min(hi[i, m] - lo[i, m], room)
            out[i, m] += add
            room -= add
    return out


def tighten_box(box: Box, beta, rate_total, theta, ubd, passes: int = 3):
    """Shrink ``box`` without removing any point whose objective is below ``ubd``.

    Rules, each valid for every feasible point with G < ubd:
      * gamma/beta + theta*gamma*(1 - sbar_U) <= G  caps gamma;
      * theta*gamma_L*(1 - sbar) <= G  raises sbar;
      * sum_m sbar <= 2  caps sbar;
      * sum_i log2(1 + gamma) >= R  raises gamma.
    Returns the tightened box, or None when it is empty.
    """
    M = beta.shape[1]
    gL, gU = box.lower[:, :M].copy(), box.upper[:, :M].copy()
    sL, sU = box.lower[:, M:].copy(), box.upper[:, M:].copy()
    R = np.asarray(rate_total, float)
    for _ in range(passes):
        if np.isfinite(ubd):
            cap = ubd / (1.0 / beta + theta * (1.0 - sU))
            gU = np.minimum(gU, cap)
            with np.errstate(divide="ignore"):
                s_min = np.where(gL > 0, 1.0 - ubd / (theta * gL), -np.inf)
            sL = np.maximum(sL, s_min)
        sU = np.minimum(sU, 2.0 - (sL.sum(axis=1, keepdims=True) - sL))
        others = np.log2(1.0 + gU).sum(axis=0, keepdims=True) - np.log2(1.0 + gU)
        need = np.exp2(R[None, :] - others) - 1.0
        gL = np.maximum(gL, need)
        if np.any(gL > gU * (1 + 1e-12) + 1e-12) or np.any(sL > sU + 1e-12):
            return None
    gL = np.minimum(gL, gU)
    sL = np.minimum(sL, sU)
    return Box(np.hstack([gL, sL]), np.hstack([gU, sU]))


# --- recovery ---------------------------------------------------------------------

def recover_binary(gamma, beta, rate_total=None, threshold=RECOVERY_THRESHOLD) -> Allocation:
    """Map a relaxed point to a binary allocation (s = 1 iff gamma > threshold)."""
    gamma = np.asarray(gamma, float)
    s = gamma > threshold
    if np.any(s.sum(axis=1) > 2):
        raise ValueError("recovered schedule puts more than two users on a subcarrier")
    r = np.where(s, np.log2(1.0 + np.where(s, gamma, 0.0)), 0.0)
    if rate_total is not None:
        # absorb solver-tolerance shortfalls so demands hold exactly
        R = np.asarray(rate_total, float)
        have = r.sum(axis=0)
        k = s.sum(axis=0)
        short = np.where((k > 0) & (have < R), R - have, 0.0)
        r = r + s * np.where(k > 0, short / np.maximum(k, 1), 0.0)
    return build_allocation(s, r, beta)


# --- main loop -------------------------------------------------------------------------

@dataclass
class BnbState:
    lbd: float
    ubd: float
    incumbent: np.ndarray | None
    iteration: int = 0
    trace: list = field(default_factory=list)


def default_theta(scenario_or_beta, rate_total=None) -> float:
    from .dc import initial_objective
    beta, R = _unpack(scenario_or_beta, rate_total)
    return 10.0 * initial_objective(beta, R)


def solve_bnb(scenario, theta=None, eps: float = 0.01, node_budget: int = 200_000,
              kernel_tol: float = 1e-7, heuristic: bool = True, tighten: bool = True,
              warm_start: bool = False, local_search: bool = True,
              time_limit: float | None = None, rate_total=None):
    """Best-first branch and bound with McCormick lower bounds.

    Options beyond the plain scheme, all of which keep the bounds valid:

    ``heuristic``
        re-solve the rates exactly for the schedule read off each relaxed
        optimum; only ever lowers UBD.
    ``tighten``
        shrink every child box with :func:`tighten_box` before bounding it.
    ``warm_start``
        seed UBD with the D.C. solver's allocation.
    ``local_search``
        seed UBD by schedule descent from a greedy equal-rate schedule
        (see :func:`mcnoma.rates.local_search_schedule`).

    Returns ``(allocation, report)``.
    """
    beta, R = _unpack(scenario, rate_total)
    nf, M = beta.shape
    t0 = time.perf_counter()
    if theta is None:
        theta = default_theta(beta, R)
    tpl = _LBTemplate(beta, R, theta)
    init = Box.initial(R, nf)
    ubd = np.inf
    inc_gamma = None
    if warm_start:
        from .dc import solve_dc
        dc_alloc, _ = solve_dc(beta, rate_total=R)
        if dc_alloc is not None:
            ubd = dc_alloc.total_power
            inc_gamma = rate_to_gamma(dc_alloc.r) * dc_alloc.s

    if local_search:
        from .baselines import _greedy_equal_rate, _pair_matrix
        start = _greedy_equal_rate(beta, R, 2, _pair_matrix(beta))
        if start is not None:
            budget = LOCAL_SEARCH_SECONDS if time_limit is None else min(LOCAL_SEARCH_SECONDS,
                                                                         0.25 * time_limit)
            sched, _ = local_search_schedule(start, beta, R, time_limit=budget)
            alloc, pw = solve_fixed_schedule(sched, beta, R)
            if alloc is not None and pw < ubd:
                ubd, inc_gamma = pw, rate_to_gamma(alloc.r) * alloc.s

    seen = {}

    def evaluate(box):
        """Returns (lb, ub, point, ub_point) or None when the box is infeasible."""
        res = kernel.solve(tpl.build(box), tol=kernel_tol, feas_tol=1e-9)
        if res.status == kernel.INFEASIBLE:
            return None
        if res.x is None:
            return "fail"
        x = np.clip(res.x, box.lower.ravel(), box.upper.ravel())
        lb = res.objective_value - res.kkt_residual
        if res.status != kernel.OPTIMAL:
            lb = -np.inf
        sbar, gamma = tpl.split(x)
        sb2 = polish_sbar(sbar, gamma, box)
        ub = penalty_objective(sb2, gamma, theta, beta)
        best = (ub, gamma.copy())
        if heuristic:
            sched = _schedule_from(gamma)
            key = sched.tobytes()
            if key not in seen:
                alloc, pw = solve_fixed_schedule(sched, beta, R)
                seen[key] = (pw, None if alloc is None else rate_to_gamma(alloc.r) * alloc.s)
            pw, g = seen[key]
            if g is not None and pw < best[0]:
                best = (pw, g)
        return lb, min(ub, best[0]), x, best

    trace = []
    root_box = tighten_box(init, beta, R, theta, ubd) if tighten else init
    root = None if root_box is None else evaluate(root_box)
    if root is None and inc_gamma is None:
        rep = SolverReport("bnb", INFEASIBLE, 0, np.inf, [], None, {"theta": theta})
        return None, rep
    if root is None:
        root = (ubd, ubd, None, (np.inf, None))
        root_box = None
    if root == "fail":
        root = (-np.inf, np.inf, None, (np.inf, None))
    lb, ub, x, (val, g) = root
    if val < ubd:
        ubd, inc_gamma = val, g
    seq = 0
    heap = [NodeRecord(lb, seq, root_box, ub, x)] if root_box is not None and lb < ubd else []
    lbd = min(lb, ubd)
    trace.append((lbd, ubd))
    it = 0
    status = OPTIMAL
    while heap:
        lbd = max(lbd, heap[0].local_lb)
        if ubd - lbd <= eps:
            break
        if it >= node_budget or (time_limit is not None and time.perf_counter() - t0 > time_limit):
            status = BUDGET
            break
        it += 1
        node = heapq.heappop(heap)
        for child in branch(node.box, init):
            if tighten:
                child = tighten_box(child, beta, R, theta, ubd)
                if child is None:
                    continue
            out = evaluate(child)
            if out is None:
                continue
            if out == "fail":
                # keep the box with its parent's bound so it is refined later
                seq += 1
                heapq.heappush(heap, NodeRecord(node.local_lb, seq, child))
                continue
            clb, cub, cx, (cval, cgamma) = out
            clb = max(clb, node.local_lb)
            if cval < ubd:
                ubd, inc_gamma = cval, cgamma
            if clb >= ubd:
                continue
            seq += 1
            heapq.heappush(heap, NodeRecord(clb, seq, child, cub, cx))
        # fathom by the new incumbent
        if any(nd.local_lb >= ubd for nd in heap):
            heap = [nd for nd in heap if nd.local_lb < ubd]
            heapq.heapify(heap)
        if heap:
            lbd = max(lbd, min(heap[0].local_lb, ubd))
        else:
            lbd = ubd
        trace.append((lbd, ubd))

    if not heap:
        lbd = ubd
    if inc_gamma is None:
        rep = SolverReport("bnb", INFEASIBLE if status == OPTIMAL else status, it, np.inf,
                           trace, None, {"theta": theta})
        return None, rep
    try:
        alloc = recover_binary(inc_gamma, beta, R)
    except ValueError:
        alloc = None
    if alloc is None or alloc.check(R):
        # penalty incumbent with a third user still switched on: keep the top two
        alloc, _ = solve_fixed_schedule(_schedule_from(inc_gamma), beta, R)
    notes = {"theta": theta, "lbd": lbd, "ubd": ubd, "gap": ubd - lbd,
             "open_nodes": len(heap), "seconds": time.perf_counter() - t0}
    rep = SolverReport("bnb", status, it, alloc.total_power, trace, alloc, notes)
    return alloc, rep


def _schedule_from(gamma):
    """Top-two users per subcarrier among those with gamma above threshold."""
    s = np.zeros(gamma.shape, bool)
    for i in range(gamma.shape[0]):
        order = np.argsort(-gamma[i], kind="stable")[:2]
        s[i, order] = gamma[i, order] > RECOVERY_THRESHOLD
    return s
