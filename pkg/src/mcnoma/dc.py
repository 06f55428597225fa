"""Difference-of-convex (successive convex approximation) allocation solver.

Variables per link: relaxed schedule ``s`` in [0, 1] and ``gt = gamma * s``.
The true SINR ``gamma`` only enters big-M constraints that are always
satisfiable with ``gamma = gt``, so it is eliminated.

Objective ``G1 - G2`` with::

    G1 = sum gt/beta + 1/2 sum_{m<n} (gt_m + gt_n)^2 / max(beta) + eta * sum s
    G2 = 1/2 sum_{m<n} (gt_m^2 + gt_n^2) / max(beta)          + eta * sum s^2

Each iteration replaces ``G2`` by its tangent plane at the current point.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernel
from .kernel import ConvexProblem
from .rates import solve_fixed_schedule
from .report import CONVERGED, INFEASIBLE, INFEASIBLE_ROUNDING, NUMERIC_FAILURE, SolverReport
from .sic import rate_to_gamma

log = logging.getLogger(__name__)


@dataclass
class DcIterate:
    s: np.ndarray
    gamma_tilde: np.ndarray
    objective: float
    k: int

    @property
    def gamma(self):
        return self.gamma_tilde


class _Layout:
    """Variable layout: x = [s (N_F*M), gt (N_F*M)], both row-major over (i, m)."""

    def __init__(self, beta, rate_total, limit=2):
        self.beta = np.asarray(beta, float)
        self.R = np.asarray(rate_total, float)
        self.nf, self.M = self.beta.shape
        self.nl = self.nf * self.M
        self.n = 2 * self.nl
        self.U = rate_to_gamma(self.R)
        self.limit = limit
        pi, pm, pn = [], [], []
        for i in range(self.nf):
            for m in range(self.M):
                for n in range(m + 1, self.M):
                    pi.append(i); pm.append(m); pn.append(n)
        self.pi, self.pm, self.pn = (np.array(a, int) for a in (pi, pm, pn))
        self.pw = 1.0 / np.maximum(self.beta[self.pi, self.pm], self.beta[self.pi, self.pn])
        # sum over partners of 1/max(beta), per link (gradient of G2 in gt)
        w = np.zeros((self.nf, self.M))
        np.add.at(w, (self.pi, self.pm), self.pw)
        np.add.at(w, (self.pi, self.pn), self.pw)
        self.partner_w = w

    def s_idx(self, i, m):
        return i * self.M + m

    def g_idx(self, i, m):
        return self.nl + i * self.M + m

    def split(self, x):
        x = np.asarray(x)
        return x[:self.nl].reshape(self.nf, self.M), x[self.nl:].reshape(self.nf, self.M)

    def join(self, s, gt):
        return np.concatenate([np.ravel(s), np.ravel(gt)])

    # objective pieces
    def g1(self, s, gt, eta):
        pair = 0.5 * np.sum(self.pw * (gt[self.pi, self.pm] + gt[self.pi, self.pn]) ** 2)
        return float(np.sum(gt / self.beta) + pair + eta * np.sum(s))

    def g2(self, s, gt, eta):
        pair = 0.5 * np.sum(self.pw * (gt[self.pi, self.pm] ** 2 + gt[self.pi, self.pn] ** 2))
        return float(pair + eta * np.sum(s * s))

    def base_problem(self, eta, s_fixed=None) -> ConvexProblem:
        """Constraint set plus G1 (without any linearisation)."""
        nf, M, nl = self.nf, self.M, self.nl
        lower = np.zeros(self.n)
        upper = np.concatenate([np.ones(nl), np.tile(self.U, nf)])
        if s_fixed is not None:
            sf = np.ravel(s_fixed).astype(float)
            lower[:nl] = sf
            upper[:nl] = sf
        prob = ConvexProblem(self.n, lower, upper)
        ii, mm = np.divmod(np.arange(nl), M)
        prob.add_linear(self.g_idx(ii, mm), 1.0 / self.beta[ii, mm])
        prob.add_linear(self.s_idx(ii, mm), np.full(nl, eta))
        k = len(self.pi)
        if k:
            rows = np.concatenate([np.arange(k), np.arange(k)])
            cols = np.concatenate([self.g_idx(self.pi, self.pm), self.g_idx(self.pi, self.pn)])
            A = sp.csr_matrix((np.ones(2 * k), (rows, cols)), shape=(k, self.n))
            prob.add_squares(A, np.zeros(k), 0.5 * self.pw)
        # big-M: gt <= s * U
        rows = np.concatenate([np.arange(nl), np.arange(nl)])
        cols = np.concatenate([self.g_idx(ii, mm), self.s_idx(ii, mm)])
        vals = np.concatenate([np.ones(nl), -self.U[mm]])
        prob.add_le_rows(sp.csr_matrix((vals, (rows, cols)), shape=(nl, self.n)), np.zeros(nl))
        # scheduling limit per subcarrier
        for i in range(nf):
            prob.add_le(self.s_idx(i, np.arange(M)), np.ones(M), float(self.limit))
        for m in range(M):
            ar = np.arange(nf)
            prob.add_perspective_log(self.s_idx(ar, m), self.g_idx(ar, m), self.R[m])
        return prob

    def linearized(self, anchor_s, anchor_gt, eta, s_fixed=None) -> ConvexProblem:
        prob = self.base_problem(eta, s_fixed)
        grad_s = 2.0 * eta * anchor_s
        grad_g = self.partner_w * anchor_gt
        ii, mm = np.divmod(np.arange(self.nl), self.M)
        prob.add_linear(self.s_idx(ii, mm), -grad_s.ravel())
        prob.add_linear(self.g_idx(ii, mm), -grad_g.ravel())
        prob.c0 += (-self.g2(anchor_s, anchor_gt, eta)
                    + np.sum(grad_s * anchor_s) + np.sum(grad_g * anchor_gt))
        return prob


def dc_split(s, gamma_tilde, eta, beta) -> tuple[float, float]:
    lay = _Layout(beta, np.ones(np.shape(beta)[1]))
    s = np.asarray(s, float)
    gt = np.asarray(gamma_tilde, float)
    return lay.g1(s, gt, eta), lay.g2(s, gt, eta)


def linearized_subproblem(anchor: DcIterate, eta, scenario, rate_total=None) -> ConvexProblem:
    beta, R = _unpack(scenario, rate_total)
    return _Layout(beta, R).linearized(anchor.s, anchor.gamma_tilde, eta)


def _unpack(scenario, rate_total):
    if rate_total is None:
        return scenario.beta, scenario.rate_total
    return np.asarray(scenario, float), np.asarray(rate_total, float)


def initial_objective(beta, rate_total, limit=2) -> float:
    """Minimum of G1 without the eta term; sizes both penalty factors."""
    lay = _Layout(beta, rate_total, limit)
    res = kernel.solve(lay.base_problem(0.0), tol=1e-8)
    if res.x is None:
        raise RuntimeError(f"initial convex problem failed: {res.status}")
    return res.objective_value


def round_schedule(s, limit=2):
    """Threshold at 0.5, keeping at most ``limit`` largest entries per subcarrier."""
    s = np.asarray(s, float)
    out = np.zeros(s.shape, bool)
    for i in range(s.shape[0]):
        order = np.argsort(-s[i], kind="stable")[:limit]
        out[i, order] = s[i, order] >= 0.5
    return out


def repair_schedule(s, beta, rate_total, limit=2):
    """Give every uncovered user its best-beta subcarrier that still has room."""
    s = np.array(s, bool)
    R = np.asarray(rate_total)
    for m in np.flatnonzero(~s.any(axis=0) & (R > 0)):
        room = s.sum(axis=1) < limit
        if not room.any():
            return None
        cand = np.where(room, beta[:, m], -np.inf)
        s[int(np.argmax(cand)), m] = True
    return s


def solve_dc(scenario, eta=None, eps: float = 0.01, k_max: int = 100, rate_total=None,
             limit: int = 2, kernel_tol: float = 1e-8):
    """Successive convex approximation followed by rounding and a rate re-solve.

    Returns ``(allocation, report)``; the report trace holds the penalised
    objective ``G1 - G2`` at each iterate.
    """
    beta, R = _unpack(scenario, rate_total)
    t0 = time.perf_counter()
    lay = _Layout(beta, R, limit)
    base0 = kernel.solve(lay.base_problem(0.0), tol=kernel_tol)
    if base0.status == kernel.INFEASIBLE:
        return None, SolverReport("dc", INFEASIBLE, 0, np.inf)
    if base0.x is None:
        return None, SolverReport("dc", NUMERIC_FAILURE, 0, np.inf)
    if eta is None:
        eta = 10.0 * base0.objective_value
    res = kernel.solve(lay.base_problem(eta), tol=kernel_tol)
    if res.x is None:
        return None, SolverReport("dc", NUMERIC_FAILURE, 0, np.inf, notes={"eta": eta})
    s, gt = lay.split(res.x)
    trace = [lay.g1(s, gt, eta) - lay.g2(s, gt, eta)]
    k = 0
    failures = 0
    while k < k_max:
        sub = kernel.solve(lay.linearized(s, gt, eta), tol=kernel_tol)
        k += 1
        if not sub.ok:
            failures += 1
            break
        s_new, gt_new = lay.split(sub.x)
        step = np.linalg.norm(lay.join(s_new, gt_new) - lay.join(s, gt))
        s, gt = s_new, gt_new
        trace.append(lay.g1(s, gt, eta) - lay.g2(s, gt, eta))
        if step <= eps:
            break

    sched = round_schedule(s, limit)
    alloc, power = solve_fixed_schedule(sched, beta, R)
    repaired = False
    if alloc is None:
        sched = repair_schedule(sched, beta, R, limit)
        repaired = True
        if sched is not None:
            alloc, power = solve_fixed_schedule(sched, beta, R)
    notes = {"eta": eta, "repaired": repaired, "kernel_failures": failures,
             "relaxed_objective": trace[-1], "seconds": time.perf_counter() - t0,
             "fractional_s": int(np.sum((s > 1e-3) & (s < 1 - 1e-3)))}
    if alloc is None:
        return None, SolverReport("dc", INFEASIBLE_ROUNDING, k, np.inf, trace, None, notes)
    return alloc, SolverReport("dc", CONVERGED, k, power, trace, alloc, notes)
