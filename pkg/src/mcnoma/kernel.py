"""Log-barrier interior-point solver for small structured convex programs.

Two problem shapes are needed by the allocation solvers:

* an affine objective plus weighted ``max`` of two affine functions, under box,
  linear and sum-of-logarithm constraints (the McCormick lower-bounding problem);
* a weighted sum of squared affine functions plus an affine part, under box,
  linear and perspective-logarithm constraints (the linearised D.C. subproblem).

Both are described by :class:`ConvexProblem` and solved by :func:`solve`.
The ``max`` atoms are handled through epigraph variables which are eliminated
analytically inside every Newton step, so the Newton system only ever has the
size of the declared variables.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

log = logging.getLogger(__name__)

LN2 = np.log(2.0)

OPTIMAL = "OPTIMAL"
INFEASIBLE = "INFEASIBLE"
NUMERIC_FAILURE = "NUMERIC_FAILURE"

PERSPECTIVE_FLOOR = 1e-12
MAX_NEWTON = 500
FALLBACK_GAP = 1e-6
EPS = np.finfo(float).eps
LATE_STAGE_STEPS = 60
NO_INTERIOR = 1e-6


def _rows(n, rows):
    """Build a CSR matrix from ``(idx, coef)`` pairs, one pair per row."""
    data, indices, indptr = [], [], [0]
    for idx, coef in rows:
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        coef = np.broadcast_to(np.asarray(coef, dtype=float), idx.shape)
        indices.extend(idx.tolist())
        data.extend(coef.tolist())
        indptr.append(len(indices))
    return sp.csr_matrix((data, indices, indptr), shape=(len(rows), n))


def _empty(n):
    return sp.csr_matrix((0, n))


@dataclass
class ConvexProblem:
    """Declarative convex program over ``n`` boxed real variables.

    Objective::

        c @ x + c0 + sum_k wsq_k * (Asq x + bsq)_k**2
                   + sum_k wmax_k * max((A1 x + b1)_k, (A2 x + b2)_k)

    Constraints::

        lower <= x <= upper
        G x <= h
        sum_j log2(1 + (L x + l)_j) >= rhs          for every sum-log block
        sum_j s_j log2(1 + x_j / s_j) >= rhs        for every perspective block

    All weights must be nonnegative, which keeps the program convex.
    """

    n: int
    lower: np.ndarray
    upper: np.ndarray
    names: list[str] | None = None
    c: np.ndarray = None
    c0: float = 0.0
    Asq: sp.csr_matrix = None
    bsq: np.ndarray = None
    wsq: np.ndarray = None
    A1: sp.csr_matrix = None
    b1: np.ndarray = None
    A2: sp.csr_matrix = None
    b2: np.ndarray = None
    wmax: np.ndarray = None
    G: sp.csr_matrix = None
    h: np.ndarray = None
    sum_logs: list = field(default_factory=list)
    perspectives: list = field(default_factory=list)

    def __post_init__(self):
        n = self.n
        self.lower = np.broadcast_to(np.asarray(self.lower, float), (n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, float), (n,)).copy()
        if self.c is None:
            self.c = np.zeros(n)
        if self.Asq is None:
            self.Asq, self.bsq, self.wsq = _empty(n), np.zeros(0), np.zeros(0)
        if self.A1 is None:
            self.A1, self.b1 = _empty(n), np.zeros(0)
            self.A2, self.b2 = _empty(n), np.zeros(0)
            self.wmax = np.zeros(0)
        if self.G is None:
            self.G, self.h = _empty(n), np.zeros(0)

    # -- builders ---------------------------------------------------------

    def add_linear(self, idx, coef, const=0.0):
        np.add.at(self.c, np.atleast_1d(idx), coef)
        self.c0 += const

    def add_squares(self, A, b, w):
        """Add ``sum_k w_k (A x + b)_k**2``; ``A`` is a sparse matrix."""
        w = np.asarray(w, float)
        if np.any(w < 0):
            raise ValueError("square weights must be nonnegative")
        self.Asq = sp.vstack([self.Asq, sp.csr_matrix(A)]).tocsr()
        self.bsq = np.concatenate([self.bsq, np.asarray(b, float)])
        self.wsq = np.concatenate([self.wsq, w])

    def add_max_affines(self, A1, b1, A2, b2, w):
        """Add ``sum_k w_k max((A1 x + b1)_k, (A2 x + b2)_k)``."""
        w = np.asarray(w, float)
        if np.any(w < 0):
            raise ValueError("max-affine weights must be nonnegative")
        self.A1 = sp.vstack([self.A1, sp.csr_matrix(A1)]).tocsr()
        self.A2 = sp.vstack([self.A2, sp.csr_matrix(A2)]).tocsr()
        self.b1 = np.concatenate([self.b1, np.asarray(b1, float)])
        self.b2 = np.concatenate([self.b2, np.asarray(b2, float)])
        self.wmax = np.concatenate([self.wmax, w])

    def add_max_affine(self, row1, row2, weight=1.0):
        """Single max atom; each row is ``(idx, coef, const)``."""
        A1 = _rows(self.n, [row1[:2]])
        A2 = _rows(self.n, [row2[:2]])
        self.add_max_affines(A1, [row1[2]], A2, [row2[2]], [weight])

    def add_le(self, idx, coef, rhs):
        """Add the linear inequality ``coef @ x[idx] <= rhs``."""
        self.add_le_rows(_rows(self.n, [(idx, coef)]), [rhs])

    def add_le_rows(self, G, h):
        self.G = sp.vstack([self.G, sp.csr_matrix(G)]).tocsr()
        self.h = np.concatenate([self.h, np.asarray(h, float)])

    def add_sum_log(self, idx, rhs, coef=1.0, const=0.0):
        """Add ``sum_j log2(1 + coef_j x[idx_j] + const_j) >= rhs``."""
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        coef = np.broadcast_to(np.asarray(coef, float), idx.shape)
        const = np.broadcast_to(np.asarray(const, float), idx.shape).copy()
        L = _rows(self.n, [(i, a) for i, a in zip(idx, coef)])
        self.sum_logs.append((L, const, float(rhs)))

    def add_sum_log_rows(self, L, l, rhs):
        """Sum-log block whose affine arguments are the rows of ``L x + l``."""
        self.sum_logs.append((sp.csr_matrix(L), np.asarray(l, float), float(rhs)))

    def add_perspective_log(self, s_idx, x_idx, rhs):
        """Add ``sum_j s_j log2(1 + x_j / s_j) >= rhs``."""
        s_idx = np.atleast_1d(np.asarray(s_idx, dtype=np.int64))
        x_idx = np.atleast_1d(np.asarray(x_idx, dtype=np.int64))
        if s_idx.shape != x_idx.shape:
            raise ValueError("perspective index arrays differ in length")
        self.perspectives.append((s_idx, x_idx, float(rhs)))

    # -- evaluation ---------------------------------------------------------

    def objective(self, x):
        x = np.asarray(x, float)
        val = self.c @ x + self.c0
        if self.wsq.size:
            r = self.Asq @ x + self.bsq
            val += self.wsq @ (r * r)
        if self.wmax.size:
            val += self.wmax @ np.maximum(self.A1 @ x + self.b1, self.A2 @ x + self.b2)
        return float(val)

    def constraint_values(self, x):
        """Return every constraint as ``g(x) <= 0`` values (box included)."""
        x = np.asarray(x, float)
        parts = [self.lower - x, x - self.upper]
        if self.h.size:
            parts.append(self.G @ x - self.h)
        for L, l, rhs in self.sum_logs:
            y = L @ x + l
            with np.errstate(invalid="ignore", divide="ignore"):
                parts.append(np.array([rhs - np.sum(np.log1p(y)) / LN2]))
        for s_idx, x_idx, rhs in self.perspectives:
            parts.append(np.array([rhs - perspective_log2(x[s_idx], x[x_idx]).sum()]))
        vals = np.concatenate(parts)
        return vals[~np.isneginf(vals)]

    def max_violation(self, x):
        g = self.constraint_values(x)
        if np.any(np.isnan(g)):
            return np.inf
        return float(max(0.0, g.max(initial=0.0)))

    # -- serialisation --------------------------------------------------------

    def to_dict(self):
        def mat(A):
            A = sp.coo_matrix(A)
            return {"shape": list(A.shape), "row": A.row.tolist(),
                    "col": A.col.tolist(), "data": A.data.tolist()}

        def vec(v):
            return [None if not np.isfinite(t) else float(t) for t in v]

        return {
            "format": "cvxprob-v1",
            "n": self.n,
            "names": self.names,
            "lower": [None if t == -np.inf else float(t) for t in self.lower],
            "upper": [None if t == np.inf else float(t) for t in self.upper],
            "c": vec(self.c), "c0": float(self.c0),
            "squares": {"A": mat(self.Asq), "b": vec(self.bsq), "w": vec(self.wsq)},
            "max_affine": {"A1": mat(self.A1), "b1": vec(self.b1),
                           "A2": mat(self.A2), "b2": vec(self.b2), "w": vec(self.wmax)},
            "linear": {"G": mat(self.G), "h": vec(self.h)},
            "sum_logs": [{"L": mat(L), "l": vec(l), "rhs": rhs} for L, l, rhs in self.sum_logs],
            "perspectives": [{"s": s.tolist(), "x": x.tolist(), "rhs": rhs}
                             for s, x, rhs in self.perspectives],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "cvxprob-v1":
            raise ValueError("not a cvxprob-v1 document")

        def mat(m):
            return sp.csr_matrix((m["data"], (m["row"], m["col"])), shape=tuple(m["shape"]))

        n = d["n"]
        p = cls(n,
                [-np.inf if t is None else t for t in d["lower"]],
                [np.inf if t is None else t for t in d["upper"]],
                names=d.get("names"))
        p.c = np.asarray(d["c"], float)
        p.c0 = d["c0"]
        sq = d["squares"]
        p.add_squares(mat(sq["A"]), sq["b"], sq["w"])
        mx = d["max_affine"]
        p.add_max_affines(mat(mx["A1"]), mx["b1"], mat(mx["A2"]), mx["b2"], mx["w"])
        p.add_le_rows(mat(d["linear"]["G"]), d["linear"]["h"])
        for blk in d["sum_logs"]:
            p.add_sum_log_rows(mat(blk["L"]), blk["l"], blk["rhs"])
        for blk in d["perspectives"]:
            p.add_perspective_log(blk["s"], blk["x"], blk["rhs"])
        return p

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


def perspective_log2(s, x):
    """``s * log2(1 + x / s)`` with ``s`` floored at 1e-12 and value 0 at s = 0."""
    s = np.asarray(s, float)
    x = np.asarray(x, float)
    sc = np.maximum(s, PERSPECTIVE_FLOOR)
    with np.errstate(invalid="ignore", divide="ignore"):
        val = sc * np.log1p(x / sc) / LN2
    return np.where(s <= 0, 0.0, val)


@dataclass
class KernelResult:
    status: str
    x: np.ndarray | None
    objective_value: float
    kkt_residual: float
    newton_steps: int = 0
    max_violation: float = 0.0

    @property
    def ok(self):
        return self.status == OPTIMAL


class _Compiled:
    """Problem restricted to its free variables, with barrier evaluation."""

    def __init__(self, prob: ConvexProblem, free: np.ndarray, x_fixed: np.ndarray,
                 lower: np.ndarray, upper: np.ndarray, G, h, relax: float = 0.0):
        self.p = prob
        self.free = free
        self.x_base = x_fixed
        self.lo = lower[free]
        self.hi = upper[free]
        self.lo_mask = np.isfinite(self.lo)
        self.hi_mask = np.isfinite(self.hi)
        nf = free.size
        self.nf = nf
        base = x_fixed

        def restrict(A, b):
            A = sp.csr_matrix(A)
            return A[:, free].tocsr(), (A @ base + b)

        def compact(A):
            return _compact(A, nf)

        self.c = prob.c[free]
        self.c0 = prob.c0 + prob.c @ base
        self.Asq, self.bsq = restrict(prob.Asq, prob.bsq)
        self.wsq = prob.wsq
        self.A1, self.b1 = restrict(prob.A1, prob.b1)
        self.A2, self.b2 = restrict(prob.A2, prob.b2)
        self.wmax = prob.wmax
        keep = self.wmax > 0
        if not np.all(keep):
            # zero-weight max atoms contribute nothing
            self.A1, self.b1 = self.A1[keep], self.b1[keep]
            self.A2, self.b2 = self.A2[keep], self.b2[keep]
            self.wmax = self.wmax[keep]
        self.Dmax = compact(self.A1 - self.A2)
        self.A1, self.A2 = compact(self.A1), compact(self.A2)
        # the squares Hessian does not depend on the point
        self.H_sq = 2.0 * _wtw(self.Asq, self.wsq) if self.wsq.size else None
        self.Asq = compact(self.Asq)
        Gf, gh = restrict(G, -h)
        # rows with no free variable are constant and were checked by presolve
        nz = np.diff(Gf.indptr) > 0
        self.G = compact(Gf[nz])
        self.h = -gh[nz] + relax
        # sum-log blocks stacked: term rows of L z + l, grouped per constraint
        Ls, ls, grp, rhs_sl = [], [], [], []
        for k, (L, l, rhs) in enumerate(prob.sum_logs):
            Lf, lf = restrict(L, l)
            Ls.append(Lf)
            ls.append(lf)
            grp.append(np.full(Lf.shape[0], k))
            rhs_sl.append(rhs - relax)
        self.n_sl = len(Ls)
        if self.n_sl:
            Lall = sp.vstack(Ls).tocsr()
            self.sl_L = compact(Lall)
            self.sl_l = np.concatenate(ls)
            self.sl_grp = np.concatenate(grp)
            self.sl_rhs = np.array(rhs_sl)
            S = sp.csr_matrix((np.ones(Lall.shape[0]), (self.sl_grp, np.arange(Lall.shape[0]))),
                              shape=(self.n_sl, Lall.shape[0]))
            self.sl_S = S.toarray()
        # perspective blocks stacked the same way
        pos = -np.ones(prob.n, dtype=np.int64)
        pos[free] = np.arange(nf)
        s_all, x_all, grp, rhs_p = [], [], [], []
        for k, (s_idx, x_idx, rhs) in enumerate(prob.perspectives):
            s_all.append(s_idx)
            x_all.append(x_idx)
            grp.append(np.full(len(s_idx), k))
            rhs_p.append(rhs - relax)
        self.n_p = len(s_all)
        if self.n_p:
            self.p_s = np.concatenate(s_all)
            self.p_x = np.concatenate(x_all)
            self.p_grp = np.concatenate(grp)
            self.p_rhs = np.array(rhs_p)
            self.p_ps = pos[self.p_s]
            self.p_px = pos[self.p_x]
        self.n_nonlinear = self.n_sl + self.n_p
        self.m = (int(self.lo_mask.sum() + self.hi_mask.sum()) + self.G.shape[0]
                  + 2 * self.wmax.size + self.n_nonlinear)

    def full(self, z):
        x = self.x_base.copy()
        x[self.free] = z
        return x

    # nonlinear constraint values F_k(z) = lhs - rhs, feasible when > 0
    def nonlinear_values(self, z):
        parts = []
        if self.n_sl:
            y = self.sl_L @ z + self.sl_l
            if np.any(y <= -1):
                return np.full(self.n_nonlinear, -np.inf)
            parts.append(np.bincount(self.sl_grp, np.log1p(y), self.n_sl) / LN2 - self.sl_rhs)
        if self.n_p:
            x = self.full(z)
            s, xv = x[self.p_s], x[self.p_x]
            if np.any(s < 0) or np.any((s > 0) & (s + xv <= 0)):
                return np.full(self.n_nonlinear, -np.inf)
            parts.append(np.bincount(self.p_grp, perspective_log2(s, xv), self.n_p) - self.p_rhs)
        return np.concatenate(parts)

    def nonlinear_derivs(self, z, F):
        """Jacobian rows of every F_k and the curvature term sum_k -hess(F_k) / F_k."""
        nf = self.nf
        J = np.zeros((self.n_nonlinear, nf))
        C = np.zeros((nf, nf))
        if self.n_sl:
            y = self.sl_L @ z + self.sl_l
            inv = 1.0 / (1.0 + y)
            Fk = F[:self.n_sl]
            if sp.issparse(self.sl_L):
                J[:self.n_sl] = (sp.csr_matrix(self.sl_S * (inv / LN2)) @ self.sl_L).toarray()
            else:
                J[:self.n_sl] = (self.sl_S * (inv / LN2)) @ self.sl_L
            C += _wtw(self.sl_L, inv * inv / (LN2 * Fk[self.sl_grp]))
        if self.n_p:
            x = self.full(z)
            s = np.maximum(x[self.p_s], PERSPECTIVE_FLOOR)
            xv = x[self.p_x]
            sx = s + xv
            d_x = s / sx / LN2
            d_s = (np.log1p(xv / s) - xv / sx) / LN2
            rows = self.n_sl + self.p_grp
            ps, px = self.p_ps, self.p_px
            ms, mx = ps >= 0, px >= 0
            np.add.at(J, (rows[ms], ps[ms]), d_s[ms])
            np.add.at(J, (rows[mx], px[mx]), d_x[mx])
            k = 1.0 / (s * sx * sx) / LN2 / F[rows]
            hss = xv * xv * k
            hsx = -xv * s * k
            hxx = s * s * k
            both = ms & mx
            np.add.at(C, (ps[ms], ps[ms]), hss[ms])
            np.add.at(C, (px[mx], px[mx]), hxx[mx])
            np.add.at(C, (ps[both], px[both]), hsx[both])
            np.add.at(C, (px[both], ps[both]), hsx[both])
        return J, C

    def objective(self, z):
        val = self.c @ z + self.c0
        if self.wsq.size:
            r = self.Asq @ z + self.bsq
            val += self.wsq @ (r * r)
        if self.wmax.size:
            val += self.wmax @ np.maximum(self.A1 @ z + self.b1, self.A2 @ z + self.b2)
        return float(val)

    def _epigraph(self, z, tau):
        """Optimal epigraph slacks for fixed z: returns (f1, f2, d1, d2)."""
        f1 = self.A1 @ z + self.b1
        f2 = self.A2 @ z + self.b2
        delta = f1 - f2
        tw = tau * self.wmax
        a = tw * delta
        root = np.sqrt(a * a + 4.0)
        # d1, d2 > 0 solve 1/d1 + 1/d2 = tw with d1 - d2 = -delta; each is taken
        # from the cancellation-free form of its own quadratic root
        with np.errstate(divide="ignore", invalid="ignore"):
            d1 = np.where(a <= 2.0, (2.0 - a + root) / (2.0 * tw),
                          2.0 * delta / (a - 2.0 + root))
            d2 = np.where(a >= -2.0, (2.0 + a + root) / (2.0 * tw),
                          -2.0 * delta / (-a - 2.0 + root))
        return f1, f2, np.maximum(d1, 1e-300), np.maximum(d2, 1e-300)

    def barrier(self, z, tau, phase1_s=None):
        """Barrier value tau*f0 - sum log(slacks); inf outside the domain.

        With ``phase1_s`` given, evaluates the phase-one barrier for
        ``min s`` subject to every non-box constraint relaxed by ``s``.
        """
        lo_sl = z[self.lo_mask] - self.lo[self.lo_mask]
        hi_sl = self.hi[self.hi_mask] - z[self.hi_mask]
        if np.any(lo_sl <= 0) or np.any(hi_sl <= 0):
            return np.inf
        val = -np.sum(np.log(lo_sl)) - np.sum(np.log(hi_sl))
        shift = 0.0 if phase1_s is None else phase1_s
        if self.G.shape[0]:
            sl = self.h - self.G @ z + shift
            if np.any(sl <= 0):
                return np.inf
            val -= np.sum(np.log(sl))
        if self.n_nonlinear:
            F = self.nonlinear_values(z) + shift
            if np.any(~(F > 0)):
                return np.inf
            val -= np.sum(np.log(F))
        if phase1_s is not None:
            return tau * phase1_s + val
        val += tau * (self.c @ z + self.c0)
        if self.wsq.size:
            r = self.Asq @ z + self.bsq
            val += tau * (self.wsq @ (r * r))
        if self.wmax.size:
            f1, f2, d1, d2 = self._epigraph(z, tau)
            t = f1 + d1
            val += tau * (self.wmax @ t) - np.sum(np.log(d1)) - np.sum(np.log(d2))
        return float(val)

    def barrier_delta(self, z, dz, tau, s=None, ds=0.0):
        """``barrier(z + dz) - barrier(z)`` evaluated term by term.

        Differencing the two totals loses everything below ~1e-16 * |barrier|,
        which at large tau is far above the Newton decrement.
        """
        zn = z + dz
        delta = 0.0
        lo_sl = z[self.lo_mask] - self.lo[self.lo_mask]
        dlo = dz[self.lo_mask] / lo_sl
        hi_sl = self.hi[self.hi_mask] - z[self.hi_mask]
        dhi = -dz[self.hi_mask] / hi_sl
        if np.any(dlo <= -1) or np.any(dhi <= -1):
            return np.inf
        delta -= np.sum(np.log1p(dlo)) + np.sum(np.log1p(dhi))
        shift = 0.0 if s is None else s
        if self.G.shape[0]:
            sl = self.h - self.G @ z + shift
            dsl = (-(self.G @ dz) + ds) / sl
            if np.any(dsl <= -1):
                return np.inf
            delta -= np.sum(np.log1p(dsl))
        if self.n_nonlinear:
            F0 = self.nonlinear_values(z) + shift
            F1 = self.nonlinear_values(zn) + shift + ds
            if np.any(~(F1 > 0)):
                return np.inf
            delta -= np.sum(np.log1p((F1 - F0) / F0))
        if s is not None:
            return float(delta + tau * ds)
        delta += tau * (self.c @ dz)
        if self.wsq.size:
            r = self.Asq @ z + self.bsq
            ad = self.Asq @ dz
            delta += tau * (self.wsq @ (ad * (2.0 * r + ad)))
        if self.wmax.size:
            _, _, d1, d2 = self._epigraph(z, tau)
            _, _, e1, e2 = self._epigraph(zn, tau)
            dt = self.A1 @ dz + (e1 - d1)
            delta += tau * (self.wmax @ dt) - np.sum(np.log(e1 / d1)) - np.sum(np.log(e2 / d2))
        return float(delta)

    def newton_system(self, z, tau, phase1_s=None):
        """Gradient and Hessian of the barrier (phase one appends the s variable)."""
        nf = self.nf
        phase1 = phase1_s is not None
        dim = nf + 1 if phase1 else nf
        g = np.zeros(dim)
        H = np.zeros((dim, dim))
        gz, Hz = g[:nf], H[:nf, :nf]
        lo_sl = z[self.lo_mask] - self.lo[self.lo_mask]
        hi_sl = self.hi[self.hi_mask] - z[self.hi_mask]
        gz[self.lo_mask] -= 1.0 / lo_sl
        gz[self.hi_mask] += 1.0 / hi_sl
        diag = np.zeros(nf)
        diag[self.lo_mask] += 1.0 / lo_sl ** 2
        diag[self.hi_mask] += 1.0 / hi_sl ** 2
        Hz[np.diag_indices(nf)] += diag
        shift = phase1_s if phase1 else 0.0
        if self.G.shape[0]:
            sl = self.h - self.G @ z + shift
            inv = 1.0 / sl
            gz += self.G.T @ inv
            Hz += _wtw(self.G, inv * inv)
            if phase1:
                g[nf] -= inv.sum()
                col = -(self.G.T @ (inv * inv))
                H[:nf, nf] += col
                H[nf, :nf] += col
                H[nf, nf] += np.sum(inv * inv)
        if self.n_nonlinear:
            F = self.nonlinear_values(z) + shift
            J, C = self.nonlinear_derivs(z, F)
            invF = 1.0 / F
            gz -= J.T @ invF
            Hz += _wtw(J, invF * invF) + C
            if phase1:
                g[nf] -= invF.sum()
                col = J.T @ (invF * invF)
                H[:nf, nf] += col
                H[nf, :nf] += col
                H[nf, nf] += np.sum(invF * invF)
        if phase1:
            g[nf] += tau
            return g, H
        gz += tau * self.c
        if self.wsq.size:
            r = self.Asq @ z + self.bsq
            gz += 2.0 * tau * (self.Asq.T @ (self.wsq * r))
            Hz += tau * self.H_sq
        if self.wmax.size:
            f1, f2, d1, d2 = self._epigraph(z, tau)
            e1, e2 = 1.0 / d1 ** 2, 1.0 / d2 ** 2
            gz += self.A1.T @ (1.0 / d1) + self.A2.T @ (1.0 / d2)
            coef = e1 * e2 / (e1 + e2)
            Hz += _wtw(self.Dmax, coef)
        return g, H

    def max_step(self, z, dz, p1=None, dp1=0.0):
        """Largest step keeping box and linear slacks positive."""
        alpha = 1.0
        lo = self.lo_mask & (dz < 0)
        if np.any(lo):
            alpha = min(alpha, np.min((self.lo[lo] - z[lo]) / dz[lo]))
        hi = self.hi_mask & (dz > 0)
        if np.any(hi):
            alpha = min(alpha, np.min((self.hi[hi] - z[hi]) / dz[hi]))
        if self.G.shape[0]:
            shift = 0.0 if p1 is None else p1
            sl = self.h - self.G @ z + shift
            dsl = -(self.G @ dz) + dp1
            neg = dsl < 0
            if np.any(neg):
                alpha = min(alpha, np.min(-sl[neg] / dsl[neg]))
        return alpha


DENSE_LIMIT = 400_000


def _compact(A, ncols):
    """Dense copy of small matrices (faster products), CSR otherwise."""
    A = sp.csr_matrix(A)
    if A.shape[0] * ncols <= DENSE_LIMIT:
        return A.toarray()
    return A


def _wtw(A, w):
    """``A.T @ diag(w) @ A`` as a dense array."""
    if sp.issparse(A):
        return (A.T @ sp.diags(w) @ A).toarray()
    return (A.T * w) @ A


def _solve_newton(H, g):
    try:
        cf = scipy.linalg.cho_factor(H, check_finite=False)
        return scipy.linalg.cho_solve(cf, -g, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        pass
    reg = 1e-12 * max(1.0, np.abs(np.diag(H)).max())
    try:
        cf = scipy.linalg.cho_factor(H + reg * np.eye(H.shape[0]), check_finite=False)
        return scipy.linalg.cho_solve(cf, -g, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return np.linalg.lstsq(H, -g, rcond=None)[0]


def _centering(cp: _Compiled, z, tau, phase1=False, s=None, stop_when_negative=False,
               max_steps=MAX_NEWTON):
    """Damped Newton minimisation of the barrier at fixed tau.

    Returns ``(z, s, steps, converged)``.
    """
    steps = 0
    history = []
    while steps < max_steps:
        g, H = cp.newton_system(z, tau, phase1_s=s) if phase1 else cp.newton_system(z, tau)
        d = _solve_newton(H, g)
        lam2 = -g @ d
        if not np.isfinite(lam2):
            return z, s, steps, False
        # decrements below the rounding noise of tau * f count as centred
        if lam2 <= max(2e-10, EPS * tau * max(1.0, abs(cp.objective(z)))):
            return z, s, steps, True
        # stalled at a tiny decrement: rounding noise, not a real failure
        history.append(lam2)
        if lam2 < 1e-6 and len(history) > 10 and lam2 > 0.5 * history[-11]:
            return z, s, steps, True
        steps += 1
        dz = d[:cp.nf]
        ds = d[cp.nf] if phase1 else 0.0
        alpha = cp.max_step(z, dz, s if phase1 else None, ds)
        alpha = 1.0 if alpha >= 1.0 else 0.99 * alpha
        full_ok = lam2 < 0.04
        while alpha > 1e-16:
            z_new = z + alpha * dz
            s_new = s + alpha * ds if phase1 else None
            df = cp.barrier_delta(z, alpha * dz, tau, s, alpha * ds) if phase1 \
                else cp.barrier_delta(z, alpha * dz, tau)
            if np.isfinite(df) and (full_ok or df <= -0.01 * alpha * lam2):
                break
            alpha *= 0.5
        else:
            # no progress possible at machine precision
            return z, s, steps, lam2 < 1e-3
        z = z_new
        if phase1:
            s = s_new
            if stop_when_negative and s < 0 and _phase1_slack(cp, z) < 0:
                return z, s, steps, True
    log.debug("centering hit the step cap; last decrements %s", history[-5:])
    return z, s, steps, False


def _phase1_slack(cp: _Compiled, z):
    """Largest relaxation needed by the non-box constraints at z."""
    worst = -np.inf
    if cp.G.shape[0]:
        worst = max(worst, np.max(cp.G @ z - cp.h))
    if cp.n_nonlinear:
        worst = max(worst, np.max(-cp.nonlinear_values(z)))
    return worst


def _fixed_mask(lower, upper):
    finite = np.isfinite(lower) & np.isfinite(upper)
    scale = np.maximum(1.0, np.maximum(np.abs(lower), np.abs(upper)))
    with np.errstate(invalid="ignore"):
        return finite & (upper - lower <= 1e-12 * scale)


def _presolve(prob: ConvexProblem, feas_tol):
    """Fix zero-width variables and turn single-variable rows into bounds."""
    lower = prob.lower.copy()
    upper = prob.upper.copy()
    G = prob.G.tocsr()
    h = prob.h.copy()
    if np.any(lower > upper + feas_tol):
        return None
    for _ in range(4):
        fixed = _fixed_mask(lower, upper)
        xf = np.where(fixed, 0.5 * (lower + upper), 0.0)
        xf = np.where(np.isfinite(xf), xf, 0.0)
        Gfree = G[:, ~fixed].tocsr() if G.shape[0] else G
        rhs = h - G @ xf if G.shape[0] else h
        changed = False
        if G.shape[0]:
            counts = np.diff(Gfree.indptr)
            const_rows = counts == 0
            if np.any(rhs[const_rows] < -feas_tol):
                return None
            free_idx = np.flatnonzero(~fixed)
            for r in np.flatnonzero(counts == 1):
                j = free_idx[Gfree.indices[Gfree.indptr[r]]]
                a = Gfree.data[Gfree.indptr[r]]
                if a == 0:
                    continue
                bound = rhs[r] / a
                if a > 0 and bound < upper[j]:
                    upper[j] = bound
                    changed = True
                elif a < 0 and bound > lower[j]:
                    lower[j] = bound
                    changed = True
        bad = lower > upper
        if np.any(lower > upper + feas_tol * np.maximum(1.0, np.abs(upper))):
            return None
        if np.any(bad):
            mid = 0.5 * (lower + upper)
            lower[bad] = mid[bad]
            upper[bad] = mid[bad]
        if not changed:
            break
    fixed = _fixed_mask(lower, upper)
    xf = np.where(fixed, 0.5 * (lower + upper), 0.0)
    return lower, upper, fixed, np.where(np.isfinite(xf), xf, 0.0), G, h


def _interior_start(lo, hi):
    z = np.zeros(lo.size)
    both = np.isfinite(lo) & np.isfinite(hi)
    z[both] = 0.5 * (lo[both] + hi[both])
    only_lo = np.isfinite(lo) & ~np.isfinite(hi)
    z[only_lo] = lo[only_lo] + np.maximum(1.0, np.abs(lo[only_lo]))
    only_hi = ~np.isfinite(lo) & np.isfinite(hi)
    z[only_hi] = hi[only_hi] - np.maximum(1.0, np.abs(hi[only_hi]))
    return z


def _barrier_path(cp: _Compiled, z, tol, tau0=1.0):
    """Phase-two path following; returns (z, gap, steps, ok).

    Stops once the duality-gap bound ``m / tau`` is below ``tol`` relative to
    ``max(1, |f|)``.  If a late centering stage breaks down, the previous
    centre is returned when its gap is already within ``FALLBACK_GAP``.
    """
    tau = tau0
    total = 0
    m = max(cp.m, 1)
    last = None
    scale0 = max(1.0, abs(cp.objective(z)))
    while True:
        # once a usable centre exists, a stalling stage is not worth 500 steps
        cap = LATE_STAGE_STEPS if last is not None and last[1] <= FALLBACK_GAP * scale0 \
            else MAX_NEWTON
        z_new, _, steps, ok = _centering(cp, z, tau, max_steps=cap)
        total += steps
        log.debug("tau=%.3g newton=%d centred=%s", tau, steps, ok)
        scale = max(1.0, abs(cp.objective(z_new if ok else z)))
        if not ok:
            if last is not None and last[1] <= FALLBACK_GAP * scale:
                return last[0], last[1], total, True
            return z_new, m / tau, total, False
        z = z_new
        last = (z, m / tau)
        scale0 = scale
        if m / tau <= tol * scale:
            return z, m / tau, total, True
        tau *= 10.0


def _phase_one(cp: _Compiled, z, tol):
    """Find a strictly feasible point; returns (z, s_star, steps, ok)."""
    worst = _phase1_slack(cp, z)
    if worst < 0:
        return z, worst, 0, True
    s = max(worst, 0.0) + 1.0
    tau = 1.0
    total = 0
    m = max(cp.m - 2 * cp.wmax.size, 1) + 1
    while True:
        z, s, steps, ok = _centering(cp, z, tau, phase1=True, s=s, stop_when_negative=True)
        total += steps
        real = _phase1_slack(cp, z)
        log.debug("phase one tau=%.3g newton=%d slack=%.3g", tau, steps, real)
        if real < 0:
            return z, real, total, True
        if not ok:
            return z, real, total, False
        if m / tau <= tol:
            return z, real, total, True
        tau *= 10.0


def solve(prob: ConvexProblem, tol: float = 1e-8, feas_tol: float = 1e-8) -> KernelResult:
    """Minimise ``prob`` by a phase-one / log-barrier interior-point method.

    Returns a :class:`KernelResult` whose status is ``OPTIMAL``, ``INFEASIBLE``
    or ``NUMERIC_FAILURE``.  ``kkt_residual`` is the barrier duality-gap bound
    ``m / tau`` at termination.
    """
    pre = _presolve(prob, feas_tol)
    if pre is None:
        return KernelResult(INFEASIBLE, None, np.inf, np.inf)
    lower, upper, fixed, xf, G, h = pre
    free = np.flatnonzero(~fixed)
    cp = _Compiled(prob, free, xf, lower, upper, G, h)
    z = _interior_start(cp.lo, cp.hi)
    if cp.nf == 0:
        x = cp.full(z)
        viol = prob.max_violation(x)
        if viol > feas_tol:
            return KernelResult(INFEASIBLE, None, np.inf, np.inf, 0, viol)
        return KernelResult(OPTIMAL, x, prob.objective(x), 0.0, 0, viol)

    steps = 0
    if cp.G.shape[0] or cp.n_nonlinear:
        z1, s_star, steps, ok = _phase_one(cp, z, min(tol, feas_tol))
        if s_star > feas_tol:
            status = INFEASIBLE if ok else NUMERIC_FAILURE
            return KernelResult(status, None, np.inf, np.inf, steps, s_star)
        z = z1
        if s_star > -NO_INTERIOR:
            # feasible set (nearly) without interior: widen it slightly so the
            # barrier has room; the violation is reported in the result
            cp = _Compiled(prob, free, xf, lower, upper, G, h, relax=max(feas_tol, NO_INTERIOR))
    # start where the gap bound m / tau is comparable to the objective scale
    tau0 = min(1.0, max(cp.m, 1) / max(1.0, abs(cp.objective(z))))
    z, gap, more, ok = _barrier_path(cp, z, tol, tau0)
    steps += more
    x = cp.full(z)
    viol = prob.max_violation(x)
    if not ok:
        log.debug("barrier path failed after %d Newton steps (gap %.3g)", steps, gap)
        return KernelResult(NUMERIC_FAILURE, x, prob.objective(x), gap, steps, viol)
    return KernelResult(OPTIMAL, x, prob.objective(x), gap, steps, viol)
