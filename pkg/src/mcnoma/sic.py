"""SIC decoding order and minimum transmit power on a subcarrier.

A user's power requirement depends only on its CNR outage threshold ``beta``
and SINR target ``gamma = 2**R - 1``.  When two users share a subcarrier, the
one with the larger ``beta`` performs SIC.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

INFEASIBLE = "INFEASIBLE"


def rate_to_gamma(r):
    return np.exp2(np.asarray(r, float)) - 1.0


def gamma_to_rate(g):
    return np.log2(1.0 + np.asarray(g, float))


@dataclass
class PairSpec:
    beta_m: float
    beta_n: float
    gamma_m: float
    gamma_n: float

    def swapped(self) -> "PairSpec":
        return PairSpec(self.beta_n, self.beta_m, self.gamma_n, self.gamma_m)


def optimal_sic_order(beta_m: float, beta_n: float) -> tuple[int, int]:
    """SIC indicators ``(u_m, u_n)``; ties go to the first user."""
    return (1, 0) if beta_m >= beta_n else (0, 1)


def single_user_power(beta: float, gamma: float) -> float:
    return gamma / beta


def pair_powers(spec: PairSpec) -> tuple[float, float]:
    """Minimum powers ``(p_m, p_n)`` under the optimal SIC order."""
    if spec.beta_m >= spec.beta_n:
        p_m = spec.gamma_m / spec.beta_m
        p_n = spec.gamma_n / spec.beta_n + spec.gamma_n * spec.gamma_m / spec.beta_m
        return p_m, p_n
    p_n, p_m = pair_powers(spec.swapped())
    return p_m, p_n


def subcarrier_power(s_row, gamma_row, beta_row) -> float:
    """Total power on one subcarrier for at most two scheduled users."""
    s = np.asarray(s_row, float)
    idx = np.flatnonzero(s > 0)
    if idx.size > 2:
        raise ValueError(f"{idx.size} users scheduled on one subcarrier; at most 2 allowed")
    g = np.asarray(gamma_row, float)[idx] * s[idx]
    b = np.asarray(beta_row, float)[idx]
    total = float(np.sum(g / b))
    if idx.size == 2:
        total += g[0] * g[1] / max(b[0], b[1])
    return total


def subcarrier_powers(s_row, gamma_row, beta_row) -> np.ndarray:
    """Per-user powers on one subcarrier."""
    s = np.asarray(s_row, float)
    g = np.asarray(gamma_row, float)
    b = np.asarray(beta_row, float)
    p = np.zeros(s.size)
    idx = np.flatnonzero(s > 0)
    if idx.size > 2:
        raise ValueError(f"{idx.size} users scheduled on one subcarrier; at most 2 allowed")
    if idx.size == 1:
        k = idx[0]
        p[k] = g[k] / b[k]
    elif idx.size == 2:
        m, n = idx
        p[m], p[n] = pair_powers(PairSpec(b[m], b[n], g[m], g[n]))
    return p


def case_power(case: str, spec: PairSpec):
    """Total pair power for one of the four SIC configurations.

    ``m`` is taken as the larger-``beta`` user (the PairSpec is swapped if needed).
    I: only m decodes with SIC.  II: only n does.  III: neither.  IV: both.
    Returns :data:`INFEASIBLE` when no power pair meets the targets.
    """
    if spec.beta_m < spec.beta_n:
        spec = spec.swapped()
    bm, bn, gm, gn = spec.beta_m, spec.beta_n, spec.gamma_m, spec.gamma_n
    case = case.upper()
    if case == "I":
        return gm / bm + gn / bn + gm * gn / bm
    if case == "II":
        return gn / bn + gm / bn + gm * gn / bn
    if case not in ("III", "IV"):
        raise ValueError(f"unknown case {case!r}")
    den = 1.0 - gm * gn
    if not 0.0 < den < 1.0:
        return INFEASIBLE
    if case == "III":
        pm = (gm / bn + gm * gn / bm) / den
        pn = (gn / bm + gm * gn / bn) / den
        if pm < gm / bm or pn < gn / bn:
            return INFEASIBLE
        return (gm / bn + gm * gn / bm + gn / bm + gm * gn / bn) / den
    return (gm / bm + gm * gn / bn + gn / bn + gm * gn / bm) / den


@dataclass
class Allocation:
    s: np.ndarray
    u: np.ndarray
    p: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.int8)
        self.u = np.asarray(self.u, dtype=np.int8)
        self.p = np.asarray(self.p, float)
        self.r = np.asarray(self.r, float)

    @classmethod
    def zeros(cls, n_subcarriers: int, n_users: int) -> "Allocation":
        z = np.zeros((n_subcarriers, n_users))
        return cls(z, z, z, z)

    @property
    def total_power(self) -> float:
        return float(self.p.sum())

    def user_rates(self) -> np.ndarray:
        return (self.s * self.r).sum(axis=0)

    def check(self, rate_total, max_per_subcarrier: int = 2, tol: float = 1e-6) -> list[str]:
        """Return a list of violated invariants (empty when valid)."""
        errs = []
        per = self.s.sum(axis=1)
        if np.any(per > max_per_subcarrier):
            errs.append("too many users on a subcarrier")
        if np.any(self.u > self.s):
            errs.append("SIC flag on an unscheduled user")
        if np.any(self.u.sum(axis=1) > 0) and np.any((self.u.sum(axis=1) > 0) & (per < 2)):
            errs.append("SIC flag without a co-scheduled user")
        if np.any((self.p > 0) & (self.s == 0)):
            errs.append("power on an unscheduled link")
        short = np.asarray(rate_total) - self.user_rates()
        if np.any(short > tol):
            errs.append(f"rate demand missed by up to {short.max():.3g}")
        return errs

    def to_dict(self) -> dict:
        return {"format": "allocation-v1", "s": self.s.tolist(), "u": self.u.tolist(),
                "p": self.p.tolist(), "r": self.r.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Allocation":
        if d.get("format") != "allocation-v1":
            raise ValueError("not an allocation-v1 document")
        return cls(d["s"], d["u"], d["p"], d["r"])

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


def build_allocation(s, rates, beta) -> Allocation:
    """Complete a schedule and per-link rates into a full allocation.

    SIC flags follow the optimal order and powers the closed-form minimum.
    """
    s = (np.asarray(s) > 0).astype(np.int8)
    r = np.where(s > 0, np.asarray(rates, float), 0.0)
    beta = np.asarray(beta, float)
    g = rate_to_gamma(r)
    nf, m = s.shape
    u = np.zeros((nf, m), np.int8)
    p = np.zeros((nf, m))
    for i in range(nf):
        idx = np.flatnonzero(s[i])
        if idx.size == 2:
            a, b = idx
            u[i, a], u[i, b] = optimal_sic_order(beta[i, a], beta[i, b])
        p[i] = subcarrier_powers(s[i], g[i], beta[i])
    return Allocation(s, u, p, r)


def system_power(alloc: Allocation, scenario) -> float:
    """Total minimum power implied by the schedule and rates of ``alloc``."""
    beta = scenario.beta if hasattr(scenario, "beta") else np.asarray(scenario, float)
    g = rate_to_gamma(alloc.r)
    return float(sum(subcarrier_power(alloc.s[i], g[i], beta[i]) for i in range(alloc.s.shape[0])))
