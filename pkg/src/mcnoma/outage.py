"""Monte Carlo check of per-link outage under channel estimation error."""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .channel import Link, Scenario, _complex_normal
from .sic import Allocation, rate_to_gamma

# relative slack on SINR comparisons: powers sized from beta meet the target
# with equality at the threshold, which must not count as an outage
REL_TOL = 1e-9


@dataclass
class OutageResult:
    counts: np.ndarray          # (N_F, M) outage events
    trials: int
    delta: np.ndarray           # (N_F, M) targets
    scheduled: np.ndarray       # (N_F, M) bool
    user_counts: np.ndarray     # (M,) trials with any outage on the user's links

    def __post_init__(self):
        if self.trials <= 0:
            raise ValueError("trials must be positive")

    @property
    def freq(self) -> np.ndarray:
        return self.counts / self.trials

    @property
    def per_user(self) -> np.ndarray:
        return self.user_counts / self.trials

    def band(self, k: float = 3.0) -> np.ndarray:
        """Target plus ``k`` binomial standard deviations."""
        return self.delta + k * np.sqrt(self.delta * (1.0 - self.delta) / self.trials)

    def violations(self, k: float = 3.0) -> np.ndarray:
        return self.scheduled & (self.freq > self.band(k))

    def rows(self):
        nf, M = self.counts.shape
        for i in range(nf):
            for m in range(M):
                if self.scheduled[i, m]:
                    yield i, m, float(self.delta[i, m]), float(self.freq[i, m]), self.trials

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["subcarrier", "user", "delta_target", "outage_freq", "trials"])
        for i, m, d, f, t in self.rows():
            w.writerow([i, m, f"{d:.6e}", f"{f:.6e}", t])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def realized_rates(gain, p, s, noise):
    """Achievable rates ``(c_sic, c1, c2)`` on one subcarrier.

    ``gain`` holds ``|h|^2`` with users on the last axis; ``p`` and ``s`` are
    the row's powers and schedule.  ``c_sic`` is the rate at which a user can
    decode its partner's signal, ``c1`` its own rate after SIC and ``c2`` its
    own rate treating the partner as noise.
    """
    p = np.where(np.asarray(s) > 0, np.asarray(p, float), 0.0)
    p_other = p.sum(axis=-1, keepdims=True) - p
    g = np.asarray(gain, float)
    c_sic = np.log2(1.0 + g * p_other / (p * g + noise))
    c1 = np.log2(1.0 + p * g / noise)
    c2 = np.log2(1.0 + p * g / (g * p_other + noise))
    return c_sic, c1, c2


def outage_event(gain, alloc_row, r_row=None, noise=1.0):
    """Per-user outage indicator on one subcarrier.

    ``alloc_row`` is ``(s, u, p)`` or ``(s, u, p, r)``.  A SIC user is in
    outage if it cannot decode its partner or, having done so, its own
    signal.  A non-SIC user is in outage if its own rate falls short with the
    partner as noise.  Unscheduled users never are.
    """
    s, u, p = (np.asarray(a) for a in alloc_row[:3])
    r = np.asarray(alloc_row[3] if r_row is None else r_row, float)
    s = s > 0
    g = np.asarray(gain, float)
    pw = np.where(s, np.asarray(p, float), 0.0)
    rr = np.where(s, r, 0.0)
    p_other = pw.sum(axis=-1, keepdims=True) - pw
    r_other = rr.sum(axis=-1, keepdims=True) - rr
    need_own = rate_to_gamma(rr) * (1.0 - REL_TOL)
    need_other = rate_to_gamma(r_other) * (1.0 - REL_TOL)
    sinr_sic = g * p_other / (pw * g + noise)
    sinr1 = pw * g / noise
    sinr2 = pw * g / (g * p_other + noise)
    sic_fail = sinr_sic < need_other
    out = np.where(u > 0, sic_fail | (sinr1 < need_own), sinr2 < need_own)
    return out & s


def _chunk_counts(alloc: Allocation, h_hat, err, noise, n, rng):
    h = h_hat + _complex_normal(rng, err, size=(n,) + h_hat.shape)
    gain = np.abs(h) ** 2
    out = outage_event(gain, (alloc.s, alloc.u, alloc.p, alloc.r), noise=noise[None])
    return out.sum(axis=0), np.any(out, axis=1).sum(axis=0)


def _workers(workers):
    if workers is not None:
        return max(1, int(workers))
    return max(1, int(os.environ.get("NOMA_ALLOC_THREADS", "1")))


def monte_carlo_outage(alloc: Allocation, scenario: Scenario, trials: int, rng=None,
                       chunk: int = 50_000, workers: int | None = None) -> OutageResult:
    """Empirical per-link outage frequencies over ``trials`` channel draws.

    Trials are split into fixed-size chunks, each with its own child stream of
    ``rng``, so results do not depend on the number of workers.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    rng = np.random.default_rng(scenario.config.seed) if rng is None else rng
    h_hat = scenario.grid("h_hat").astype(complex)
    err = scenario.grid("err_var_abs").astype(float)
    noise = scenario.grid("noise_w").astype(float)
    sizes = [min(chunk, trials - k) for k in range(0, trials, chunk)]
    streams = rng.spawn(len(sizes))
    jobs = list(zip(sizes, streams))

    def run(job):
        n, r = job
        return _chunk_counts(alloc, h_hat, err, noise, n, r)

    nw = _workers(workers)
    if nw > 1:
        with ThreadPoolExecutor(nw) as ex:
            parts = list(ex.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    counts = sum(p[0] for p in parts)
    users = sum(p[1] for p in parts)
    return OutageResult(np.asarray(counts, int), trials, scenario.grid("delta").astype(float),
                        alloc.s > 0, np.asarray(users, int))


def naive_scenario(scenario: Scenario) -> Scenario:
    """Copy of ``scenario`` that takes the estimates as exact: beta = |h_hat|^2 / noise."""
    links = [[Link(l.h_hat, l.err_var_abs, l.noise_w, l.delta, abs(l.h_hat) ** 2 / l.noise_w)
              for l in row] for row in scenario.links]
    return Scenario(scenario.config, links, scenario.rate_total, scenario.distance_m)


def naive_allocation(scenario: Scenario, **dc_kwargs) -> Allocation:
    """D.C. allocation computed as if the channel estimates were perfect."""
    from .dc import solve_dc

    alloc, rep = solve_dc(naive_scenario(scenario), **dc_kwargs)
    if alloc is None:
        raise RuntimeError(f"naive allocation failed: {rep.status}")
    return alloc
