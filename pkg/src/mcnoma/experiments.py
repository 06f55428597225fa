"""Seeded parameter sweeps over rate, estimation error and user count."""
from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import SystemConfig, sample_links, w_to_dbm

log = logging.getLogger(__name__)

RATE, KAPPA2, USERS = "RATE", "KAPPA2", "USERS"
METHODS = ("bnb", "dc", "oma", "random", "equal_rate", "oracle", "naive")
_AXIS_ID = {RATE: 0, KAPPA2: 1, USERS: 2}


@dataclass
class SweepSpec:
    axis: str
    values: list
    trials_per_point: int = 50
    methods: tuple = ("dc", "oma")
    base: SystemConfig = field(default_factory=lambda: SystemConfig(8, 12))
    seed: int = 0
    bnb_time_limit: float | None = 600.0

    def __post_init__(self):
        self.axis = self.axis.upper()
        if self.axis not in _AXIS_ID:
            raise ValueError(f"unknown axis {self.axis!r}")
        if len(self.values) == 0:
            raise ValueError("sweep needs at least one value")
        if self.trials_per_point < 1:
            raise ValueError("trials_per_point must be at least 1")
        self.methods = tuple(m.replace("-", "_") for m in self.methods)
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}")

    def config_for(self, value, trial: int, point: int) -> SystemConfig:
        seq = np.random.SeedSequence([self.seed, _AXIS_ID[self.axis], point, trial])
        seed = int(seq.generate_state(1)[0])
        if self.axis == RATE:
            return replace(self.base, rate_range=(float(value), float(value)), seed=seed)
        if self.axis == KAPPA2:
            return replace(self.base, err_var=float(value), seed=seed)
        return replace(self.base, n_users=int(value), seed=seed)


def run_method(method: str, scenario, seed: int, bnb_time_limit=None):
    """Total power of one method on one scenario; ``(power_w, status)``."""
    from . import baselines, bnb, dc, outage

    rng = np.random.default_rng(seed)
    if method == "dc":
        _, rep = dc.solve_dc(scenario)
    elif method == "bnb":
        _, rep = bnb.solve_bnb(scenario, time_limit=bnb_time_limit)
    elif method == "oma":
        _, rep = baselines.solve_oma(scenario, rng)
    elif method == "random":
        _, rep = baselines.solve_random_pairing(scenario, rng)
    elif method == "equal_rate":
        _, rep = baselines.solve_equal_rate(scenario)
    elif method == "oracle":
        _, value = baselines.brute_force_oracle(scenario)
        return value, "OPTIMAL" if np.isfinite(value) else "INFEASIBLE"
    elif method == "naive":
        alloc = outage.naive_allocation(scenario)
        return alloc.total_power, "CONVERGED"
    else:
        raise ValueError(f"unknown method {method!r}")
    return rep.objective, rep.status


def _run_cell(args):
    spec, point, value, trial = args
    cfg = spec.config_for(value, trial, point)
    scenario = sample_links(cfg)
    out = []
    for k, method in enumerate(spec.methods):
        try:
            power, status = run_method(method, scenario, cfg.seed + k, spec.bnb_time_limit)
        except Exception as exc:            # keep sweeping, record the failure
            log.warning("cell %s=%s trial %d method %s failed: %s", spec.axis, value, trial, method, exc)
            power, status = np.nan, f"ERROR: {exc}"
        out.append((value, method, trial, power, status))
    return out


def _workers():
    return max(1, int(os.environ.get("NOMA_ALLOC_THREADS", "1")))


def run_sweep(spec: SweepSpec, workers: int | None = None) -> list[tuple]:
    """Per-trial rows ``(axis_value, method, trial, power_w, status)``, ordered by
    (axis_value, method, trial) regardless of the worker count."""
    jobs = [(spec, p, v, t) for p, v in enumerate(spec.values) for t in range(spec.trials_per_point)]
    nw = _workers() if workers is None else max(1, workers)
    if nw > 1:
        with ProcessPoolExecutor(nw) as ex:
            parts = list(ex.map(_run_cell, jobs))
    else:
        parts = [_run_cell(j) for j in jobs]
    rows = [r for part in parts for r in part]
    order = {m: k for k, m in enumerate(spec.methods)}
    pos = {v: k for k, v in enumerate(spec.values)}
    rows.sort(key=lambda r: (pos[r[0]], order[r[1]], r[2]))
    return rows


def summarize(rows) -> list[tuple]:
    """Aggregate rows into ``(axis_value, method, mean_power_dbm, std, trials)``.

    The mean is taken in watts and then converted; ``std`` is the spread of
    the per-trial powers in dB.  Failed trials are dropped; a cell with no
    success yields NaN.
    """
    out = []
    keys = []
    for r in rows:
        if (r[0], r[1]) not in keys:
            keys.append((r[0], r[1]))
    for value, method in keys:
        p = np.array([r[3] for r in rows if r[0] == value and r[1] == method], float)
        ok = p[np.isfinite(p) & (p > 0)]
        if ok.size == 0:
            out.append((value, method, np.nan, np.nan, 0))
            continue
        out.append((value, method, float(w_to_dbm(ok.mean())),
                    float(np.std(w_to_dbm(ok))), int(ok.size)))
    return out


def summary_csv(summary, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["axis_value", "method", "mean_power_dbm", "std", "trials"])
    for value, method, mean, std, n in summary:
        w.writerow([value, method, f"{mean:.2f}", f"{std:.2f}", n])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def trials_csv(rows, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["axis_value", "method", "trial", "power_w", "status"])
    for value, method, trial, power, status in rows:
        w.writerow([value, method, trial, repr(float(power)), status])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
