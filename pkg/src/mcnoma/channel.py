"""Scenario generation and CNR outage thresholds.

The true channel is modelled as ``h = h_hat + dh`` with ``dh ~ CN(0, err_var_abs)``.
Conditioned on the estimate, ``|h|^2`` is a scaled noncentral chi-square with two
degrees of freedom::

    |h|^2 = (err_var_abs / 2) * X,   X ~ ncx2(2, lam),   lam = 2 |h_hat|^2 / err_var_abs
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammainc, gammaln, i0e

DBM_OFFSET = 30.0


def dbm_to_w(dbm):
    return 10.0 ** ((np.asarray(dbm, float) - DBM_OFFSET) / 10.0)


def w_to_dbm(w):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(w, float)) + DBM_OFFSET


# --- noncentral chi-square, two degrees of freedom ---------------------------

def ncx2_pdf(x, lam):
    """Density of ncx2(2, lam), using the exponentially scaled Bessel function."""
    x = np.asarray(x, float)
    z = np.sqrt(lam * np.maximum(x, 0.0))
    return np.where(x < 0, 0.0, 0.5 * np.exp(-(x + lam) / 2.0 + z) * i0e(z))


def ncx2_cdf(x: float, lam: float) -> float:
    """P(X <= x) for X ~ ncx2(2, lam).

    Poisson mixture of central chi-squares::

        F(x) = sum_j Pois(j; lam/2) * P(j + 1, x/2)

    with ``P`` the regularized lower incomplete gamma.  Terms are summed outward
    from the Poisson mode so the truncation error is controlled on both sides.
    """
    if x <= 0:
        return 0.0
    if lam < 0:
        raise ValueError("noncentrality must be nonnegative")
    mu = lam / 2.0
    if mu == 0.0:           # lam == 0, or subnormal enough to underflow
        return -math.expm1(-x / 2.0)
    half = x / 2.0
    mode = int(mu)
    # a window of +-(12 sd + 30) Poisson terms captures mass beyond 1 - 1e-16
    width = int(12.0 * math.sqrt(mu) + 30)
    j = np.arange(max(0, mode - width), mode + width + 1)
    log_pois = j * math.log(mu) - mu - gammaln(j + 1.0)
    terms = np.exp(log_pois) * gammainc(j + 1.0, half)
    return float(min(1.0, max(0.0, terms.sum())))


def ncx2_quantile(p: float, lam: float) -> float:
    """Inverse of :func:`ncx2_cdf` in ``x``.

    Bracket the root by doubling, then run Newton steps that fall back to
    bisection whenever they leave the bracket.  Values below 1e-300 are
    returned as 0.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"quantile undefined for p={p!r}; need 0 <= p < 1")
    if lam < 0:
        raise ValueError("noncentrality must be nonnegative")
    if p == 0.0:
        return 0.0
    if lam == 0:
        x = -2.0 * math.log1p(-p)
        return 0.0 if x < 1e-300 else x

    lo, hi = 0.0, max(1.0, lam + 2.0)
    while ncx2_cdf(hi, lam) < p:
        lo, hi = hi, 2.0 * hi
    # starting point: mean-matched guess clipped into the bracket
    x = min(max(p * (lam + 2.0), lo), hi) if lo == 0.0 else 0.5 * (lo + hi)
    for _ in range(200):
        f = ncx2_cdf(x, lam) - p
        if abs(f) <= 1e-14 * max(p, 1e-300) or hi - lo <= 1e-15 * max(hi, 1e-300):
            break
        if f < 0:
            lo = x
        else:
            hi = x
        d = float(ncx2_pdf(x, lam))
        step_ok = False
        # a vanishing density (deep tail) leaves the step to bisection
        if d > abs(f) * 1e-300:
            xn = x - f / d
            if lo < xn < hi:
                x, step_ok = xn, True
        if not step_ok:
            x = 0.5 * (lo + hi)
    return 0.0 if x < 1e-300 else float(x)


def cnr_outage_threshold(h_hat: complex, err_var_abs: float, noise_w: float, delta: float) -> float:
    """Largest beta with P(|h|^2 / noise < beta | h_hat) <= delta."""
    if noise_w <= 0:
        raise ValueError("noise power must be positive")
    if not 0.0 < delta < 1.0:
        raise ValueError("outage target must lie in (0, 1)")
    g = abs(h_hat) ** 2
    if err_var_abs == 0:
        return g / noise_w
    lam = 2.0 * g / err_var_abs
    return 0.5 * err_var_abs * ncx2_quantile(delta, lam) / noise_w


# --- configuration and scenarios ------------------------------------------------

@dataclass
class SystemConfig:
    n_subcarriers: int
    n_users: int
    cell_radius_m: float = 500.0
    min_distance_m: float = 30.0
    carrier_hz: float = 1.9e9
    subcarrier_bw_hz: float = 15e3
    noise_dbm: float = -128.0
    pathloss_exponent: float = 3.6
    pathloss_intercept_db: float = 38.0
    err_var: float = 0.1
    outage_range: tuple[float, float] = (1e-5, 1e-1)
    rate_range: tuple[float, float] = (1.0, 10.0)
    seed: int = 0

    def __post_init__(self):
        self.outage_range = tuple(float(v) for v in self.outage_range)
        self.rate_range = tuple(float(v) for v in self.rate_range)
        self.validate()

    def validate(self):
        if self.n_subcarriers < 1 or self.n_users < 1:
            raise ValueError("need at least one subcarrier and one user")
        if not 0.0 <= self.err_var < 1.0:
            raise ValueError("err_var must lie in [0, 1)")
        lo, hi = self.outage_range
        if not 0.0 < lo <= hi < 1.0:
            raise ValueError("outage_range must be inside (0, 1)")
        lo, hi = self.rate_range
        if not 0.0 < lo <= hi:
            raise ValueError("rate_range must be positive")
        if not 0.0 < self.min_distance_m <= self.cell_radius_m:
            raise ValueError("need 0 < min_distance_m <= cell_radius_m")

    @property
    def noise_w(self) -> float:
        return float(dbm_to_w(self.noise_dbm))


@dataclass
class Link:
    h_hat: complex
    err_var_abs: float
    noise_w: float
    delta: float
    beta: float


@dataclass
class Scenario:
    config: SystemConfig
    links: list[list[Link]]
    rate_total: np.ndarray
    distance_m: np.ndarray | None = None
    _beta: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.rate_total = np.asarray(self.rate_total, float)

    @property
    def n_subcarriers(self) -> int:
        return len(self.links)

    @property
    def n_users(self) -> int:
        return len(self.rate_total)

    @property
    def shape(self):
        return self.n_subcarriers, self.n_users

    def grid(self, name: str) -> np.ndarray:
        return np.array([[getattr(l, name) for l in row] for row in self.links])

    @property
    def beta(self) -> np.ndarray:
        if self._beta is None:
            self._beta = self.grid("beta").astype(float)
        return self._beta

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["outage_range"] = list(cfg["outage_range"])
        cfg["rate_range"] = list(cfg["rate_range"])
        links = [[{"h_hat": [l.h_hat.real, l.h_hat.imag], "err_var_abs": l.err_var_abs,
                   "noise_w": l.noise_w, "delta": l.delta, "beta": l.beta}
                  for l in row] for row in self.links]
        out = {"format": "scenario-v1", "config": cfg, "links": links,
               "rate_total": self.rate_total.tolist()}
        if self.distance_m is not None:
            out["distance_m"] = np.asarray(self.distance_m).tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        if d.get("format") != "scenario-v1":
            raise ValueError("not a scenario-v1 document")
        cfg = SystemConfig(**d["config"])
        links = [[Link(complex(*l["h_hat"]), float(l["err_var_abs"]), float(l["noise_w"]),
                       float(l["delta"]), float(l["beta"])) for l in row] for row in d["links"]]
        dist = d.get("distance_m")
        return cls(cfg, links, np.asarray(d["rate_total"], float),
                   None if dist is None else np.asarray(dist, float))


def path_loss(d_m, cfg: SystemConfig, check: bool = True):
    """Linear path-loss attenuation at distance ``d_m``.

    ``check=False`` skips the minimum-distance test, e.g. to read off the
    intercept at 1 m.
    """
    d = np.asarray(d_m, float)
    if check and np.any(d < cfg.min_distance_m):
        raise ValueError(f"distance below minimum {cfg.min_distance_m} m")
    pl_db = cfg.pathloss_intercept_db + 10.0 * cfg.pathloss_exponent * np.log10(d)
    return 10.0 ** (pl_db / 10.0)


def path_loss_db(d_m, cfg: SystemConfig):
    return cfg.pathloss_intercept_db + 10.0 * cfg.pathloss_exponent * np.log10(np.asarray(d_m, float))


def _complex_normal(rng, var, size=None):
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def sample_links(cfg: SystemConfig, rng=None) -> Scenario:
    """Draw user positions, demands, outage targets and channel estimates."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    nf, m = cfg.n_subcarriers, cfg.n_users
    dist = rng.uniform(cfg.min_distance_m, cfg.cell_radius_m, size=m)
    rate = rng.uniform(*cfg.rate_range, size=m)
    lo, hi = np.log(cfg.outage_range[0]), np.log(cfg.outage_range[1])
    delta = np.exp(rng.uniform(lo, hi, size=(nf, m)))
    pl = path_loss(dist, cfg)
    h_hat = _complex_normal(rng, (1.0 - cfg.err_var) / pl, size=(nf, m))
    err = cfg.err_var / pl
    noise = cfg.noise_w
    links = [[Link(complex(h_hat[i, k]), float(err[k]), noise, float(delta[i, k]),
                   cnr_outage_threshold(h_hat[i, k], err[k], noise, delta[i, k]))
              for k in range(m)] for i in range(nf)]
    return Scenario(cfg, links, rate, dist)


def scenario_from_arrays(beta, rate_total, cfg: SystemConfig | None = None,
                         h_hat=None, err_var_abs=None, delta=None) -> Scenario:
    """Wrap explicit threshold/demand arrays in a :class:`Scenario`."""
    beta = np.atleast_2d(np.asarray(beta, float))
    nf, m = beta.shape
    cfg = cfg or SystemConfig(nf, m)
    noise = cfg.noise_w
    if h_hat is None:
        h_hat = np.sqrt(beta * noise).astype(complex)
    err = np.zeros((nf, m)) if err_var_abs is None else np.broadcast_to(err_var_abs, (nf, m))
    dl = np.full((nf, m), 0.5) if delta is None else np.broadcast_to(delta, (nf, m))
    links = [[Link(complex(h_hat[i, k]), float(err[i, k]), noise, float(dl[i, k]), float(beta[i, k]))
              for k in range(m)] for i in range(nf)]
    return Scenario(cfg, links, np.asarray(rate_total, float))


def sample_true_channel(link: Link, rng, size=None):
    """Draw true channels around the estimate held by ``link``."""
    if link.err_var_abs == 0:
        return np.full(size, link.h_hat, complex) if size is not None else link.h_hat
    return link.h_hat + _complex_normal(rng, link.err_var_abs, size)
