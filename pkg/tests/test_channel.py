import math

import numpy as np
import pytest
from scipy import integrate, stats

from mcnoma.channel import (Link, Scenario, SystemConfig, cnr_outage_threshold, dbm_to_w,
                            ncx2_cdf, ncx2_pdf, ncx2_quantile, path_loss, path_loss_db,
                            sample_links, sample_true_channel, w_to_dbm)


def test_path_loss_reference_points():
    cfg = SystemConfig(1, 1)
    assert path_loss_db(1.0, cfg) == pytest.approx(38.0)
    assert path_loss_db(100.0, cfg) == pytest.approx(110.0)
    assert path_loss_db(500.0, cfg) == pytest.approx(135.163, abs=1e-3)
    assert path_loss(1.0, cfg, check=False) == pytest.approx(10 ** 3.8)


def test_path_loss_rejects_short_distance():
    with pytest.raises(ValueError):
        path_loss(10.0, SystemConfig(1, 1))


def test_dbm_round_trip():
    w = np.array([1e-3, 0.5874, 4.276])
    assert np.allclose(dbm_to_w(w_to_dbm(w)), w)
    assert w_to_dbm(1.0) == pytest.approx(30.0)


def test_ncx2_cdf_central_closed_form():
    for x in (0.01, 0.5, 3.0, 40.0):
        assert ncx2_cdf(x, 0.0) == pytest.approx(1 - math.exp(-x / 2), rel=1e-14)
    assert ncx2_cdf(0.0, 3.0) == 0.0


def test_ncx2_cdf_against_quadrature():
    val, _ = integrate.quad(lambda t: float(ncx2_pdf(t, 4.0)), 0, 4.0, epsabs=1e-13)
    assert ncx2_cdf(4.0, 4.0) == pytest.approx(val, abs=1e-8)


@pytest.mark.parametrize("lam", [0.1, 2.0, 50.0, 800.0])
def test_ncx2_cdf_matches_scipy(lam):
    xs = np.linspace(0.01, lam + 10 * math.sqrt(lam + 1) + 5, 25)
    ours = np.array([ncx2_cdf(x, lam) for x in xs])
    assert np.allclose(ours, stats.ncx2.cdf(xs, 2, lam), atol=1e-10)


def test_ncx2_quantile_examples():
    assert ncx2_quantile(0.0, 5.0) == 0.0
    assert ncx2_quantile(0.1, 0.0) == pytest.approx(0.21072, abs=1e-5)
    with pytest.raises(ValueError):
        ncx2_quantile(1.0, 2.0)


def test_ncx2_quantile_round_trip():
    for lam in (0.0, 0.3, 7.0, 90.0, 2000.0):
        for p in (1e-4, 1e-2, 0.1, 0.5, 0.9):
            x = ncx2_quantile(p, lam)
            assert ncx2_cdf(x, lam) == pytest.approx(p, abs=1e-8)


def test_threshold_perfect_csit():
    h = 3e-6 + 4e-6j
    assert cnr_outage_threshold(h, 0.0, 1e-16, 0.05) == pytest.approx(abs(h) ** 2 / 1e-16)


def test_threshold_zero_estimate():
    # |h|^2 is exponential with mean 1: beta = -ln(1 - delta)
    assert cnr_outage_threshold(0j, 1.0, 1.0, 0.1) == pytest.approx(0.10536, abs=1e-5)


def test_threshold_increases_with_estimate():
    b = [cnr_outage_threshold(a + 0j, 0.1, 1.0, 0.01) for a in (0.0, 0.5, 1.0, 2.0)]
    assert np.all(np.diff(b) > 0)


def test_sample_links_error_variance():
    cfg = SystemConfig(2, 3, err_var=0.0, seed=5)
    sc = sample_links(cfg)
    assert np.all(sc.grid("err_var_abs") == 0)
    beta = sc.beta
    g = np.abs(sc.grid("h_hat")) ** 2 / sc.grid("noise_w")
    assert np.allclose(beta, g)


def test_sample_links_estimate_variance():
    # kappa^2 = 0.1 at path loss 1e11: err = 1e-12, Var(h_hat) = 9e-12
    cfg = SystemConfig(400, 1, seed=3, err_var=0.1)
    d = 10 ** ((110.0 - cfg.pathloss_intercept_db) / (10 * cfg.pathloss_exponent))
    cfg.cell_radius_m = cfg.min_distance_m = d
    sc = sample_links(cfg)
    assert sc.grid("err_var_abs")[0, 0] == pytest.approx(1e-12, rel=1e-9)
    h = sc.grid("h_hat")[:, 0]
    assert np.mean(np.abs(h) ** 2) == pytest.approx(9e-12, rel=0.15)


def test_sample_links_deterministic():
    a = sample_links(SystemConfig(3, 4, seed=9)).to_dict()
    b = sample_links(SystemConfig(3, 4, seed=9)).to_dict()
    c = sample_links(SystemConfig(3, 4, seed=10)).to_dict()
    assert a == b
    assert a != c


def test_scenario_round_trip():
    sc = sample_links(SystemConfig(2, 3, seed=1))
    back = Scenario.from_dict(sc.to_dict())
    assert np.array_equal(back.beta, sc.beta)
    assert np.array_equal(back.rate_total, sc.rate_total)
    with pytest.raises(ValueError):
        Scenario.from_dict({"format": "nope"})


def test_true_channel_perfect_csit(rng):
    link = Link(1 + 2j, 0.0, 1.0, 0.1, 5.0)
    assert sample_true_channel(link, rng) == 1 + 2j


def test_true_channel_moments_and_outage(rng):
    link = Link(0.8 + 0.3j, 0.2, 0.5, 0.05, 0.0)
    link.beta = cnr_outage_threshold(link.h_hat, link.err_var_abs, link.noise_w, link.delta)
    n = 1_000_000
    h = sample_true_channel(link, rng, n)
    sd = math.sqrt(link.err_var_abs / 2 / n)
    assert abs(h.mean().real - 0.8) < 4 * sd
    assert abs(h.mean().imag - 0.3) < 4 * sd
    freq = np.mean(np.abs(h) ** 2 / link.noise_w < link.beta)
    assert abs(freq - link.delta) < 3 * math.sqrt(link.delta * (1 - link.delta) / n)
