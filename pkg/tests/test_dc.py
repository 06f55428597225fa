import numpy as np
import pytest

from mcnoma import kernel
from mcnoma.channel import sample_links
from mcnoma.dc import (DcIterate, _Layout, dc_split, linearized_subproblem, repair_schedule,
                       round_schedule, solve_dc)
from mcnoma.report import CONVERGED

from conftest import tiny_config


def _bigm_objective(s, gt, beta):
    nf, M = beta.shape
    val = np.sum(gt / beta)
    for i in range(nf):
        for m in range(M):
            for n in range(m + 1, M):
                val += gt[i, m] * gt[i, n] / max(beta[i, m], beta[i, n])
    return val


def test_split_binary_schedule(rng):
    beta = rng.uniform(0.5, 10, (3, 4))
    s = rng.integers(0, 2, (3, 4)).astype(float)
    gt = s * rng.uniform(0, 5, (3, 4))
    g1, g2 = dc_split(s, gt, 37.0, beta)
    assert g1 - g2 == pytest.approx(_bigm_objective(s, gt, beta), rel=1e-12)


def test_split_zero_gamma(rng):
    beta = rng.uniform(0.5, 10, (2, 3))
    s = rng.uniform(0, 1, (2, 3))
    g1, g2 = dc_split(s, np.zeros((2, 3)), 4.0, beta)
    assert g1 - g2 == pytest.approx(4.0 * np.sum(s - s * s))
    assert g1 - g2 >= 0


def test_square_identity(rng):
    a, b = rng.normal(size=(2, 1000)) * 10
    assert np.allclose(0.5 * (a + b) ** 2 - 0.5 * (a * a + b * b), a * b, rtol=0, atol=1e-12 * 100)


def test_subproblem_majorizes(rng):
    beta = rng.uniform(0.5, 10, (2, 3))
    R = np.array([1.0, 2.0, 0.5])
    eta = 3.0
    lay = _Layout(beta, R)
    s0 = rng.uniform(0, 1, (2, 3))
    g0 = rng.uniform(0, 3, (2, 3))
    prob = linearized_subproblem(DcIterate(s0, g0, 0.0, 0), eta, beta, R)
    x0 = lay.join(s0, g0)
    assert prob.objective(x0) == pytest.approx(lay.g1(s0, g0, eta) - lay.g2(s0, g0, eta), rel=1e-12)
    for _ in range(10000 // 100):
        s = rng.uniform(0, 1, (100, 2, 3))
        g = rng.uniform(0, 8, (100, 2, 3))
        for k in range(100):
            true = lay.g1(s[k], g[k], eta) - lay.g2(s[k], g[k], eta)
            assert prob.objective(lay.join(s[k], g[k])) >= true - 1e-9


def test_subproblem_single_user_fixed_schedule():
    lay = _Layout(np.array([[4.0]]), np.array([3.0]))
    prob = lay.linearized(np.ones((1, 1)), np.zeros((1, 1)), 2.0, s_fixed=np.ones((1, 1)))
    res = kernel.solve(prob)
    # the feasible set is the single point gt = 7 (gt <= s U), solved with the
    # kernel's no-interior relaxation
    assert lay.split(res.x)[1][0, 0] == pytest.approx(7.0, abs=1e-5)


def test_single_user_closed_form():
    alloc, rep = solve_dc(np.array([[5.0]]), rate_total=np.array([2.5]))
    assert rep.status == CONVERGED
    assert alloc.total_power == pytest.approx((2 ** 2.5 - 1) / 5, abs=1e-6)


@pytest.mark.parametrize("seed", [0, 3])
def test_trace_nonincreasing_and_feasible(seed):
    sc = sample_links(tiny_config(3, 4, seed))
    alloc, rep = solve_dc(sc)
    tr = np.asarray(rep.trace)
    scale = max(1.0, abs(tr[0]))
    assert np.all(np.diff(tr) <= 1e-6 * scale)
    assert rep.iterations <= 100
    assert alloc.check(sc.rate_total) == []
    assert np.all(alloc.s.sum(axis=1) <= 2)


def test_round_and_repair():
    s = np.array([[0.9, 0.6, 0.7], [0.1, 0.2, 0.3]])
    r = round_schedule(s)
    assert r.tolist() == [[True, False, True], [False, False, False]]
    beta = np.array([[1.0, 1.0, 1.0], [1.0, 5.0, 1.0]])
    fixed = repair_schedule(r, beta, [1.0, 1.0, 1.0])
    assert fixed[1, 1] and fixed.any(axis=0).all()
    full = np.array([[1, 1, 0]], bool)
    assert repair_schedule(full, np.ones((1, 3)), [1, 1, 1]) is None
