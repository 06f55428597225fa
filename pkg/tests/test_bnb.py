import itertools

import numpy as np
import pytest

from mcnoma import kernel
from mcnoma.bnb import (Box, branch, lower_bound_problem, mccormick_lower, penalty_objective,
                        recover_binary, solve_bnb, tighten_box)
from mcnoma.channel import sample_links
from mcnoma.rates import solve_fixed_schedule
from mcnoma.report import OPTIMAL
from mcnoma.sic import PairSpec, pair_powers

from conftest import tiny_config


def test_penalty_objective_examples():
    beta = np.array([[1.0]])
    assert penalty_objective([[0.5]], [[1.0]], 10.0, beta) == pytest.approx(6.0)
    assert penalty_objective([[0.3, 0.1]], [[0.0, 0.0]], 10.0, [[1.0, 2.0]]) == 0.0
    # sbar = 1 removes the penalty
    g = np.array([[3.0, 1.0]])
    b = np.array([[4.0, 2.0]])
    assert penalty_objective([[1, 1]], g, 50.0, b) == pytest.approx(3 / 4 + 1 / 2 + 3 / 4)


def test_mccormick_examples(rng):
    assert mccormick_lower(1, 0.5, 0.5, 0, 1, 0, 1) == pytest.approx(0.0)
    for sign in (1, -1):
        for v, w in itertools.product((0.2, 1.7), (-1.0, 3.0)):
            assert mccormick_lower(sign, v, w, 0.2, 1.7, -1.0, 3.0) == pytest.approx(sign * v * w)
    w = rng.uniform(-2, 2, 100)
    assert np.allclose(mccormick_lower(1, 0.7, w, 0.7, 0.7, -2, 2), 0.7 * w)
    assert np.allclose(mccormick_lower(-1, 0.7, w, 0.7, 0.7, -2, 2), -0.7 * w)


def test_branch_examples():
    init = Box(np.zeros((1, 2)), np.ones((1, 2)))
    left, right = branch(init, init)
    assert left.upper.tolist() == [[0.5, 1.0]]
    assert right.lower.tolist() == [[0.5, 0.0]]
    init = Box(np.zeros((1, 2)), np.array([[1.0, 10.0]]))
    box = Box(np.array([[0.0, 0.0]]), np.array([[0.2, 0.5]]))
    left, _ = branch(box, init)
    assert left.upper.tolist() == [[0.1, 0.5]]


def test_branch_is_exhaustive():
    init = Box(np.zeros((2, 3)), np.array([[1.0, 5.0, 2.0], [1.0, 1.0, 9.0]]))
    box = init
    for _ in range(60):
        box = branch(box, init)[0]
    assert np.max(box.width / init.width) <= 2.0 ** -10


def test_point_box_lower_bound_equals_objective():
    beta = np.array([[4.0, 2.0], [1.0, 3.0]])
    R = np.array([1.0, 1.0])
    gamma = np.array([[1.0, 0.5], [0.5, 1.0]])
    sbar = np.array([[1.0, 0.4], [0.3, 1.0]])
    v = np.hstack([gamma, sbar])
    box = Box(v.copy(), v.copy())
    res = kernel.solve(lower_bound_problem(box, 5.0, beta, R))
    assert res.objective_value == pytest.approx(penalty_objective(sbar, gamma, 5.0, beta), abs=1e-8)


def test_lower_bound_below_sampled_objective(rng):
    beta = np.array([[4.0, 2.0, 0.5], [1.0, 3.0, 2.0]])
    R = np.array([1.0, 1.5, 0.5])
    theta = 20.0
    init = Box.initial(R, 2)
    box = Box(init.lower.copy(), init.upper.copy())
    box.upper[:, :3] = [[2.0, 3.0, 1.0], [1.5, 2.0, 1.0]]
    lb = kernel.solve(lower_bound_problem(box, theta, beta, R)).objective_value
    v = rng.uniform(box.lower, box.upper, size=(20000,) + box.lower.shape)
    g, s = v[:, :, :3], v[:, :, 3:]
    ok = (np.log2(1 + g).sum(axis=1) >= R).all(axis=1) & (s.sum(axis=2) <= 2).all(axis=1)
    vals = [penalty_objective(s[k], g[k], theta, beta) for k in np.flatnonzero(ok)]
    assert len(vals) > 100
    assert lb <= min(vals) + 1e-9


def test_tighten_box_keeps_good_points(rng):
    beta = np.array([[4.0, 2.0], [1.0, 3.0]])
    R = np.array([1.0, 1.5])
    theta, ubd = 10.0, 3.0
    init = Box.initial(R, 2)
    tb = tighten_box(init, beta, R, theta, ubd)
    assert tb is not None
    v = rng.uniform(init.lower, init.upper, size=(50000,) + init.lower.shape)
    for k in range(v.shape[0]):
        g, s = v[k, :, :2], v[k, :, 2:]
        if (np.log2(1 + g).sum(axis=0) >= R).all() and (s.sum(axis=1) <= 2).all() \
                and penalty_objective(s, g, theta, beta) < ubd:
            assert tb.contains(v[k], tol=1e-12)


def test_recover_binary_examples():
    a = recover_binary([[0.5, 0.0]], [[1.0, 1.0]])
    assert a.s.tolist() == [[1, 0]]
    a = recover_binary(np.zeros((2, 3)), np.ones((2, 3)))
    assert a.s.sum() == 0 and a.total_power == 0.0


def test_single_user_single_subcarrier():
    alloc, rep = solve_bnb(np.array([[5.0]]), rate_total=np.array([2.0]), eps=1e-6)
    assert rep.status == OPTIMAL
    assert alloc.total_power == pytest.approx(3 / 5, rel=1e-6)


def test_two_users_one_subcarrier_closed_form():
    beta = np.array([[9.0, 2.0]])
    R = np.array([1.5, 2.0])
    alloc, rep = solve_bnb(beta, rate_total=R, eps=1e-6)
    ref = sum(pair_powers(PairSpec(9.0, 2.0, 2 ** 1.5 - 1, 3.0)))
    assert alloc.total_power == pytest.approx(ref, rel=1e-6)


def _enumerate(beta, R):
    nf, M = beta.shape
    rows = [()] + [(m,) for m in range(M)] + list(itertools.combinations(range(M), 2))
    best = np.inf
    for combo in itertools.product(rows, repeat=nf):
        s = np.zeros((nf, M), bool)
        for i, c in enumerate(combo):
            s[i, list(c)] = True
        if s.any(axis=0).all():
            best = min(best, solve_fixed_schedule(s, beta, R)[1])
    return best


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_small_instances_match_enumeration(seed):
    sc = sample_links(tiny_config(2, 3, seed))
    eps = 1e-4 * _enumerate(sc.beta, sc.rate_total)
    alloc, rep = solve_bnb(sc, eps=eps, heuristic=False)
    assert rep.status == OPTIMAL
    lbd, ubd = rep.notes["lbd"], rep.notes["ubd"]
    assert ubd - lbd <= eps
    assert alloc.check(sc.rate_total) == []
    exact = _enumerate(sc.beta, sc.rate_total)
    assert lbd <= exact + 1e-9
    assert alloc.total_power <= exact + eps


def test_trace_monotone():
    sc = sample_links(tiny_config(2, 4, 4))
    _, rep = solve_bnb(sc, eps=1e-6 * 1, heuristic=False, node_budget=300)
    tr = np.array(rep.trace)
    assert np.all(np.diff(tr[:, 0]) >= -1e-12)
    assert np.all(np.diff(tr[:, 1]) <= 1e-12)
    assert np.all(tr[:, 0] <= tr[:, 1] + 1e-12)


def test_plain_scheme_branches_and_agrees():
    sc = sample_links(tiny_config(2, 4, 0))
    alloc, rep = solve_bnb(sc, eps=1e-4, heuristic=False, tighten=False)
    assert rep.status == OPTIMAL
    assert rep.iterations > 5
    exact = _enumerate(sc.beta, sc.rate_total)
    assert rep.notes["lbd"] <= exact + 1e-9
    assert alloc.total_power <= exact + 1e-4
