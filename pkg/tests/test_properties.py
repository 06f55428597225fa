import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from mcnoma.bnb import mccormick_lower
from mcnoma.channel import ncx2_cdf, ncx2_quantile
from mcnoma.kernel import perspective_log2
from mcnoma.sic import INFEASIBLE, PairSpec, case_power, pair_powers

pos = st.floats(1e-3, 1e4, allow_nan=False)
gam = st.floats(0.0, 1e3, allow_nan=False)


@given(pos, pos, gam, gam)
def test_pair_powers_symmetric(bm, bn, gm, gn):
    a = pair_powers(PairSpec(bm, bn, gm, gn))
    b = pair_powers(PairSpec(bn, bm, gn, gm))
    if bm != bn:
        assert np.allclose(a, b[::-1], rtol=1e-14, atol=0)
    else:
        # the tie goes to the first user; only the total is order-free
        assert np.isclose(sum(a), sum(b), rtol=1e-14, atol=0)


@given(pos, pos, st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_case_one_dominates(b1, b2, g1, g2):
    spec = PairSpec(max(b1, b2), min(b1, b2), g1, g2)
    p1 = case_power("I", spec)
    assert p1 <= case_power("II", spec) * (1 + 1e-12)
    for case in ("III", "IV"):
        p = case_power(case, spec)
        assert p == INFEASIBLE or p1 < p


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 5), st.floats(0.01, 5),
       st.floats(0, 1), st.floats(0, 1), st.sampled_from([1, -1]))
def test_mccormick_below_product(vL, wL, dv, dw, a, b, sign):
    vU, wU = vL + dv, wL + dw
    v, w = vL + a * dv, wL + b * dw
    assert mccormick_lower(sign, v, w, vL, vU, wL, wU) <= sign * v * w + 1e-9


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-6, 0.99), st.floats(0.0, 500.0))
def test_ncx2_round_trip(p, lam):
    x = ncx2_quantile(p, lam)
    assert abs(ncx2_cdf(x, lam) - p) <= 1e-8


@given(st.floats(0.0, 10.0), st.floats(0.0, 10.0))
def test_perspective_nonnegative_and_bounded(s, x):
    v = float(perspective_log2(s, x))
    assert v >= 0
    # s log2(1 + x/s) <= x / ln 2
    assert v <= x / np.log(2) + 1e-9
