import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog as scipy_linprog

from groupfts.lp import Infeasible, Unbounded, linprog


def test_textbook_maximisation():
    # max 3x + 5y  s.t. x <= 4, 2y <= 12, 3x + 2y <= 18
    res = linprog([-3, -5], A_ub=[[1, 0], [0, 2], [3, 2]], b_ub=[4, 12, 18])
    np.testing.assert_allclose(res.x, [2, 6], atol=1e-12)
    assert res.fun == pytest.approx(-36)


def test_equality_with_negative_rhs():
    res = linprog([1, 1], A_eq=[[1, -1]], b_eq=[-2])
    np.testing.assert_allclose(res.x, [0, 2], atol=1e-12)


def test_infeasible():
    with pytest.raises(Infeasible):
        linprog([1, 1], A_eq=[[1, 1]], b_eq=[-1])


def test_unbounded():
    with pytest.raises(Unbounded):
        linprog([-1, 0], A_ub=[[0, 1]], b_ub=[1])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 6), st.integers(1, 5))
def test_matches_highs_on_random_bounded_problems(seed, n, m):
    rng = np.random.default_rng(seed)
    A = rng.uniform(0.1, 2.0, size=(m, n))
    b = rng.uniform(1.0, 5.0, size=m)
    c = rng.normal(size=n)
    ref = scipy_linprog(c, A_ub=A, b_ub=b, bounds=(0, None), method="highs")
    res = linprog(c, A_ub=A, b_ub=b)
    assert res.fun == pytest.approx(ref.fun, abs=1e-8)
    assert np.all(A @ res.x <= b + 1e-9)
    assert np.all(res.x >= -1e-12)
