import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from eqodds.lp import Infeasible, LpProblem, Unbounded, solve


def test_textbook_problem():
    # max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18
    res = solve(LpProblem([-3, -5], A_ub=[[1, 0], [0, 2], [3, 2]], b_ub=[4, 12, 18]))
    assert res.fun == pytest.approx(-36)
    np.testing.assert_allclose(res.x, [2, 6], atol=1e-12)


def test_equality_and_bounds():
    res = solve(LpProblem([1, 1, 1], A_eq=[[1, 2, 3]], b_eq=[4], lb=[0, 0, 0], ub=[1, 1, 1]))
    assert res.fun == pytest.approx(1.5)
    np.testing.assert_allclose(res.x, [0, 0.5, 1], atol=1e-12)


def test_negative_lower_bounds():
    res = solve(LpProblem([1.0], lb=[-2.0], ub=[3.0]))
    assert res.x[0] == pytest.approx(-2.0)


def test_infeasible():
    with pytest.raises(Infeasible):
        solve(LpProblem([1, 1], A_eq=[[1, 1]], b_eq=[3], ub=[1, 1]))


def test_unbounded():
    with pytest.raises(Unbounded):
        solve(LpProblem([-1, 0], A_ub=[[0, 1]], b_ub=[1]))


def test_degenerate_cycling_example():
    # Beale's example cycles under the textbook rule; Bland's rule terminates
    c = [-0.75, 150, -0.02, 6]
    A = [[0.25, -60, -0.04, 9], [0.5, -90, -0.02, 3], [0, 0, 1, 0]]
    res = solve(LpProblem(c, A_ub=A, b_ub=[0, 0, 1]))
    assert res.fun == pytest.approx(-0.05)


def test_redundant_equalities():
    res = solve(LpProblem([1, 2], A_eq=[[1, 1], [2, 2]], b_eq=[1, 2], ub=[1, 1]))
    assert res.fun == pytest.approx(1.0)


def test_shape_errors():
    with pytest.raises(ValueError):
        LpProblem([1, 2], A_eq=[[1, 2, 3]], b_eq=[1])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_matches_scipy_on_random_boxed_problems(seed):
    rng = np.random.default_rng(seed)
    n, m_eq, m_ub = rng.integers(2, 7), rng.integers(0, 3), rng.integers(0, 5)
    c = rng.normal(size=n)
    x0 = rng.uniform(0.1, 0.9, n)  # interior point keeps the problem feasible
    A_eq = rng.normal(size=(m_eq, n)) if m_eq else None
    b_eq = A_eq @ x0 if m_eq else None
    A_ub = rng.normal(size=(m_ub, n)) if m_ub else None
    b_ub = A_ub @ x0 + rng.uniform(0, 1, m_ub) if m_ub else None
    ours = solve(LpProblem(c, A_eq=A_eq, b_eq=b_eq, A_ub=A_ub, b_ub=b_ub, ub=np.ones(n)))
    ref = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=[(0, 1)] * n,
                  method="highs")
    assert ref.status == 0
    assert ours.fun == pytest.approx(ref.fun, abs=1e-9)
    x = ours.x
    assert np.all(x >= -1e-9) and np.all(x <= 1 + 1e-9)
    if m_eq:
        np.testing.assert_allclose(A_eq @ x, b_eq, atol=1e-9)
    if m_ub:
        assert np.all(A_ub @ x <= b_ub + 1e-9)
