import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from chainkit.minimal import minimal_solution


def _substochastic(rng, n, leak=0.2):
    M = rng.random((n, n)) * (rng.random((n, n)) < 0.6)
    rows = M.sum(axis=1, keepdims=True)
    rows[rows == 0] = 1.0
    return M / rows * (1 - leak * rng.random((n, 1)))


@given(st.integers(1, 12), st.integers(0, 10**6), st.booleans())
def test_matches_linear_solve_when_unique(n, seed, left):
    rng = np.random.default_rng(seed)
    M = _substochastic(rng, n, leak=0.3)
    M *= 0.95
    b = rng.random(n)
    sol = minimal_solution(M, b, left=left)
    A = np.eye(n) - (M.T if left else M)
    oracle = np.linalg.solve(A, b)
    assert sol.converged
    np.testing.assert_allclose(sol.values, oracle, rtol=1e-10, atol=1e-12)


def test_selects_minimal_solution():
    # x = b + M x with a closed unreachable loop at index 1
    M = np.array([[0.0, 0.0], [0.0, 1.0]])
    b = np.array([1.0, 0.0])
    sol = minimal_solution(M, b)
    assert sol.values.tolist() == [1.0, 0.0]
    assert sol.converged


def test_unbounded_states_flagged_and_spread():
    # state 0 loops on itself and feeds state 1 (left system)
    M = np.array([[1.0, 0.5], [0.0, 0.0]])
    b = np.array([1.0, 0.0])
    sol = minimal_solution(M, b, left=True)
    assert sol.unbounded.tolist() == [True, True]
    assert np.isinf(sol.values).all()


def test_history_is_monotone():
    rng = np.random.default_rng(3)
    M = _substochastic(rng, 8)
    b = rng.random(8)
    for dense_limit in (0, 100):
        sol = minimal_solution(M, b, keep_history=True, dense_limit=dense_limit)
        hist = sol.history
        assert len(hist) >= 2
        for a, c in zip(hist, hist[1:]):
            assert np.all(c >= a - 1e-15)


def test_sparse_and_dense_paths_agree():
    rng = np.random.default_rng(5)
    M = sp.csr_matrix(_substochastic(rng, 30, leak=0.5))
    b = rng.random(30)
    dense = minimal_solution(M, b, dense_limit=100)
    sparse = minimal_solution(M, b, dense_limit=0)
    np.testing.assert_allclose(dense.values, sparse.values, rtol=1e-10)


def test_rejects_negative_input():
    with pytest.raises(ValueError):
        minimal_solution(np.array([[-0.1]]), np.array([1.0]))
