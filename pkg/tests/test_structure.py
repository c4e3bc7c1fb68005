import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chainkit.minimal import ConvergenceError
from chainkit.model import build_model, from_matrix
from chainkit.structure import Truncation, classify, hitting_probabilities, reachable_truncation

from conftest import random_stochastic


def test_alternating_chain_period_two():
    d = classify(from_matrix([[0, 1], [1, 0]]), Truncation.interval(0, 1))
    assert d.classes == [[(0,), (1,)]]
    assert d.certified_closed == [True]
    assert d.periods == [2]


def test_gambler_classes():
    K = 6
    g = build_model({"kind": "gambler", "params": {"a": 0.4, "K": K}})
    d = classify(g, Truncation.interval(0, K))
    assert d.classes == [[(0,)], [(x,) for x in range(1, K)], [(K,)]]
    assert d.certified_closed == [True, False, True]
    assert d.periods[0] == d.periods[2] == 1
    assert d.recurrence == ["recurrent", "unknown", "recurrent"]


def test_identity_singletons():
    d = classify(from_matrix(np.eye(5).tolist()), Truncation.interval(0, 4))
    assert len(d.classes) == 5
    assert all(d.certified_closed)
    assert d.periods == [1] * 5


def test_cycle_period():
    for k in (3, 4, 7):
        P = np.roll(np.eye(k), 1, axis=1)
        assert classify(from_matrix(P.tolist()), Truncation.interval(0, k - 1)).periods == [k]


def test_closedness_uses_full_rows():
    g = build_model({"kind": "gambler", "params": {"a": 0.5, "K": 10}})
    d = classify(g, Truncation.interval(3, 5))
    assert d.certified_closed == [False]
    assert d.boundary == [(3,), (5,)]


@given(st.integers(2, 9), st.integers(0, 10**6))
def test_classify_invariants(n, seed):
    rng = np.random.default_rng(seed)
    P = random_stochastic(rng, n, density=0.3)
    m = from_matrix(P.tolist())
    states = list(range(n))
    d = classify(m, Truncation.interval(0, n - 1))
    flat = sorted(s for c in d.classes for s in c)
    assert flat == [(i,) for i in states]
    for c, closed in zip(d.classes, d.certified_closed):
        if closed:
            members = set(c)
            assert all(y in members for x in c for y, _ in m.row(x))
    rng.shuffle(states)
    d2 = classify(m, Truncation(states))
    assert sorted(map(sorted, d2.classes)) == sorted(map(sorted, d.classes))


def test_miller_hitting_probabilities():
    jump = build_model({"kind": "miller"})
    # states beyond the truncation count as misses: with {0, 1} this is P_1(sigma_0 < sigma_2)
    h = hitting_probabilities(jump, [0], Truncation.interval(0, 1))
    assert h[(1,)] == pytest.approx(1 / 3, abs=1e-12)
    for k in (3, 5, 10):
        h = hitting_probabilities(jump, [0], Truncation.interval(0, k - 1))
        assert h[(1,)] == pytest.approx(1 - 1 / (2 - 2.0 ** -(k - 1)), abs=1e-12)


def test_start_in_target_is_one():
    g = build_model({"kind": "gambler", "params": {"a": 0.5, "K": 4}})
    h = hitting_probabilities(g, [2], Truncation.interval(0, 4))
    assert h[(2,)] == 1.0


def test_gambler_hitting_is_linear():
    K = 20
    g = build_model({"kind": "gambler", "params": {"a": 0.5, "K": K}})
    h = hitting_probabilities(g, [K], Truncation.interval(0, K))
    for x in range(K + 1):
        assert h[(x,)] == pytest.approx(x / K, abs=1e-9)


def test_hitting_history_monotone_and_truncation_monotone():
    g = build_model({"kind": "gambler", "params": {"a": 0.45, "K": 30}})
    small, hist = hitting_probabilities(g, [15], Truncation.interval(10, 20), keep_history=True)
    for a, b in zip(hist, hist[1:]):
        assert np.all(b >= a - 1e-15)
    big = hitting_probabilities(g, [15], Truncation.interval(5, 25))
    assert all(big[s] >= small[s] - 1e-15 for s in small)


def test_hitting_nonconvergence_raises():
    # large enough for plain sparse sweeps, whose budget is max_iter
    g = build_model({"kind": "gambler", "params": {"a": 0.5, "K": 3000}})
    with pytest.raises(ConvergenceError):
        hitting_probabilities(g, [3000], Truncation.interval(0, 3000), max_iter=5)


def test_reachable_truncation():
    g = build_model({"kind": "gambler", "params": {"a": 0.5, "K": 100}, "gamma": [[50, 1.0]]})
    tr = reachable_truncation(g, 10)
    assert sorted(tr.states) == [(x,) for x in range(40, 61)]
