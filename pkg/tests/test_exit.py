import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chainkit.distribution import SparseDistribution
from chainkit.exit import Domain, exit_density_ct, exit_joint_dt, exit_marginals_minimal, gambler_oracle, load_domain
from chainkit.model import CONTINUOUS, ModelError, build_model, explicit_model, from_matrix
from chainkit.simulate import sample_ensemble
from chainkit.structure import Truncation

from conftest import random_stochastic

SELECTION = from_matrix([[1, 0, 0], [1, 0, 0], [0, 0, 1]], gamma={1: 1.0})
SEL_DOMAIN = Domain.from_states([1, 2])
SEL_TRUNC = Truncation.interval(0, 2)
TWO_STATE = build_model({"kind": "two-state", "params": {"a": 1, "b": 1}})


def gambler(a, K, x):
    return build_model({"kind": "gambler", "params": {"a": a, "K": K}, "gamma": [[x, 1.0]]})


def interior(K):
    return Domain.box(1, K - 1)


def test_joint_selection_example():
    s = exit_joint_dt(SELECTION, SEL_DOMAIN, 10, SEL_TRUNC)
    assert dict(s.mu_space) == {(0,): 1.0}
    assert dict(s.nu_space) == {(1,): 1.0}
    assert s.mean_exit_time == 1.0


def test_joint_initial_outside_domain():
    m = SELECTION.with_gamma({0: 1.0})
    s = exit_joint_dt(m, SEL_DOMAIN, 5, SEL_TRUNC)
    assert s.mu[0].tolist() == [1.0, 0.0, 0.0]
    assert not s.nu.any()


def test_joint_gambler_success():
    s = exit_joint_dt(gambler("1/2", 6, 3), interior(6), 200, Truncation.interval(0, 6))
    assert s.mu_space[(6,)] == pytest.approx(0.5, abs=1e-9)
    assert s.error_bound < 1e-9


def test_minimal_selection_example():
    s = exit_marginals_minimal(SELECTION, SEL_DOMAIN, trunc=SEL_TRUNC)
    assert s.nu_space.get(1) == 1.0
    assert s.nu_space.get(2) == 0.0
    assert dict(s.mu_space) == {(0,): 1.0}
    # direct solve is not unique: 1_1 + alpha 1_2 also solves the equations
    P = np.array([[1, 0, 0], [1, 0, 0], [0, 0, 1]], dtype=float)
    for alpha in (0.5, 1.0, 10.0):
        rho = np.array([0.0, 1.0, alpha])
        D = [1, 2]
        rhs = np.array([0.0, 1.0, 0.0]) + rho[D] @ P[np.ix_(D, [0, 1, 2])]
        assert np.allclose(rho[D], rhs[D])
        assert all(s.nu_space.get(x) <= rho[x] for x in D)


def test_minimal_two_state_ct():
    s = exit_marginals_minimal(TWO_STATE, Domain.from_states([0]), trunc=Truncation.interval(0, 1))
    assert dict(s.nu_space) == {(0,): 1.0}
    assert dict(s.mu_space) == {(1,): 1.0}


def test_minimal_biased_gambler():
    s = exit_marginals_minimal(gambler("1/3", 4, 1), interior(4), trunc=Truncation.interval(0, 4))
    assert s.mu_space[(4,)] == pytest.approx((1 - 2) / (1 - 2**4), abs=1e-12)


@pytest.mark.parametrize("a", [0.3, 0.5, 0.7])
@pytest.mark.parametrize("K", [4, 10, 50])
def test_oracle_grid(a, K):
    x = K // 2
    s = exit_marginals_minimal(gambler(a, K, x), interior(K), trunc=Truncation.interval(0, K))
    succ, ruin = gambler_oracle(a, K, x)
    assert s.mu_space[(K,)] == pytest.approx(succ, abs=1e-9)
    assert s.mu_space[(0,)] == pytest.approx(ruin, abs=1e-9)


def test_oracle_values():
    assert gambler_oracle(0.5, 1000, 10)[0] == pytest.approx(0.01, abs=1e-15)
    assert gambler_oracle(0.5, 100, 50)[0] == 0.5
    assert gambler_oracle(1 / 3, 2, 1)[0] == pytest.approx(1 / 3, abs=1e-15)
    # stable for large K with alpha > 1
    succ, _ = gambler_oracle(0.3, 2000, 1999)
    assert 0 < succ < 1
    with pytest.raises(ValueError):
        gambler_oracle(0.5, 10, 0)
    with pytest.raises(ValueError):
        gambler_oracle(1.0, 10, 5)


def test_infinite_mean_exit_flagged():
    # state 2 is absorbing inside the domain
    m = from_matrix([[1, 0, 0], [0.5, 0, 0.5], [0, 0, 1]], gamma={1: 1.0})
    s = exit_marginals_minimal(m, SEL_DOMAIN, trunc=SEL_TRUNC)
    assert not s.converged
    assert s.reason == "unbounded"
    assert s.unbounded == [(2,)]
    assert math.isinf(s.mean_exit_time)
    assert s.mu_space[(0,)] == 0.5


def test_assumed_finite_exit_flag():
    s = exit_marginals_minimal(SELECTION, SEL_DOMAIN, trunc=SEL_TRUNC, assume_finite_exit=True)
    assert s.assumed_finite_exit and s.error_bound == 0.0
    s = exit_marginals_minimal(SELECTION, SEL_DOMAIN, trunc=SEL_TRUNC)
    assert not s.assumed_finite_exit and s.error_bound is None


@given(st.integers(3, 10), st.integers(0, 10**6))
def test_support_and_balance(n, seed):
    rng = np.random.default_rng(seed)
    P = random_stochastic(rng, n)
    g = rng.random(n)
    g /= g.sum()
    m = from_matrix(P.tolist(), gamma={i: g[i] for i in range(n)})
    dom_states = sorted(rng.choice(n, size=n // 2 + 1, replace=False).tolist())
    dom = Domain.from_states(dom_states)
    tr = Truncation.interval(0, n - 1)
    s = exit_marginals_minimal(m, dom, trunc=tr, tol=1e-13)
    if not s.converged:
        return
    assert all(x not in dom for x in s.mu_space)
    assert all(x in dom for x in s.nu_space)
    nu = np.array([s.nu_space.get(i) for i in range(n)])
    mu = np.array([s.mu_space.get(i) for i in range(n)])
    resid = mu + nu - g - nu @ P
    assert np.abs(resid).max() <= 10 * 1e-13 * max(1.0, nu.sum())


def test_joint_agrees_with_minimal():
    m = gambler(0.45, 12, 6)
    tr = Truncation.interval(0, 12)
    joint = exit_joint_dt(m, interior(12), 3000, tr)
    marg = exit_marginals_minimal(m, interior(12), trunc=tr)
    assert joint.mu_space.l1_distance(marg.mu_space) < 1e-9
    assert joint.nu_space.l1_distance(marg.nu_space) < 1e-7


def test_etfsp_monotone_in_truncation_and_horizon():
    m = gambler("1/2", 30, 15)
    dom = interior(30)
    small = exit_joint_dt(m, dom, 100, Truncation.interval(5, 25))
    big = exit_joint_dt(m, dom, 100, Truncation.interval(0, 30))
    longer = exit_joint_dt(m, dom, 200, Truncation.interval(0, 30))

    def embed(stats, table):
        full = np.zeros((table.shape[0], 31))
        for j, x in enumerate(stats.truncation):
            full[:, x[0]] = table[:, j]
        return full

    assert np.all(embed(small, small.mu) <= embed(big, big.mu) + 1e-15)
    assert np.all(embed(small, small.nu) <= embed(big, big.nu) + 1e-15)
    assert np.all(big.nu <= longer.nu[:101] + 1e-15)
    assert np.any(embed(small, small.nu) < embed(big, big.nu) - 1e-6)
    assert small.error_bound >= big.error_bound >= longer.error_bound


def test_density_two_state():
    s = exit_density_ct(TWO_STATE, Domain.from_states([0]), 4.0, Truncation.interval(0, 1), bins=40)
    edges = s.times
    exact = (np.exp(-edges[:-1]) - np.exp(-edges[1:])) / np.diff(edges)
    np.testing.assert_allclose(s.exit_time_density(), exact, atol=1e-10)
    assert s.exit_probability == pytest.approx(1 - math.exp(-4), abs=1e-10)


def test_density_atom_for_initial_mass_outside():
    m = TWO_STATE.with_gamma({1: 1.0})
    s = exit_density_ct(m, Domain.from_states([0]), 1.0, Truncation.interval(0, 1), bins=5)
    assert s.mu_atom.tolist() == [0.0, 1.0]
    assert not s.mu.any()
    assert s.exit_probability == 1.0


def test_density_pure_death_matches_simulation():
    m = build_model({"kind": "birth-death", "params": {"birth": {"poly": [0]}, "death": {"poly": [0, 1]}},
                     "gamma": [[3, 1.0]]})
    dom = Domain.from_states([1, 2, 3])
    t = 1.0
    s = exit_density_ct(m, dom, t, Truncation.interval(0, 3), bins=10)
    n = 20_000
    paths = sample_ensemble(m, n, seed=21, t_max=t, max_jumps=10)
    hits = sum(p.states[-1] == (0,) for p in paths) / n
    se = math.sqrt(hits * (1 - hits) / n)
    assert abs(s.exit_probability - hits) <= 3 * se
    # closed form: P(all three unit exponentials below t)
    assert s.exit_probability == pytest.approx((1 - math.exp(-t)) ** 3, abs=1e-10)


def test_load_domain(tmp_path):
    f = tmp_path / "d.json"
    f.write_text('{"states": [[1], [2]]}')
    d = load_domain(f)
    assert 1 in d and 3 not in d
    f.write_text('{"box": [[0], [4]]}')
    assert 4 in load_domain(f)
    f.write_text('{"complement": [[0]]}')
    d = load_domain(f)
    assert 0 not in d and 7 in d
    f.write_text('{"nope": 1}')
    with pytest.raises(ModelError):
        load_domain(f)
