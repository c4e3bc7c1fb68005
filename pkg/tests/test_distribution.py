import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from chainkit.distribution import SparseDistribution, as_state, total_variation


def test_as_state_normalizes():
    assert as_state(3) == (3,)
    assert as_state([1, -2]) == (1, -2)
    assert as_state((4,)) == (4,)


@pytest.mark.parametrize("bad", [True, 1.5, [0.5], "ab", ()])
def test_as_state_rejects(bad):
    with pytest.raises((TypeError, ValueError)):
        as_state(bad)


def test_zero_entries_pruned_and_mass():
    d = SparseDistribution({0: 0.25, 1: 0.0, 2: 0.75})
    assert len(d) == 2
    assert d.mass == 1.0
    assert (1,) not in d
    assert d.get(1) == 0.0


@pytest.mark.parametrize("bad", [{0: -0.1}, {0: math.nan}, {0: math.inf}, {0: 0.6, 1: 0.5}])
def test_invalid_masses_rejected(bad):
    with pytest.raises(ValueError):
        SparseDistribution(bad)


def test_occupation_measures_may_exceed_one():
    assert SparseDistribution({0: 3.0}, check_mass=False).mass == 3.0


def test_total_variation_of_lower_bound_is_mass_defect():
    exact = SparseDistribution({0: 0.5, 1: 0.5})
    approx = SparseDistribution({0: 0.4, 1: 0.5})
    assert total_variation(approx, exact) == pytest.approx(0.1, abs=1e-15)


masses = st.dictionaries(st.integers(0, 6), st.floats(0, 1), max_size=6)


@given(masses, masses)
def test_total_variation_is_half_l1_plus_half_defect(a, b):
    sa, sb = sum(a.values()), sum(b.values())
    if sa == 0 or sb == 0:
        return
    p = SparseDistribution({k: v / sa for k, v in a.items()})
    q = SparseDistribution({k: 0.5 * v / sb for k, v in b.items()})
    tv = total_variation(q, p)
    expected = 0.5 * p.l1_distance(q) + 0.5 * abs(p.mass - q.mass)
    assert tv == pytest.approx(expected, abs=1e-12)
