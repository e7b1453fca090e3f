from fractions import Fraction
from itertools import product

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import WORKED, random_distributions
from mlconf.labelsets import (
    MAX_LABELS,
    LabelsetDistribution,
    as_labelset,
    batch_marginals,
    index_to_labelset,
    joint_from_marginals,
    labelset_matrix,
    labelset_to_index,
    make_distribution,
    marginals,
    mode,
    point_mass,
    uniform,
)


@pytest.mark.parametrize(
    "y, k",
    [((0, 0, 0), 0), ((0, 0, 1), 1), ((1, 1, 0), 6), ((1, 0, 1), 5), ((1,), 1)],
)
def test_labelset_to_index(y, k):
    assert labelset_to_index(y) == k


@pytest.mark.parametrize("k, L, y", [(0, 3, (0, 0, 0)), (1, 3, (0, 0, 1)), (7, 3, (1, 1, 1))])
def test_index_to_labelset(k, L, y):
    assert index_to_labelset(k, L) == y


@pytest.mark.parametrize("k, L", [(8, 3), (-1, 3), (4, 2)])
def test_index_out_of_range(k, L):
    with pytest.raises(ValueError):
        index_to_labelset(k, L)


def test_label_cap():
    with pytest.raises(ValueError):
        as_labelset([0] * (MAX_LABELS + 1))
    with pytest.raises(ValueError):
        uniform(MAX_LABELS + 1)
    assert len(as_labelset([1] * MAX_LABELS)) == MAX_LABELS


def test_non_binary_labelset_rejected():
    with pytest.raises(ValueError):
        as_labelset([0, 2, 1])


@given(st.lists(st.integers(0, 1), min_size=1, max_size=10))
def test_index_round_trip(bits):
    y = tuple(bits)
    assert index_to_labelset(labelset_to_index(y), len(y)) == y


def test_labelset_matrix_rows_follow_index_order():
    M = labelset_matrix(3)
    assert [tuple(r) for r in M] == list(product((0, 1), repeat=3))


def test_make_distribution_uniform():
    d = make_distribution(np.full(8, 0.125), 3)
    assert np.all(d.probs == 0.125)


def test_make_distribution_worked_example_vector():
    d = make_distribution(WORKED, 3)
    assert d.L == 3
    assert d.probs.sum() == pytest.approx(1.0, abs=1e-15)


def test_make_distribution_errors():
    with pytest.raises(ValueError):
        make_distribution(np.full(7, 1 / 7), 3)
    with pytest.raises(ValueError):
        make_distribution([0.6, 0.5, -0.1, 0.0], 2)
    with pytest.raises(ValueError):
        make_distribution([0.5, 0.5, 0.1, 0.0], 2)


def test_make_distribution_clamps_and_renormalises():
    d = make_distribution([0.5 + 5e-10, 0.5, -1e-13, 0.0], 2)
    assert d.probs[2] == 0.0
    assert d.probs.sum() == pytest.approx(1.0, abs=1e-15)


def test_distribution_is_read_only():
    d = uniform(2)
    with pytest.raises(ValueError):
        d.probs[0] = 1.0


def test_uniform_and_point_mass():
    assert np.array_equal(uniform(1).probs, [0.5, 0.5])
    pm = point_mass([1, 0, 1])
    assert pm.probs[5] == 1.0 and pm.probs.sum() == 1.0


def test_marginals_worked_example():
    m = marginals(make_distribution(WORKED, 3))
    assert np.round(m, 2).tolist() == [0.42, 0.42, 0.33]
    assert m.tolist() == pytest.approx([5 / 12, 5 / 12, 1 / 3], abs=1e-15)


def test_marginals_trivial_cases():
    assert marginals(point_mass([1, 0, 1])).tolist() == [1.0, 0.0, 1.0]
    assert np.all(marginals(uniform(4)) == 0.5)


def test_mode():
    assert mode(make_distribution(WORKED, 3)) == (0, 0, 1)
    assert mode(point_mass([0, 1, 1])) == (0, 1, 1)
    assert mode(uniform(3)) == (0, 0, 0)


def test_joint_from_marginals_examples():
    assert joint_from_marginals(np.array([1.0, 0.0])) == point_mass([1, 0])
    assert np.allclose(joint_from_marginals(np.array([0.5, 0.5])).probs, uniform(2).probs)
    # exact product oracle: (1 - 0.417)(1 - 0.417)(1 - 0.333)
    expected = float((1 - Fraction("0.417")) ** 2 * (1 - Fraction("0.333")))
    got = joint_from_marginals(np.array([0.417, 0.417, 0.333])).probs[0]
    assert got == pytest.approx(expected, abs=1e-15)
    assert got == pytest.approx(0.2266, abs=2e-4)


def test_random_distribution_invariants():
    rng = np.random.default_rng(1)
    for L in range(1, 7):
        P = random_distributions(rng, 1000, L, sparsity=0.3)
        M = batch_marginals(P)
        assert np.all((M >= 0) & (M <= 1 + 1e-15))
        for p in P[:50]:
            d = make_distribution(p, L)
            assert abs(d.probs.sum() - 1) <= 1e-9


@given(st.lists(st.floats(0, 1), min_size=1, max_size=8))
def test_marginal_round_trip(m):
    m = np.array(m)
    assert np.allclose(marginals(joint_from_marginals(m)), m, atol=1e-12)


@pytest.mark.parametrize("L", range(1, 7))
def test_mode_of_point_mass(L):
    for k in range(1 << L):
        y = index_to_labelset(k, L)
        assert mode(point_mass(y)) == y


def test_json_round_trip():
    d = make_distribution(WORKED, 3)
    text = d.to_json()
    assert LabelsetDistribution.from_json(text) == d
    assert '"L": 3' in text
    with pytest.raises(ValueError):
        LabelsetDistribution.from_json('{"probs": [1]}')
