import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from casebandit.errors import InvalidArgumentError, NumericalDegeneracyError
from casebandit.linalg import (
    PDInverse,
    dense_design_inverse,
    design_init,
    mahalanobis,
    rank_one_update,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@pytest.mark.parametrize("d, lam, expected", [
    (2, 1.0, [[1, 0], [0, 1]]),
    (2, 0.1, [[10, 0], [0, 10]]),
    (1, 4.0, [[0.25]]),
])
def test_design_init(d, lam, expected):
    s = design_init(d, lam)
    np.testing.assert_array_equal(s.inv, expected)
    assert s.update_count == 0


@pytest.mark.parametrize("d, lam", [(0, 1.0), (-1, 1.0), (2, 0.0), (2, -1.0)])
def test_design_init_rejects(d, lam):
    with pytest.raises(InvalidArgumentError):
        design_init(d, lam)


def test_rank_one_update_2x2():
    s = rank_one_update(design_init(2, 1.0), [1.0, 0.0])
    # direct inverse of diag(2, 1)
    np.testing.assert_allclose(s.inv, [[0.5, 0], [0, 1]], atol=1e-15)
    assert s.update_count == 1


def test_zero_update_leaves_inverse():
    rng = np.random.default_rng(3)
    s = design_init(4, 0.5)
    for _ in range(5):
        s = rank_one_update(s, rng.normal(size=4))
    s2 = rank_one_update(s, np.zeros(4))
    np.testing.assert_array_equal(s2.inv, s.inv)


def test_dimension_mismatch():
    with pytest.raises(InvalidArgumentError):
        rank_one_update(design_init(3, 1.0), [1.0, 2.0])
    with pytest.raises(InvalidArgumentError):
        mahalanobis(design_init(3, 1.0), [1.0, 2.0])


def test_thousand_updates_match_dense_inverse():
    rng = np.random.default_rng(0)
    Z = rng.normal(size=(1000, 16))
    s = design_init(16, 0.1)
    for z in Z:
        s = rank_one_update(s, z)
    np.testing.assert_allclose(s.inv, dense_design_inverse(0.1, Z), atol=1e-6, rtol=0)


def test_inverse_times_design_is_identity_long_run():
    rng = np.random.default_rng(1)
    d, n = 64, 10_000
    Z = rng.normal(size=(n, d)) / np.sqrt(d)
    s = design_init(d, 1.0)
    for z in Z:
        s = rank_one_update(s, z)
    A = np.eye(d) + Z.T @ Z
    assert np.max(np.abs(s.inv @ A - np.eye(d))) <= 1e-6


def test_symmetric_and_positive_definite_after_updates():
    rng = np.random.default_rng(2)
    s = design_init(8, 0.1)
    for _ in range(300):
        s = rank_one_update(s, 5 * rng.normal(size=8))
        assert np.max(np.abs(s.inv - s.inv.T)) <= 1e-10
    np.linalg.cholesky(s.inv)


@pytest.mark.parametrize("inv, z, expected", [
    (np.eye(2), [3.0, 4.0], 5.0),
    (np.diag([0.25, 1.0]), [2.0, 0.0], 1.0),
    (np.diag([0.3, 7.0]), [0.0, 0.0], 0.0),
])
def test_mahalanobis_examples(inv, z, expected):
    s = PDInverse(2, np.asarray(inv, dtype=float), 1.0, 0)
    assert mahalanobis(s, z) == pytest.approx(expected, abs=1e-15)


def test_mahalanobis_detects_lost_definiteness():
    s = PDInverse(2, np.diag([1.0, -1.0]), 1.0, 0)
    with pytest.raises(NumericalDegeneracyError):
        mahalanobis(s, [0.0, 1.0])


def test_mahalanobis_clamps_tiny_negative():
    s = PDInverse(1, np.array([[-1e-14]]), 1.0, 0)
    assert mahalanobis(s, [1.0]) == 0.0


@settings(max_examples=50, deadline=None)
@given(z=arrays(np.float64, 5, elements=finite), c=finite)
def test_mahalanobis_homogeneous(z, c):
    rng = np.random.default_rng(0)
    s = design_init(5, 0.7)
    for _ in range(4):
        s = rank_one_update(s, rng.normal(size=5))
    base = mahalanobis(s, z)
    assert mahalanobis(s, c * z) == pytest.approx(abs(c) * base, rel=1e-10, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(z=arrays(np.float64, 4, elements=finite))
def test_mahalanobis_shrinks_in_updated_direction(z):
    s = design_init(4, 0.3)
    s2 = rank_one_update(s, z)
    assert mahalanobis(s2, z) <= mahalanobis(s, z) + 1e-12


def test_update_does_not_mutate_input():
    s = design_init(3, 1.0)
    before = s.inv.copy()
    rank_one_update(s, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(s.inv, before)
