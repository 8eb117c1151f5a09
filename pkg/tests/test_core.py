import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from oracles import (
    central_difference,
    simplex_projection_active_set,
    simplex_projection_pgd,
)

from tro_opt.core import (
    SIMPLEX_TOL,
    check_simplex,
    is_simplex,
    prior_distance,
    project_to_simplex,
    softmax,
)
from tro_opt.errors import InvalidInputError

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_projection_fixed_points():
    np.testing.assert_allclose(project_to_simplex([0.2, 0.3, 0.5]), [0.2, 0.3, 0.5], atol=1e-15)
    np.testing.assert_array_equal(project_to_simplex([2.0, 0.0, 0.0]), [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(project_to_simplex([7.0]), [1.0])


@pytest.mark.parametrize("bad", [[], [np.nan, 1.0], [np.inf], [[1.0, 2.0]]])
def test_projection_rejects(bad):
    with pytest.raises(InvalidInputError):
        project_to_simplex(bad)


def test_projection_matches_active_set_oracle():
    rng = np.random.default_rng(1)
    for _ in range(100):
        v = rng.uniform(-2, 2, size=5)
        np.testing.assert_allclose(project_to_simplex(v), simplex_projection_active_set(v), atol=1e-6)


def test_projection_matches_projected_gradient_oracle():
    rng = np.random.default_rng(2)
    for _ in range(3):
        v = rng.uniform(-2, 2, size=5)
        ref = simplex_projection_pgd(v, steps=5_000, lr=5e-3)
        np.testing.assert_allclose(project_to_simplex(v), ref, atol=1e-6)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=finite))
def test_projection_lands_on_simplex_and_is_idempotent(v):
    x = project_to_simplex(v)
    assert is_simplex(x)
    np.testing.assert_allclose(project_to_simplex(x), x, atol=1e-12)


def test_projection_is_nearest_simplex_point():
    rng = np.random.default_rng(3)
    v = rng.normal(size=6) * 2
    x = project_to_simplex(v)
    others = rng.dirichlet(np.ones(6), size=1000)
    assert np.all(np.linalg.norm(x - v) <= np.linalg.norm(others - v, axis=1) + 1e-9)


def test_softmax_examples():
    np.testing.assert_allclose(softmax([5.0, 5.0, 5.0]), [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(softmax([0.0, np.log(2.0)]), [1 / 3, 2 / 3], atol=1e-15)
    with pytest.raises(InvalidInputError):
        softmax([])
    with pytest.raises(InvalidInputError):
        softmax([1.0], temperature=0)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 10), elements=st.floats(-300, 300)), st.floats(-1e3, 1e3))
def test_softmax_shift_invariant_and_positive(v, c):
    p = softmax(v)
    assert is_simplex(p) and np.all(p > 0)
    np.testing.assert_allclose(softmax(v + c), p, atol=1e-12)


def test_softmax_no_overflow():
    p = softmax([1e4, 0.0, -1e4])
    assert np.all(np.isfinite(p)) and p[0] == pytest.approx(1.0)


def test_prior_distance_examples():
    v, g = prior_distance([0.3, 0.7], [0.3, 0.7])
    assert v == 0.0 and np.all(g == 0)
    v, g = prior_distance([1.0, 0.0], [0.0, 1.0])
    assert v == 1.0
    np.testing.assert_array_equal(g, [1.0, -1.0])
    with pytest.raises(InvalidInputError):
        prior_distance([1.0], [0.5, 0.5])


def test_prior_distance_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    for _ in range(20):
        q, p = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
        _, g = prior_distance(q, p)
        fd = central_difference(lambda z: prior_distance(z, p)[0], q)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)


def test_prior_distance_unsquared_variant():
    v, g = prior_distance([1.0, 0.0], [0.0, 1.0], squared=False)
    assert v == pytest.approx(np.sqrt(2))
    np.testing.assert_allclose(g, [1 / np.sqrt(2), -1 / np.sqrt(2)])


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 6).flatmap(lambda m: st.tuples(
    arrays(np.float64, m, elements=st.floats(0, 1)), arrays(np.float64, m, elements=st.floats(0, 1)))))
def test_prior_distance_nonnegative(qp):
    q, p = qp
    v, _ = prior_distance(q, p)
    assert v >= 0
    assert prior_distance(q, q)[0] == 0.0
    if np.max(np.abs(q - p)) > 1e-6:
        assert v > 1e-12


def test_check_simplex():
    check_simplex([0.5, 0.5])
    with pytest.raises(InvalidInputError):
        check_simplex([0.5, 0.6])
    with pytest.raises(InvalidInputError):
        check_simplex([1.5, -0.5])
    assert is_simplex([1.0 - SIMPLEX_TOL / 2, 0.0])
