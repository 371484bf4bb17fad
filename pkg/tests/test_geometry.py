import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dsvio.geometry import (Box, DimensionError, NonnegativeOrthant, ScaledSymmetricBox, WholeSpace,
                            contains, distance, project)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_examples():
    np.testing.assert_array_equal(project(Box([0], [2]), [2.5]), [2.0])
    np.testing.assert_array_equal(project(NonnegativeOrthant(2), [-1, 3]), [0, 3])
    np.testing.assert_array_equal(project(ScaledSymmetricBox(1.5, 2), [1, -2]), [1, -1.5])
    assert contains(Box([0], [2]), [1.0], 0)
    assert contains(NonnegativeOrthant(1), [-1e-12], 1e-10)
    assert not contains(ScaledSymmetricBox(1, 1), [1.1], 0)


def test_whole_space_is_identity():
    z = np.array([-3.0, 1e300])
    p = project(WholeSpace(2), z)
    np.testing.assert_array_equal(p, z)
    assert p is not z


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        project(Box([0, 0], [1, 1]), [1.0, 2.0, 3.0])
    with pytest.raises(DimensionError):
        contains(NonnegativeOrthant(2), 1.0)


def test_invalid_sets():
    with pytest.raises(ValueError):
        Box([1.0], [0.0])
    with pytest.raises(ValueError):
        ScaledSymmetricBox(-1.0, 2)
    with pytest.raises(ValueError):
        contains(Box([0], [1]), [0.5], -1.0)


def test_batched_bounds():
    r = np.array([1.0, 2.0])
    s = ScaledSymmetricBox(r, 3)
    z = np.full((2, 3), 5.0)
    np.testing.assert_array_equal(project(s, z), [[1, 1, 1], [2, 2, 2]])
    np.testing.assert_array_equal(contains(s, z * 0), [True, True])
    np.testing.assert_allclose(distance(s, z), [4 * np.sqrt(3), 3 * np.sqrt(3)])


@st.composite
def sets_and_dim(draw):
    d = draw(st.integers(1, 6))
    kind = draw(st.sampled_from(["whole", "orthant", "box", "sym"]))
    if kind == "whole":
        return WholeSpace(d)
    if kind == "orthant":
        return NonnegativeOrthant(d)
    if kind == "sym":
        return ScaledSymmetricBox(draw(st.floats(0, 1e3)), d)
    a = draw(arrays(float, d, elements=finite))
    w = draw(arrays(float, d, elements=st.floats(0, 1e3)))
    return Box(a, a + w)


def _point(draw, s):
    return draw(arrays(float, s.dim, elements=finite))


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_idempotent_and_fixed_point(data):
    s = data.draw(sets_and_dim())
    z = _point(data.draw, s)
    p = project(s, z)
    assert contains(s, p, 0.0)
    np.testing.assert_array_equal(project(s, p), p)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_nonexpansive(data):
    s = data.draw(sets_and_dim())
    a, b = _point(data.draw, s), _point(data.draw, s)
    assert np.linalg.norm(project(s, a) - project(s, b)) <= np.linalg.norm(a - b) * (1 + 1e-15)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_variational_inequality(data):
    s = data.draw(sets_and_dim())
    z = _point(data.draw, s)
    w = project(s, _point(data.draw, s))
    p = project(s, z)
    assert np.dot(z - p, w - p) <= 1e-10


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_distance_matches_contains(data):
    s = data.draw(sets_and_dim())
    z = _point(data.draw, s)
    tol = data.draw(st.floats(0, 10))
    assert contains(s, z, tol) == (distance(s, z) <= tol)
