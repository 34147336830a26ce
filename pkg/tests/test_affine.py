import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from linswap.affine import AffineMap, flat_dim, outer_flat
from linswap.errors import DimensionMismatch

finite = st.floats(-10, 10, allow_nan=False)


@st.composite
def maps(draw, d=None):
    d = draw(st.integers(1, 4)) if d is None else d
    M = draw(arrays(float, (d, d), elements=finite))
    b = draw(arrays(float, (d,), elements=finite))
    return AffineMap(M, b)


def test_apply_examples():
    assert np.allclose(AffineMap.identity(2)([0.3, 0.7]), [0.3, 0.7])
    assert np.allclose(AffineMap.constant([1.0, 0.0])([0.4, -2.0]), [1.0, 0.0])
    swap = AffineMap(np.array([[0.0, 1.0], [1.0, 0.0]]), np.zeros(2))
    assert np.allclose(swap([0.2, 0.8]), [0.8, 0.2])


def test_flat_layout_is_column_major_then_offset():
    phi = AffineMap(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([5.0, 6.0]))
    assert phi.flat().tolist() == [1.0, 3.0, 2.0, 4.0, 5.0, 6.0]
    assert flat_dim(2) == 6
    assert AffineMap.dim_from_flat(12) == 3


def test_dimension_errors():
    with pytest.raises(DimensionMismatch):
        AffineMap(np.eye(2), np.zeros(3))
    with pytest.raises(DimensionMismatch):
        AffineMap.from_flat(np.zeros(5), 2)
    with pytest.raises(DimensionMismatch):
        AffineMap.identity(2)(np.zeros(3))


@given(maps(), st.data())
def test_flat_round_trip_and_norm(phi, data):
    back = AffineMap.from_flat(phi.flat(), phi.dim)
    assert np.array_equal(back.M, phi.M) and np.array_equal(back.b, phi.b)
    expected = np.sum(phi.M ** 2) + np.sum(phi.b ** 2)
    assert abs(phi.frob_norm() ** 2 - expected) <= 1e-12 * max(1.0, expected)


@given(maps(), st.data())
def test_outer_flat_pairs_with_apply(phi, data):
    d = phi.dim
    c = data.draw(arrays(float, (d,), elements=finite))
    x = data.draw(arrays(float, (d,), elements=finite))
    lhs = float(outer_flat(c, x) @ phi.flat())
    rhs = float(c @ phi(x))
    assert abs(lhs - rhs) <= 1e-9 * (1.0 + np.abs(c).sum() * (np.abs(phi.M).sum() + 1) * (np.abs(x).sum() + 1)
                                     + np.abs(phi.b).sum() * np.abs(c).sum())


@given(st.data())
def test_compose_and_inverse(data):
    d = data.draw(st.integers(1, 4))
    f, g = data.draw(maps(d)), data.draw(maps(d))
    x = data.draw(arrays(float, (d,), elements=st.floats(-1, 1)))
    assert np.allclose(f.compose(g)(x), f(g(x)), atol=1e-8 * (1 + np.abs(f.M).sum()) * (1 + np.abs(g(x)).sum()))
    M = np.eye(d) * 2.0 + np.triu(np.ones((d, d)), 1)
    h = AffineMap(M, np.arange(d, dtype=float))
    assert np.allclose(h.inverse()(h(x)), x, atol=1e-10)


def test_dict_round_trip():
    phi = AffineMap(np.array([[0.1, -2.0], [1e-17, 3.0]]), np.array([np.pi, -1.0]))
    back = AffineMap.from_dict(phi.to_dict())
    assert np.array_equal(back.flat(), phi.flat())
