import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import naive_coverage, naive_patches
from stmrestore.core import (as_mask, compose_patches, coverage_counts, extract_mask_patches,
                             extract_patches, patch_count, patch_origin)
from stmrestore.errors import InvalidArgumentError


@pytest.mark.parametrize("rows, cols, edge, expected", [
    (256, 256, 10, 61009),
    (10, 10, 10, 1),
])
def test_patch_count(rows, cols, edge, expected):
    assert patch_count(rows, cols, edge) == expected


def test_patch_count_matches_enumeration():
    corners = [(r, c) for r in range(12) for c in range(11) if r + 3 <= 12 and c + 3 <= 11]
    assert patch_count(12, 11, 3) == len(corners) == 90


@pytest.mark.parametrize("edge", [0, 11, 13])
def test_patch_count_rejects_bad_edge(edge):
    with pytest.raises(InvalidArgumentError):
        patch_count(10, 12, edge)


def test_extract_identity_window():
    P = extract_patches(np.array([[1.0, 2.0], [3.0, 4.0]]), 2)
    np.testing.assert_array_equal(P, [[1], [2], [3], [4]])


def test_extract_two_windows_share_middle_column():
    g = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    P = extract_patches(g, 2)
    np.testing.assert_array_equal(P, [[1, 2], [2, 3], [4, 5], [5, 6]])


def test_extract_constant_grid():
    P = extract_patches(np.full((7, 9), 2.5), 3)
    assert P.shape == (9, 35)
    assert np.all(P == 2.5)


def test_extract_order_matches_naive_enumeration():
    g = np.random.default_rng(0).normal(size=(9, 13))
    np.testing.assert_array_equal(extract_patches(g, 4), naive_patches(g, 4))
    assert patch_origin(13 - 4 + 2, 9, 13, 4) == (1, 1)


def test_extract_rejects_nonfinite():
    g = np.zeros((4, 4))
    g[1, 1] = np.nan
    with pytest.raises(InvalidArgumentError):
        extract_patches(g, 2)


def test_mask_patches():
    assert np.all(extract_mask_patches(np.ones((5, 5), dtype=bool), 3))
    assert not np.any(extract_mask_patches(np.zeros((5, 5), dtype=bool), 3))
    mk = np.ones((3, 3), dtype=bool)
    mk[1, 1] = False
    P = extract_mask_patches(mk, 2)
    assert P.shape == (4, 4)
    # the center pixel belongs to all four windows
    assert np.all((~P).sum(axis=0) == 1)


def test_mask_patches_corner_pixel():
    mk = np.ones((3, 3), dtype=int)
    mk[0, 0] = 0
    P = extract_mask_patches(mk, 2)
    assert list((~P).any(axis=0)) == [True, False, False, False]


def test_as_mask_rejects_non_binary():
    with pytest.raises(InvalidArgumentError):
        as_mask(np.array([[0, 2]]))


def test_compose_center_average():
    P = extract_patches(np.zeros((3, 3)), 2)
    # center pixel (1,1) is entry 3,2,1,0 of windows 0..3
    for i, (entry, value) in enumerate(zip([3, 2, 1, 0], [0.0, 4.0, 8.0, 12.0])):
        P[entry, i] = value
    out = compose_patches(P, 3, 3)
    assert out[1, 1] == 6.0
    assert np.count_nonzero(out) == 1


def test_compose_single_patch():
    P = np.arange(16, dtype=float)[:, None]
    np.testing.assert_array_equal(compose_patches(P, 4, 4), np.arange(16.0).reshape(4, 4))


def test_compose_count_mismatch():
    with pytest.raises(InvalidArgumentError):
        compose_patches(np.zeros((4, 3)), 3, 3)


def test_coverage_counts():
    np.testing.assert_array_equal(coverage_counts(10, 10, 10), np.ones((10, 10)))
    np.testing.assert_array_equal(coverage_counts(3, 3, 2), [[1, 2, 1], [2, 4, 2], [1, 2, 1]])
    cov = coverage_counts(100, 100, 10)
    assert cov[50, 50] == 100
    assert np.all(cov[9:91, 9:91] == 100)
    np.testing.assert_array_equal(cov, naive_coverage(100, 100, 10))


def test_coverage_equals_composed_ones():
    P = np.ones((9, patch_count(8, 11, 3)))
    assert np.all(compose_patches(P, 8, 11) == 1.0)


shapes = st.tuples(st.integers(1, 12), st.integers(1, 12))


@st.composite
def grid_and_edge(draw):
    rows, cols = draw(shapes)
    g = draw(arrays(np.float64, (rows, cols),
                    elements=st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)))
    edge = draw(st.integers(1, min(rows, cols)))
    return g, edge


@settings(max_examples=200, deadline=None)
@given(grid_and_edge())
def test_round_trip_is_bit_exact(case):
    g, edge = case
    out = compose_patches(extract_patches(g, edge), *g.shape)
    assert np.array_equal(out, g)


@settings(max_examples=100, deadline=None)
@given(grid_and_edge(), st.floats(-10, 10), st.floats(-10, 10))
def test_extract_is_linear(case, a, b):
    g1, edge = case
    g2 = np.flip(g1)
    lhs = extract_patches(a * g1 + b * g2, edge)
    rhs = a * extract_patches(g1, edge) + b * extract_patches(g2, edge)
    scale = max(1.0, np.abs(lhs).max())
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * scale)


@settings(max_examples=100, deadline=None)
@given(shapes, st.data())
def test_coverage_positive_and_selection(shape, data):
    rows, cols = shape
    edge = data.draw(st.integers(1, min(rows, cols)))
    assert coverage_counts(rows, cols, edge).min() >= 1
    # every patch entry is exactly one grid entry: use distinct pixel ids
    ids = np.arange(rows * cols, dtype=float).reshape(rows, cols)
    P = extract_patches(ids, edge)
    assert np.all(np.isin(P, ids))
    assert all(len(set(col)) == edge * edge for col in P.T)
