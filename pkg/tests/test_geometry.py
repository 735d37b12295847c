import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voxinv.geometry import (
    Grid,
    Parallelepiped,
    UnsupportedRegionError,
    locate,
    locate_many,
    refine,
    voxel_center,
)


def unit_grid(n, a=0.0, b=1.0):
    return Grid(Parallelepiped((a,) * 3, (b,) * 3), (n, n, n))


def test_box_rejects_degenerate_edges():
    with pytest.raises(ValueError):
        Parallelepiped((0, 0, 0), (1, 0, 1))


def test_grid_rejects_nonpositive_counts():
    with pytest.raises(ValueError):
        Grid(Parallelepiped((0, 0, 0), (1, 1, 1)), (2, 0, 2))


@pytest.mark.parametrize(
    "grid, idx, expected",
    [
        (Grid.cube(0.15, 3), (0, 0, 0), (0.025, 0.025, 0.025)),
        (unit_grid(1), (0, 0, 0), (0.5, 0.5, 0.5)),
        (unit_grid(2, -1.0, 1.0), (1, 1, 1), (0.5, 0.5, 0.5)),
    ],
)
def test_voxel_center_examples(grid, idx, expected):
    np.testing.assert_allclose(voxel_center(grid, idx), expected, rtol=0, atol=1e-15)


def test_voxel_center_out_of_range():
    with pytest.raises(IndexError):
        voxel_center(unit_grid(2), (2, 0, 0))
    with pytest.raises(IndexError):
        voxel_center(unit_grid(2), 8)


def test_row_major_linear_index():
    g = Grid(Parallelepiped((0, 0, 0), (1, 1, 1)), (2, 3, 4))
    assert g.index((1, 2, 3)).linear == 1 * 12 + 2 * 4 + 3
    assert g.index(23).i == (1, 2, 3)
    np.testing.assert_array_equal(g.multi_indices()[5], (0, 1, 1))


@pytest.mark.parametrize(
    "x, expected",
    [((0.25, 0.25, 0.25), (0, 0, 0)), ((2.0, 0.0, 0.0), None), ((1.0, 1.0, 1.0), (1, 1, 1))],
)
def test_locate_examples(x, expected):
    got = locate(unit_grid(2), x)
    assert (got.i if got is not None else None) == expected


def test_locate_half_open_interior_faces():
    g = unit_grid(2)
    assert locate(g, (0.5, 0.0, 0.0)).i == (1, 0, 0)
    assert locate(g, (0.0, 0.0, 0.0)).i == (0, 0, 0)
    np.testing.assert_array_equal(locate_many(g, [[0.5, 0, 0], [3, 0, 0]]), [4, -1])


@pytest.mark.parametrize("n", [1, 2, 7, 20])
def test_tiling_volume(n):
    g = Grid(Parallelepiped((-0.3, 0.1, 2.0), (0.45, 0.2, 2.9)), (n, n + 1, n))
    assert abs(g.size * g.voxel_volume - g.box.volume) <= 1e-14 * g.box.volume
    lo, hi = g.bounds()
    assert np.all(lo >= g.box.a - 1e-15) and np.all(hi <= g.box.b + 1e-15)


def test_refine_examples():
    g = unit_grid(2)
    full = refine(g, [(i, j, k) for i in range(2) for j in range(2) for k in range(2)], 2)
    assert full.n == (4, 4, 4) and full.box == g.box
    one = refine(g, [(0, 0, 0)], 3)
    assert one.n == (3, 3, 3)
    np.testing.assert_allclose(one.box.b, (0.5, 0.5, 0.5), rtol=0, atol=0)
    same = refine(g, [(i, j, k) for i in range(2) for j in range(2) for k in range(2)], 1)
    assert same == g


def test_refine_rejects_non_box_regions():
    g = unit_grid(2)
    with pytest.raises(UnsupportedRegionError):
        refine(g, [(0, 0, 0), (1, 1, 1)], 2)
    with pytest.raises(UnsupportedRegionError):
        refine(g, [], 2)
    with pytest.raises(ValueError):
        refine(g, [(0, 0, 0)], 0)


shape = st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6))


@settings(max_examples=40, deadline=None)
@given(shape, st.floats(-5, 5), st.floats(0.01, 3))
def test_locate_inverts_voxel_center(n, a, edge):
    g = Grid(Parallelepiped((a, a - 1, a + 2), (a + edge, a - 1 + 2 * edge, a + 2 + edge)), n)
    for lin in range(g.size):
        assert locate(g, voxel_center(g, lin)).linear == lin
    np.testing.assert_array_equal(locate_many(g, g.centers()), np.arange(g.size))


@settings(max_examples=40, deadline=None)
@given(shape, st.data(), st.integers(1, 4))
def test_refine_preserves_region_faces(n, data, factor):
    g = Grid(Parallelepiped((0.0, -0.2, 0.3), (0.15, 0.1, 0.4)), n)
    lo = [data.draw(st.integers(0, k - 1)) for k in n]
    hi = [data.draw(st.integers(l, k - 1)) for l, k in zip(lo, n)]
    region = [(i, j, k) for i in range(lo[0], hi[0] + 1) for j in range(lo[1], hi[1] + 1)
              for k in range(lo[2], hi[2] + 1)]
    r = refine(g, region, factor)
    first, last = g.voxel_box(tuple(lo)), g.voxel_box(tuple(hi))
    np.testing.assert_array_equal(r.box.a, first.a)
    np.testing.assert_array_equal(r.box.b, last.b)
    assert r.n == tuple((h - l + 1) * factor for l, h in zip(lo, hi))
