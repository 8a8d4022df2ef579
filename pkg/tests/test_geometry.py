import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fsisplit.geometry import (CurveMesh, GeometryError, build_ellipse_curve,
                               build_structured_mesh, intersect_segment, locate_point,
                               locate_points)


def test_single_cell_mesh():
    m = build_structured_mesh(1, 1)
    assert m.n_vertices == 4 and m.n_triangles == 2
    assert m.areas.sum() == pytest.approx(1.0, abs=1e-15)


def test_benchmark_mesh_counts():
    m = build_structured_mesh(40, 40)
    assert (m.n_vertices, m.n_triangles) == (1681, 3200)
    assert m.mesh_size == pytest.approx(1 / 40)


def test_cell_diameters_2x2():
    m = build_structured_mesh(2, 2)
    np.testing.assert_allclose(m.cell_diameters, np.sqrt(2) / 2, rtol=0, atol=1e-15)


@pytest.mark.parametrize("nx,ny,box", [(3, 5, (0, 1, 0, 1)), (7, 4, (-1.0, 2.0, 0.5, 1.5))])
def test_mesh_invariants(nx, ny, box):
    m = build_structured_mesh(nx, ny, box)
    assert np.all(m.areas > 0)
    area = (box[1] - box[0]) * (box[3] - box[2])
    assert abs(m.areas.sum() - area) <= 1e-12 * area
    ids = np.sort(m.grid_index.ravel())
    np.testing.assert_array_equal(ids, np.arange(m.n_triangles))
    assert m.grid_index.shape == (ny, nx, 2)


def test_basis_gradients_partition_of_unity():
    m = build_structured_mesh(4, 3)
    np.testing.assert_allclose(m.basis_gradients.sum(axis=1), 0.0, atol=1e-12)


def test_locate_lower_triangle():
    m = build_structured_mesh(1, 1)
    tri, lam = locate_point(m, [0.25, 0.1])
    assert tri == 0
    assert lam.sum() == pytest.approx(1.0, abs=1e-12)


def test_locate_tie_break_on_diagonal_and_vertices():
    m = build_structured_mesh(2, 2)
    tri, _ = locate_point(m, [0.25, 0.25])  # on the diagonal of cell 0
    assert tri == 0
    tri, _ = locate_point(m, [0.5, 0.5])  # interior vertex shared by 6 triangles
    assert tri == 0
    tri, _ = locate_point(m, [0.5, 0.25])  # vertical edge between cells 0 and 1
    assert tri == 0


def test_locate_outside_raises():
    m = build_structured_mesh(4, 4)
    with pytest.raises(GeometryError):
        locate_point(m, [1.1, 0.5])


def test_locate_roundtrip_random_points():
    m = build_structured_mesh(13, 9)
    x = np.random.default_rng(0).uniform(0, 1, (1000, 2))
    tri, lam = locate_points(m, x)
    assert np.all(lam >= 0) and np.all(lam <= 1)
    np.testing.assert_allclose(lam.sum(axis=1), 1.0, atol=1e-12)
    rec = np.einsum('mk,mkd->md', lam, m.vertices[m.triangles[tri]])
    np.testing.assert_allclose(rec, x, atol=1e-12)


def test_segment_inside_one_triangle():
    m = build_structured_mesh(2, 2)
    p0, p1 = np.array([0.3, 0.05]), np.array([0.4, 0.1])
    pieces = intersect_segment(m, p0, p1)
    assert len(pieces) == 1
    np.testing.assert_array_equal(pieces[0].endpoints, [p0, p1])


def test_horizontal_segment_hand_geometry():
    # y = 0.3 from x = 0.2 to 0.8 crosses the diagonal y = x at 0.3 and the line x = 0.5
    m = build_structured_mesh(2, 2)
    p0, p1 = np.array([0.2, 0.3]), np.array([0.8, 0.3])
    pieces = intersect_segment(m, p0, p1, (1.0, 2.0))
    assert len(pieces) == 3
    assert sum(p.length for p in pieces) == pytest.approx(0.6, rel=1e-12)
    np.testing.assert_allclose([p.endpoints[1][0] for p in pieces], [0.3, 0.5, 0.8])
    np.testing.assert_allclose([p.parent_params for p in pieces],
                               [(1.0, 1 + 1 / 6), (1 + 1 / 6, 1.5), (1.5, 2.0)])
    # the last piece ends on the diagonal of cell 1, so it lies in its upper triangle
    assert [p.host_triangle for p in pieces] == [1, 0, 3]


def test_endpoint_on_edge_gives_no_degenerate_piece():
    m = build_structured_mesh(4, 4)
    pieces = intersect_segment(m, [0.25, 0.1], [0.6, 0.2])
    assert all(p.length >= 1e-12 * m.mesh_size for p in pieces)
    pieces = intersect_segment(m, [0.1, 0.1], [0.5, 0.5])  # along diagonals, through a vertex
    assert all(p.length >= 1e-12 * m.mesh_size for p in pieces)
    assert sum(p.length for p in pieces) == pytest.approx(np.sqrt(0.32), rel=1e-12)


def test_intersect_outside_raises():
    m = build_structured_mesh(2, 2)
    with pytest.raises(GeometryError):
        intersect_segment(m, [0.5, 0.5], [1.5, 0.5])


def _check_pieces(m, p0, p1):
    pieces = intersect_segment(m, p0, p1, (0.0, 1.0))
    L = np.linalg.norm(np.subtract(p1, p0))
    assert abs(sum(p.length for p in pieces) - L) <= 1e-10 * max(L, 1e-300) + 1e-15
    prev = 0.0
    for p in pieces:
        a, b = p.parent_params
        assert a == pytest.approx(prev, abs=1e-14) and b > a
        prev = b
        lam = m.barycentric(np.array([p.host_triangle] * 2), p.endpoints)
        assert lam.min() >= -1e-12 and lam.max() <= 1 + 1e-12
        mid_tri, _ = locate_point(m, p.endpoints.mean(axis=0))
        assert mid_tri == p.host_triangle
    assert prev == pytest.approx(1.0, abs=1e-14)


coord = st.floats(0.0, 1.0, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), coord, coord, coord, coord)
def test_partition_property(nx, ny, a, b, c, d):
    m = build_structured_mesh(nx, ny)
    _check_pieces(m, [a, b], [c, d])


def test_curve_partition_matches_total_length():
    m = build_structured_mesh(8, 8)
    curve = build_ellipse_curve(37)
    total = sum(np.linalg.norm(curve.current_positions[j] - curve.current_positions[i])
                for i, j in curve.segments())
    pieces = sum(p.length for k, (i, j) in enumerate(curve.segments())
                 for p in intersect_segment(m, curve.current_positions[i],
                                            curve.current_positions[j]))
    assert abs(pieces - total) <= 1e-10 * total


def test_ellipse_node_at_zero():
    c = build_ellipse_curve(40)
    np.testing.assert_allclose(c.ref_positions[0], [0.5 + 0.25 * np.sqrt(2), 0.5], atol=1e-15)
    assert c.ref_positions[0, 0] == pytest.approx(0.853553, abs=1e-6)


def test_circle_nodes_at_radius():
    c = build_ellipse_curve(40, a=0.25, b=0.25)
    np.testing.assert_allclose(np.linalg.norm(c.ref_positions - 0.5, axis=1), 0.25, atol=1e-15)


def test_square_closure():
    c = build_ellipse_curve(4, a=0.3, b=0.3)
    assert c.n_nodes == 4
    assert c.seg_lengths.sum() == pytest.approx(2 * np.pi, abs=1e-14)
    np.testing.assert_array_equal(c.segments()[-1], [3, 0])
    assert np.all(c.seg_lengths > 0)


def test_curve_construction_errors():
    with pytest.raises(ValueError):
        build_ellipse_curve(2)
    with pytest.raises(GeometryError):
        build_ellipse_curve(10, a=0.6)


def test_check_inside():
    m = build_structured_mesh(4, 4)
    c = build_ellipse_curve(8)
    c.check_inside(m)
    d = np.zeros(16)
    d[0] = 0.2  # node 0 moves to x = 1.05
    with pytest.raises(GeometryError):
        c.with_displacement(d).check_inside(m)
    with pytest.raises(GeometryError):
        CurveMesh(c.params, c.ref_positions, c.ref_positions * np.nan).check_inside(m)
