import numpy as np
import pytest
from hypothesis import given, strategies as st

from phasefrac.mesh import (CORNER, INTERIOR, DegenerateElementError, PointLocationError, TriMesh,
                            build_structured_mesh, element_geometry, interpolate_field,
                            locate_point, locate_points, vertex_patches)

from conftest import perturbed_mesh


def test_counts_and_total_area():
    m = build_structured_mesh(4, 3, (0.0, 0.0, 2.0, 1.5))
    assert m.N == 4 * 4 * 3
    assert m.N_v == 5 * 4 + 4 * 3
    assert np.isclose(m.areas().sum(), 3.0, rtol=1e-14)
    assert np.all(m.signed_areas() > 0)


def test_forty_by_forty_matches_element_count_of_tension_run():
    assert build_structured_mesh(40, 40).N == 6400


def test_construction_is_deterministic():
    a, b = build_structured_mesh(5, 7), build_structured_mesh(5, 7)
    assert np.array_equal(a.vertices, b.vertices)
    assert np.array_equal(a.elements, b.elements)
    assert np.array_equal(a.boundary_markers, b.boundary_markers)


def test_invalid_construction():
    with pytest.raises(ValueError):
        build_structured_mesh(0, 3)
    with pytest.raises(ValueError):
        build_structured_mesh(2, 2, (0, 0, 0, 1))


def test_patches():
    m = build_structured_mesh(1, 1)
    patches = vertex_patches(m)
    assert len(patches[4].elements) == 4  # cell centre
    for corner in range(4):
        assert len(patches[corner].elements) == 2
    big = build_structured_mesh(3, 2)
    corner = int(np.flatnonzero(big.boundary_markers == CORNER)[0])
    # a domain corner touches two triangles of its single cell
    assert len(vertex_patches(big)[corner].elements) == 2
    assert sum(len(p.elements) for p in vertex_patches(big)) == 3 * big.N
    for p in vertex_patches(big):
        assert np.all(big.elements[p.elements, p.local_index] == p.vertex)


def test_boundary_markers_and_sides():
    m = build_structured_mesh(3, 2)
    assert np.sum(m.boundary_markers == CORNER) == 4
    centres = np.arange((3 + 1) * (2 + 1), m.N_v)
    assert np.all(m.boundary_markers[centres] == INTERIOR)
    top = m.side_vertices("top")
    assert len(top) == 4 and np.all(m.vertices[top, 1] == 1.0)
    left = m.side_vertices("left")
    assert len(left) == 3 and np.all(m.vertices[left, 0] == 0.0)
    with pytest.raises(KeyError):
        m.side_vertices("north")
    assert len(m.boundary_edges()) == 2 * (3 + 2)
    m.check()


def test_neighbors_are_symmetric():
    m = build_structured_mesh(3, 3)
    nb = m.neighbors()
    for k in range(m.N):
        for j in nb[k]:
            if j >= 0:
                assert k in nb[j]


def test_degenerate_element_detected():
    m = build_structured_mesh(1, 1)
    v = m.vertices.copy()
    v[4] = [0.5, 0.0]  # centre onto the bottom edge flattens one triangle
    bad = m.with_vertices(v)
    with pytest.raises(DegenerateElementError):
        bad.areas()
    with pytest.raises(DegenerateElementError):
        element_geometry(bad, 0)


def test_locate_vertex_and_centroid():
    m = build_structured_mesh(3, 3)
    k, lam = locate_point(m, m.vertices[7])
    assert 7 in m.elements[k] and np.isclose(lam.max(), 1.0, atol=1e-12)
    c = m.centroids()[10]
    k, lam = locate_point(m, c)
    assert k == 10
    assert np.allclose(lam, 1 / 3, atol=1e-12)


def test_locate_outside_raises():
    m = build_structured_mesh(2, 2)
    with pytest.raises(PointLocationError):
        locate_point(m, (1.5, 0.5))
    with pytest.raises(PointLocationError):
        locate_points(m, np.array([[0.5, 0.5], [0.5, -0.1]]))


def test_interpolate_identity_and_constant(rng):
    m = build_structured_mesh(4, 4)
    f = rng.standard_normal(m.N_v)
    assert np.array_equal(interpolate_field(m, f, m), f)
    other = perturbed_mesh(5, 3, rng)
    out = interpolate_field(m, np.full(m.N_v, 2.5), other)
    assert np.allclose(out, 2.5, rtol=0, atol=1e-14)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6),
       st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_interpolation_reproduces_affine_fields(nx1, ny1, nx2, ny2, a, b, c, seed):
    rng = np.random.default_rng(seed)
    src = perturbed_mesh(nx1, ny1, rng, 0.2, (0.0, -1.0, 2.0, 1.0))
    dst = perturbed_mesh(nx2, ny2, rng, 0.2, (0.0, -1.0, 2.0, 1.0))
    f = lambda p: a + b * p[:, 0] + c * p[:, 1]
    out = interpolate_field(src, f(src.vertices), dst)
    scale = abs(a) + 2 * abs(b) + abs(c) + 1e-300
    assert np.max(np.abs(out - f(dst.vertices))) <= 1e-12 * scale


def test_interpolation_of_vector_fields(rng):
    src, dst = perturbed_mesh(3, 3, rng), perturbed_mesh(4, 2, rng)
    out = interpolate_field(src, src.vertices.copy(), dst)
    assert np.allclose(out, dst.vertices, atol=1e-13)


def test_mesh_is_immutable():
    m = build_structured_mesh(1, 1)
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 3.0
    with pytest.raises(ValueError):
        TriMesh(np.zeros((3, 2)), np.array([[0, 1, 5]]), np.zeros(3), (0, 0, 1, 1))
