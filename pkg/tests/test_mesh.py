"""Structured quad mesh construction and point location."""

import numpy as np
import pytest

from misfit import mesh as meshmod


def test_counts_and_spacing():
    m = meshmod.build_structured_mesh((-1.0, -2.0), (3.0, 2.0), 8, 10)
    assert m.n_nodes == 9 * 11
    assert m.n_elements == 80
    assert m.nx == 8 and m.ny == 10
    assert m.dx == pytest.approx(0.5)
    assert m.dy == pytest.approx(0.4)
    assert m.h == pytest.approx(0.4)
    assert m.uniform


def test_elements_are_counterclockwise():
    m = meshmod.build_structured_mesh((0.0, 0.0), (1.0, 1.0), 5, 3)
    areas = m.signed_areas()
    assert areas.shape == (15,)
    np.testing.assert_allclose(areas, (1 / 5) * (1 / 3), rtol=1e-12)


def test_element_coords_matches_connectivity():
    m = meshmod.build_structured_mesh((0.0, 0.0), (2.0, 1.0), 4, 2)
    for e in (0, 3, 7):
        pts = m.element_coords(e)
        assert pts.shape == (4, 2)
        np.testing.assert_allclose(pts, m.nodes[m.elements[e]])


def test_boundary_nodes():
    m = meshmod.build_structured_mesh((0.0, 0.0), (1.0, 1.0), 6, 4)
    b = m.boundary_nodes()
    assert len(b) == 2 * (6 + 4)
    xy = m.nodes[b]
    on_edge = (np.isclose(xy, 0.0) | np.isclose(xy, 1.0)).any(axis=1)
    assert on_edge.all()


def test_element_containing_centers_and_edges():
    m = meshmod.build_structured_mesh((0.0, 0.0), (1.0, 1.0), 4, 4)
    centers = np.array([m.element_coords(e).mean(axis=0)
                        for e in range(m.n_elements)])
    found = m.element_containing(centers)
    np.testing.assert_array_equal(found, np.arange(m.n_elements))
    # points on the outer boundary must clamp into the last row / column
    corner = m.element_containing(np.array([[1.0, 1.0], [0.0, 0.0]]))
    assert corner[0] == m.n_elements - 1
    assert corner[1] == 0


def test_rejects_bad_input():
    with pytest.raises(meshmod.MeshError):
        meshmod.build_structured_mesh((0.0, 0.0), (1.0, 1.0), 0, 4)
    with pytest.raises(meshmod.MeshError):
        meshmod.build_structured_mesh((1.0, 0.0), (0.0, 1.0), 4, 4)
