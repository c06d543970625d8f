"""Level-set kernel: distance init, contours, transport, reinit, extension."""

import numpy as np
import pytest

from misfit import levelset, mesh as meshmod


def _circle_field(nx=60, R=1.0, half=2.0):
    m = meshmod.build_structured_mesh((-half, -half), (half, half), nx, nx)
    field = levelset.init_signed_distance_circles(m, [((0.0, 0.0), R)])
    return m, field


def test_signed_distance_circle():
    m, field = _circle_field()
    r = np.hypot(m.nodes[:, 0], m.nodes[:, 1])
    np.testing.assert_allclose(field.phi, r - 1.0, atol=1e-12)


def test_signed_distance_two_circles():
    m = meshmod.build_structured_mesh((-3.0, -2.0), (3.0, 2.0), 30, 20)
    circles = [((-1.5, 0.0), 0.6), ((1.5, 0.3), 0.8)]
    field = levelset.init_signed_distance_circles(m, circles)
    d = np.minimum(
        np.hypot(m.nodes[:, 0] + 1.5, m.nodes[:, 1]) - 0.6,
        np.hypot(m.nodes[:, 0] - 1.5, m.nodes[:, 1] - 0.3) - 0.8)
    np.testing.assert_allclose(field.phi, d, atol=1e-12)


def test_nodal_gradient_linear_field():
    m = meshmod.build_structured_mesh((0.0, 0.0), (2.0, 1.0), 20, 10)
    field = levelset.LevelSetField(m, 0.3 * m.nodes[:, 0] - 0.8 * m.nodes[:, 1])
    g = levelset.nodal_gradient(field)
    np.testing.assert_allclose(g[:, 0], 0.3, atol=1e-12)
    np.testing.assert_allclose(g[:, 1], -0.8, atol=1e-12)


def test_curvature_of_circle():
    m, field = _circle_field(nx=120)
    kap = levelset.nodal_curvature(field)
    r = np.hypot(m.nodes[:, 0], m.nodes[:, 1])
    ring = (r > 0.7) & (r < 1.3)
    # kappa = 1/r for an outward-positive distance function
    np.testing.assert_allclose(kap[ring], 1.0 / r[ring], rtol=0.05)


def test_normal_and_curvature_point_probe():
    m, field = _circle_field(nx=120)
    p = np.array([0.57, 0.74])
    n, k = levelset.normal_and_curvature(field, p)
    np.testing.assert_allclose(n, p / np.hypot(*p), atol=5e-3)
    assert k == pytest.approx(1.0 / np.hypot(*p), rel=0.05)


def test_zero_contour_geometry():
    _, field = _circle_field(nx=80)
    contours = levelset.zero_contours(field)
    assert len(contours) == 1
    c = contours[0]
    assert c.closed
    r = np.hypot(c.verts[:, 0], c.verts[:, 1])
    np.testing.assert_allclose(r, 1.0, atol=2e-3)
    assert c.signed_area() == pytest.approx(np.pi, rel=2e-3)
    assert c.length() == pytest.approx(2 * np.pi, rel=2e-3)


def test_contour_segments_sit_in_claimed_elements():
    """element_ids must track the segment between verts i and i+1."""
    m, field = _circle_field(nx=37)
    for c in levelset.zero_contours(field):
        a, b = c.segment_endpoints()
        mids = 0.5 * (a + b)
        for mid, e in zip(mids, c.element_ids):
            lo = m.element_coords(int(e)).min(axis=0) - 1e-9
            hi = m.element_coords(int(e)).max(axis=0) + 1e-9
            assert (mid >= lo).all() and (mid <= hi).all()


def test_open_contour():
    m = meshmod.build_structured_mesh((0.0, 0.0), (1.0, 1.0), 16, 16)
    field = levelset.LevelSetField(m, m.nodes[:, 0] - 0.431)
    contours = levelset.zero_contours(field)
    assert len(contours) == 1
    assert not contours[0].closed
    np.testing.assert_allclose(contours[0].verts[:, 0], 0.431, atol=1e-12)


def test_advect_uniform_normal_speed():
    """A circle under unit normal speed grows its radius linearly in time."""
    m, field = _circle_field(nx=100, R=0.8)
    vel = levelset.VelocityField(m, np.ones(m.n_nodes), band_width=np.inf)
    out = levelset.advect(field, vel, dt=0.3)
    contours = levelset.zero_contours(out)
    r = np.hypot(contours[0].verts[:, 0], contours[0].verts[:, 1])
    np.testing.assert_allclose(r, 1.1, atol=5e-3)


def test_reinitialize_restores_distance():
    m, field = _circle_field(nx=80)
    warped = levelset.LevelSetField(m, field.phi * (2.0 + m.nodes[:, 0]))
    out = levelset.reinitialize(warped)
    r = np.hypot(m.nodes[:, 0], m.nodes[:, 1])
    band = np.abs(r - 1.0) < 8 * m.h
    g = levelset.nodal_gradient(out)
    slope = np.hypot(g[:, 0], g[:, 1])[band]
    assert np.abs(slope - 1.0).max() <= 0.05
    # the zero set itself must not move more than a fraction of a cell
    c = levelset.zero_contours(out)[0]
    np.testing.assert_allclose(np.hypot(c.verts[:, 0], c.verts[:, 1]), 1.0,
                               atol=0.2 * m.h)


def test_extend_constant_speed_is_exact():
    m, field = _circle_field(nx=60)
    contours = levelset.zero_contours(field)
    pairs = [(c, np.full(len(c.verts), 2.5)) for c in contours]
    vel = levelset.extend_velocity(field, pairs, band=6)
    band = np.abs(field.phi) <= 4 * m.h
    np.testing.assert_allclose(vel.v[band], 2.5, atol=1e-10)


def test_extend_velocity_constant_along_normals():
    """An angular speed pattern stays attached to its closest contour point."""
    m, field = _circle_field(nx=100)
    contours = levelset.zero_contours(field)
    speeds = [np.cos(np.arctan2(c.verts[:, 1], c.verts[:, 0]))
              for c in contours]
    vel = levelset.extend_velocity(field, list(zip(contours, speeds)), band=6)
    theta = np.arctan2(m.nodes[:, 1], m.nodes[:, 0])
    band = np.abs(field.phi) <= 3 * m.h
    np.testing.assert_allclose(vel.v[band], np.cos(theta)[band], atol=0.05)


def test_extend_velocity_requires_matching_lengths():
    _, field = _circle_field(nx=40)
    c = levelset.zero_contours(field)[0]
    with pytest.raises(levelset.LevelSetError):
        levelset.extend_velocity(field, [(c, np.ones(3))])
