"""Smoothing-cell partitions and boundary-integrated strain operators.

Every element is divided into an m x n grid of straight-sided subcells
(images of a regular reference grid under the element's bilinear corner
map). In cut elements, subcells crossed by the interface are first split
along the interface chord(s) into single-phase polygons, and each polygon is
then subtriangulated by fanning its centroid to its corners and the
interface-edge crossing points. Every resulting cell carries exactly one
material, and no cell boundary crosses the interface, which keeps the
boundary quadrature of the enrichment function accurate.

The cell-average strain (and full displacement gradient) are obtained purely
from boundary integrals of the shape functions over each cell contour, so no
shape-function derivative is ever formed.
"""
from __future__ import annotations

import numpy as np

SLIVER_REL = 1e-10
_GAUSS3_T = np.array([0.5 - np.sqrt(15.0) / 10.0, 0.5, 0.5 + np.sqrt(15.0) / 10.0])
_GAUSS3_W = np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])


class SmoothingError(ValueError):
    pass


def _polygon_area(verts):
    x, y = verts[:, 0], verts[:, 1]
    xn = np.concatenate([x[1:], x[:1]])
    yn = np.concatenate([y[1:], y[:1]])
    return 0.5 * np.sum(x * yn - xn * y)


def _polygon_centroid(verts):
    x, y = verts[:, 0], verts[:, 1]
    xn = np.concatenate([x[1:], x[:1]])
    yn = np.concatenate([y[1:], y[:1]])
    cr = x * yn - xn * y
    a = 0.5 * cr.sum()
    if abs(a) < 1e-300:
        return verts.mean(axis=0)
    cx = np.sum((x + xn) * cr) / (6.0 * a)
    cy = np.sum((y + yn) * cr) / (6.0 * a)
    return np.array([cx, cy])


class SmoothingCell:
    """One polygonal smoothing cell with its edge quadrature."""

    __slots__ = ("verts", "area", "enriched", "phase", "edge_points",
                 "edge_weights", "edge_normals", "_centroid")

    def __init__(self, verts, enriched, phase):
        self.verts = np.asarray(verts, dtype=float)
        self.area = float(_polygon_area(self.verts))
        if self.area <= 0.0:
            raise SmoothingError("smoothing cell must be counter-clockwise with positive area")
        self.enriched = bool(enriched)
        self.phase = int(phase)
        self.edge_points = None
        self.edge_weights = None
        self.edge_normals = None
        self._centroid = None

    def centroid(self):
        if self._centroid is None:
            self._centroid = _polygon_centroid(self.verts)
        return self._centroid


def assign_edge_quadrature(cell, npts):
    """Attach Gauss points, weights and outward normals on every cell edge."""
    if npts not in (1, 3):
        raise SmoothingError("edge quadrature supports 1 or 3 points")
    a = cell.verts
    b = np.roll(a, -1, axis=0)
    d = b - a
    lengths = np.linalg.norm(d, axis=1)
    if np.any(lengths <= 0.0):
        raise SmoothingError("degenerate cell edge")
    # outward normal of a CCW polygon is the direction rotated by -90 degrees
    normals = np.column_stack([d[:, 1], -d[:, 0]]) / lengths[:, None]
    if npts == 1:
        t = np.array([0.5])
        w = np.array([1.0])
    else:
        t, w = _GAUSS3_T, _GAUSS3_W
    pts = a[:, None, :] + t[None, :, None] * d[:, None, :]
    cell.edge_points = pts.reshape(-1, 2)
    cell.edge_weights = (w[None, :] * lengths[:, None]).reshape(-1)
    cell.edge_normals = np.repeat(normals, npts, axis=0)
    return cell


def _dedupe_ring(verts, tol):
    out = []
    for p in verts:
        if out and np.hypot(*(p - out[-1])) <= tol:
            continue
        out.append(p)
    while len(out) > 1 and np.hypot(*(out[0] - out[-1])) <= tol:
        out.pop()
    return out


def _fan_cells(ring, enriched, phase_of, sliver_area):
    """Fan-triangulate a convex ring about its centroid, merging slivers.

    Wedges below the sliver threshold are absorbed into the following wedge,
    so merged cells become small polygons instead of degenerate triangles and
    the exact area partition is preserved.
    """
    ring = np.asarray(ring)
    if _polygon_area(ring) < 0.0:
        ring = ring[::-1]
    c = _polygon_centroid(ring)
    k = len(ring)
    wedge = [np.array([c, ring[i], ring[(i + 1) % k]]) for i in range(k)]
    areas = np.array([_polygon_area(w) for w in wedge])
    runs = []
    acc = 0.0
    start = 0
    for i in range(k):
        acc += areas[i]
        if acc >= sliver_area:
            runs.append((start, i + 1))
            start = i + 1
            acc = 0.0
    if start < k:
        if runs:
            runs[-1] = (runs[-1][0], k)
        else:
            runs = [(0, k)]
    # a nonconvex ring can put the fan centroid outside some wedges; if any
    # merged run comes out non-positive, keep the ring whole instead
    run_areas = [areas[s:e].sum() for s, e in runs]
    if min(run_areas) <= 0.0:
        return [SmoothingCell(ring, enriched, phase_of(ring))]
    cells = []
    for s, e in runs:
        boundary = ring[s:e + 1] if e < k else np.vstack([ring[s:], ring[:1]])
        verts = np.vstack([c[None, :], boundary])
        cells.append(SmoothingCell(verts, enriched, phase_of(verts)))
    return cells


def _split_by_chords(quad, cphi, cross, basis, nodal_phi):
    """Split one cut subcell into single-phase polygons along its chord(s).

    cross[k] holds the interface crossing on edge (k, k+1) or None. Two
    crossings give one chord and two polygons; four give a saddle, resolved
    by the phi sign at the subcell centroid (two corner triangles plus a
    band through the middle).
    """
    signs = np.where(cphi > 0.0, 1, -1)
    n_cross = sum(c is not None for c in cross)
    if n_cross == 2:
        sides = {1: [], -1: []}
        for k in range(4):
            sides[int(signs[k])].append(quad[k])
            if cross[k] is not None:
                sides[1].append(cross[k])
                sides[-1].append(cross[k])
        return [(s, v) for s, v in sides.items() if len(v) >= 3]
    if n_cross == 4:
        c = _polygon_centroid(quad)
        sc = 1 if float(basis.eval(c[None, :]) @ nodal_phi) > 0.0 else -1
        polys = []
        band = []
        for k in range(4):
            if signs[k] == sc:
                band.append(quad[k])
            else:
                polys.append((int(signs[k]), [cross[k - 1], quad[k], cross[k]]))
            band.append(cross[k])
        polys.append((sc, band))
        return polys
    raise SmoothingError("inconsistent interface crossing pattern in subcell")


def partition_element(basis, nodal_phi, m, n, enriched):
    """Partition one element into smoothing cells.

    Parameters
    ----------
    basis : WachspressBasis
        Basis of the element (vertices define the geometry).
    nodal_phi : (4,) float or None
        Snapped level-set values at the element nodes; None for elements far
        from the interface (no cutting attempted).
    m, n : int
        Subcell grid resolution.
    enriched : bool
        True when the parent element is cut; all its cells then use the
        denser edge quadrature and carry the enrichment columns.
    """
    if m < 1 or n < 1:
        raise SmoothingError("partition counts must be positive")
    v = basis.vertices
    xi = np.linspace(0.0, 1.0, m + 1)
    eta = np.linspace(0.0, 1.0, n + 1)
    XI, ETA = np.meshgrid(xi, eta, indexing="ij")
    grid = ((1 - XI) * (1 - ETA))[..., None] * v[0] + (XI * (1 - ETA))[..., None] * v[1] \
        + (XI * ETA)[..., None] * v[2] + ((1 - XI) * ETA)[..., None] * v[3]

    area_elem = _polygon_area(v)
    sliver_area = SLIVER_REL * area_elem
    diag = np.linalg.norm(v.max(axis=0) - v.min(axis=0))
    snap = 1e-12 * diag

    cut_element = nodal_phi is not None and (np.min(nodal_phi) < 0.0 < np.max(nodal_phi))
    if cut_element:
        corner_phi = (basis.eval(grid.reshape(-1, 2)) @ nodal_phi).reshape(m + 1, n + 1)
        eps = 1e-14 * max(1.0, np.abs(corner_phi).max())
        corner_phi = np.where(np.abs(corner_phi) < eps, eps, corner_phi)

        crossings = {}

        def crossing(ia, ja, ib, jb):
            key = ((ia, ja), (ib, jb)) if (ia, ja) <= (ib, jb) else ((ib, jb), (ia, ja))
            if key not in crossings:
                (i1, j1), (i2, j2) = key
                pa, pb = corner_phi[i1, j1], corner_phi[i2, j2]
                t = pa / (pa - pb)
                crossings[key] = grid[i1, j1] + t * (grid[i2, j2] - grid[i1, j1])
            return crossings[key]
    else:
        phase = -1 if (nodal_phi is not None and nodal_phi[0] < 0.0) else 1
        if nodal_phi is None:
            phase = 1

    cells = []
    for i in range(m):
        for j in range(n):
            corners_ij = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
            quad = np.array([grid[a, b] for a, b in corners_ij])
            if not cut_element:
                cells.append(SmoothingCell(quad, enriched, phase))
                continue
            cphi = np.array([corner_phi[a, b] for a, b in corners_ij])
            if np.all(cphi > 0.0) or np.all(cphi < 0.0):
                cells.append(SmoothingCell(quad, enriched, 1 if cphi[0] > 0 else -1))
                continue
            cross = [None] * 4
            for k in range(4):
                (ia, ja), (ib, jb) = corners_ij[k], corners_ij[(k + 1) % 4]
                if corner_phi[ia, ja] * corner_phi[ib, jb] < 0.0:
                    cross[k] = crossing(ia, ja, ib, jb)
            polys = _split_by_chords(quad, cphi, cross, basis, nodal_phi)
            areas = {-1: 0.0, 1: 0.0}
            for s, ring in polys:
                areas[s] += _polygon_area(np.asarray(ring))
            if min(areas.values()) < sliver_area:
                cells.append(SmoothingCell(quad, enriched, 1 if areas[1] >= areas[-1] else -1))
                continue
            for s, ring in polys:
                ring = _dedupe_ring(ring, snap)
                if len(ring) < 3 or abs(_polygon_area(np.asarray(ring))) < sliver_area:
                    continue
                cells.extend(_fan_cells(ring, enriched, lambda _v, s=s: s, sliver_area))

    npts = 3 if enriched else 1
    for c in cells:
        assign_edge_quadrature(c, npts)
    total = sum(c.area for c in cells)
    if abs(total - area_elem) > 1e-9 * area_elem:
        raise SmoothingError(f"partition area mismatch: {total:g} vs {area_elem:g}")
    return cells


class SmoothedOperator:
    """Cell-averaged gradient and strain operators on element dofs.

    G maps the element dof vector to the averaged displacement gradient
    (du1/dx, du1/dy, du2/dx, du2/dy); B maps it to the Voigt strain
    (e11, e22, g12). Columns cover the 8 standard dofs, followed by the 8
    enrichment dofs when the parent element is cut.
    """

    __slots__ = ("G", "B", "area", "phase", "enriched")

    def __init__(self, G, area, phase, enriched):
        self.G = G
        self.B = np.vstack([G[0], G[3], G[1] + G[2]])
        self.area = area
        self.phase = phase
        self.enriched = enriched


def smoothed_B(cell, basis, nodal_phi=None):
    """Build the smoothed operators of one cell from boundary integrals."""
    if cell.edge_points is None:
        raise SmoothingError("cell has no edge quadrature assigned")
    N = basis.eval(cell.edge_points)
    if cell.enriched:
        if nodal_phi is None:
            raise SmoothingError("enriched cells need nodal phi values")
        F = basis.enrichment(cell.edge_points, nodal_phi)
        N = np.hstack([N, F[:, None] * N])
    wn = cell.edge_weights[:, None] * cell.edge_normals
    S = wn.T @ N / cell.area  # rows: d/dx, d/dy; columns: shape functions
    nfun = N.shape[1]
    G = np.zeros((4, 2 * nfun))
    G[0, 0::2] = S[0]
    G[1, 0::2] = S[1]
    G[2, 1::2] = S[0]
    G[3, 1::2] = S[1]
    return SmoothedOperator(G, cell.area, cell.phase, cell.enriched)
