"""Level-set representation of the particle interface on the nodal lattice.

The interface is the zero contour of a nodal signed-distance field phi with
phi < 0 inside the particle. Transport solves

    d(phi)/dt + v |grad phi| = 0

with fifth-order one-sided WENO derivatives, Godunov upwinding on the sign
of v, and a three-stage TVD Runge-Kutta step. Reinitialization rebuilds phi
as the exact signed distance to the extracted linear zero contour, and
interface speeds are extended along normals by marching nodes in order of
increasing |phi|.
"""
from __future__ import annotations

import numpy as np

from .shapefn import WachspressBasis

SNAP_REL = 1e-8
WENO_EPS = 1e-6


class LevelSetError(RuntimeError):
    pass


class LevelSetField:
    """Nodal level-set values tied to a structured mesh."""

    def __init__(self, mesh, phi):
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (mesh.n_nodes,):
            raise LevelSetError("phi must have one value per mesh node")
        self.mesh = mesh
        self.phi = phi

    def lattice(self):
        return self.phi.reshape(self.mesh.lattice_shape)

    def snapped(self):
        """phi with near-zero nodal values pushed to the positive side.

        Keeps every sign decision (cut tests, crossings, enrichment sets)
        consistent across modules.
        """
        eps = SNAP_REL * self.mesh.h
        phi = self.phi.copy()
        phi[np.abs(phi) < eps] = eps
        return phi

    def copy(self):
        return LevelSetField(self.mesh, self.phi.copy())


class VelocityField:
    """Nodal normal-speed samples produced by extension off the interface."""

    def __init__(self, mesh, v, band_width):
        self.mesh = mesh
        self.v = np.asarray(v, dtype=float)
        self.band_width = band_width


class Contour:
    """One ordered polyline of the zero level set.

    ``verts`` are the crossing points in walk order (not repeated for closed
    loops); segment k joins verts[k] to verts[k+1] (wrapping when closed) and
    lies inside element ``element_ids[k]``.
    """

    def __init__(self, verts, element_ids, closed):
        self.verts = np.asarray(verts, dtype=float)
        self.element_ids = np.asarray(element_ids, dtype=np.int64)
        self.closed = bool(closed)

    @property
    def n_segments(self):
        return len(self.element_ids)

    def segment_endpoints(self):
        a = self.verts
        if self.closed:
            b = np.roll(a, -1, axis=0)
        else:
            a, b = a[:-1], a[1:]
        return a, b

    def signed_area(self):
        if not self.closed:
            return 0.0
        x, y = self.verts[:, 0], self.verts[:, 1]
        return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)

    def length(self):
        a, b = self.segment_endpoints()
        return float(np.linalg.norm(b - a, axis=1).sum())


def init_signed_distance_circles(mesh, circles):
    """Exact signed distance to a union of circles (negative inside).

    circles : sequence of ((cx, cy), radius)
    """
    if not circles:
        raise LevelSetError("at least one circle is required")
    phi = np.full(mesh.n_nodes, np.inf)
    for center, radius in circles:
        if radius <= 0.0:
            raise LevelSetError("circle radius must be positive")
        d = np.linalg.norm(mesh.nodes - np.asarray(center, dtype=float), axis=1) - radius
        phi = np.minimum(phi, d)
    return LevelSetField(mesh, phi)


def interpolate_phi(field, element, point):
    """Interpolate nodal phi inside one element with its own shape functions."""
    mesh = field.mesh
    basis = WachspressBasis(mesh.element_coords(element))
    p = np.atleast_2d(point)
    if not np.all(basis.contains(p, tol=1e-9)):
        raise LevelSetError("point lies outside the requested element")
    vals = basis.eval(p) @ field.phi[mesh.elements[element]]
    return float(vals[0]) if np.ndim(point) == 1 else vals


def _require_uniform(mesh):
    if not mesh.uniform:
        raise LevelSetError("lattice operations require a uniform structured mesh")


def nodal_gradient(field):
    """Central-difference gradient of phi on the lattice, shape (N, 2)."""
    _require_uniform(field.mesh)
    P = field.lattice()
    gy, gx = np.gradient(P, field.mesh.dy, field.mesh.dx)
    return np.column_stack([gx.ravel(), gy.ravel()])


def nodal_curvature(field):
    """Curvature div(grad phi / |grad phi|) at nodes, clamped to +-1/h.

    Positive for a convex particle (phi < 0 inside a circle gives +1/R).
    """
    _require_uniform(field.mesh)
    mesh = field.mesh
    P = field.lattice()
    py, px = np.gradient(P, mesh.dy, mesh.dx)
    pyx, pxx = np.gradient(px, mesh.dy, mesh.dx)
    pyy, _ = np.gradient(py, mesh.dy, mesh.dx)
    g2 = px**2 + py**2
    denom = np.maximum(g2, 1e-16) ** 1.5
    kappa = (pxx * py**2 - 2.0 * px * py * pyx + pyy * px**2) / denom
    lim = 1.0 / mesh.h
    return np.clip(kappa, -lim, lim).ravel()


def _bilinear(mesh, nodal, points):
    """Bilinear lattice interpolation of one or more nodal arrays."""
    p = np.atleast_2d(points)
    fx = np.clip((p[:, 0] - mesh.domain_min[0]) / mesh.dx, 0.0, mesh.nx - 1e-12)
    fy = np.clip((p[:, 1] - mesh.domain_min[1]) / mesh.dy, 0.0, mesh.ny - 1e-12)
    i = np.floor(fx).astype(np.int64)
    j = np.floor(fy).astype(np.int64)
    tx = fx - i
    ty = fy - j
    nxp = mesh.nx + 1
    n00 = j * nxp + i
    vals = np.asarray(nodal)
    flat = vals.reshape(mesh.n_nodes, -1)
    out = ((1 - tx) * (1 - ty))[:, None] * flat[n00] \
        + (tx * (1 - ty))[:, None] * flat[n00 + 1] \
        + (tx * ty)[:, None] * flat[n00 + nxp + 1] \
        + ((1 - tx) * ty)[:, None] * flat[n00 + nxp]
    return out.reshape(p.shape[:1] + vals.shape[1:])


def normal_and_curvature(field, point):
    """Unit normal (pointing out of the particle) and curvature at a point."""
    _require_uniform(field.mesh)
    g = _bilinear(field.mesh, nodal_gradient(field), point)
    k = _bilinear(field.mesh, nodal_curvature(field), point)
    p = np.atleast_2d(point)
    norm = np.linalg.norm(g, axis=1)
    if np.any(norm < 1e-8):
        raise LevelSetError("level-set gradient vanishes at query point")
    n = g / norm[:, None]
    if np.ndim(point) == 1:
        return n[0], float(k[0])
    return n, k


# ---------------------------------------------------------------------------
# zero-contour extraction

def _crossing_tables(field):
    """Crossing points of snapped phi on lattice edges.

    Returns dicts keyed by (node_a, node_b) with a < b, mapping to the
    crossing coordinates. Linear interpolation along each edge, so adjacent
    elements share crossing points exactly.
    """
    mesh = field.mesh
    phi = field.snapped()
    nodes = mesh.nodes
    nxp = mesh.nx + 1
    crossings = {}

    def scan(a_ids, b_ids):
        pa, pb = phi[a_ids], phi[b_ids]
        cut = (pa * pb) < 0.0
        for a, b in zip(a_ids[cut], b_ids[cut]):
            t = phi[a] / (phi[a] - phi[b])
            pt = nodes[a] + t * (nodes[b] - nodes[a])
            crossings[(min(a, b), max(a, b))] = pt

    idx = np.arange(mesh.n_nodes).reshape(mesh.lattice_shape)
    scan(idx[:, :-1].ravel(), idx[:, 1:].ravel())
    scan(idx[:-1, :].ravel(), idx[1:, :].ravel())
    return crossings


def _element_segments(field, crossings):
    """Per-element interface segments as pairs of lattice-edge keys."""
    mesh = field.mesh
    phi = field.snapped()
    segments = []
    elems = mesh.elements
    corner_phi = phi[elems]
    cut_elems = np.nonzero(np.any(corner_phi < 0, axis=1) & np.any(corner_phi > 0, axis=1))[0]
    for e in cut_elems:
        n = elems[e]
        local_edges = [(n[0], n[1]), (n[1], n[2]), (n[2], n[3]), (n[3], n[0])]
        keys = []
        for a, b in local_edges:
            k = (min(a, b), max(a, b))
            keys.append(k if k in crossings else None)
        present = [k for k in keys if k is not None]
        if len(present) == 2:
            segments.append((present[0], present[1], e))
        elif len(present) == 4:
            center = corner_phi[e].mean()
            b_, r_, t_, l_ = keys
            if np.sign(center) == np.sign(corner_phi[e][0]):
                segments.append((b_, r_, e))
                segments.append((t_, l_, e))
            else:
                segments.append((b_, l_, e))
                segments.append((r_, t_, e))
    return segments


def zero_contours(field):
    """Extract the zero level set as ordered polylines.

    Closed loops are oriented counter-clockwise around the particle
    (phi < 0 on the enclosed side).
    """
    crossings = _crossing_tables(field)
    segments = _element_segments(field, crossings)
    if not segments:
        raise LevelSetError("level set has no zero contour")

    adj = {}
    for s, (ka, kb, _e) in enumerate(segments):
        adj.setdefault(ka, []).append(s)
        adj.setdefault(kb, []).append(s)

    used = np.zeros(len(segments), dtype=bool)
    contours = []
    order = list(range(len(segments)))
    # open chains must start at degree-1 keys; walk those first
    endpoint_keys = [k for k, ss in adj.items() if len(ss) == 1]
    starts = []
    for k in endpoint_keys:
        starts.append((adj[k][0], k))
    for s in order:
        starts.append((s, segments[s][0]))

    for s0, k0 in starts:
        if used[s0]:
            continue
        keys = [k0]
        elems = []
        s, k = s0, k0
        while True:
            used[s] = True
            ka, kb, e = segments[s]
            k_next = kb if k == ka else ka
            elems.append(e)
            keys.append(k_next)
            nxt = [t for t in adj[k_next] if not used[t]]
            if not nxt:
                break
            s, k = nxt[0], k_next
        closed = keys[0] == keys[-1] and len(keys) > 3
        if closed:
            keys = keys[:-1]
        verts = np.array([crossings[k] for k in keys])
        contour = Contour(verts, elems, closed)
        if closed:
            mid = verts.mean(axis=0)
            area = contour.signed_area()
            flip = area < 0.0
            if field.mesh.uniform and abs(area) > 0:
                inner = float(_bilinear(field.mesh, field.phi, mid)[0])
                # particle (phi<0) enclosed -> want positive area; matrix hole -> negative
                flip = (area < 0.0) if inner < 0.0 else (area > 0.0)
            if flip:
                # reversing verts maps segment k to old segment n-2-k, so the
                # reversed id list must also rotate by one to stay aligned
                contour.verts = contour.verts[::-1]
                contour.element_ids = np.roll(contour.element_ids[::-1], -1)
        contours.append(contour)
    return contours


# ---------------------------------------------------------------------------
# WENO5 / RK3 transport

def _pad3(P, dx_axis):
    """Pad with 3 linearly extrapolated ghost layers along one axis."""
    lo = P.take([0], axis=dx_axis)
    dlo = lo - P.take([1], axis=dx_axis)
    hi = P.take([-1], axis=dx_axis)
    dhi = hi - P.take([-2], axis=dx_axis)
    parts = [lo + 3 * dlo, lo + 2 * dlo, lo + dlo, P, hi + dhi, hi + 2 * dhi, hi + 3 * dhi]
    return np.concatenate(parts, axis=dx_axis)


def _weno_combine(v1, v2, v3, v4, v5):
    b0 = 13.0 / 12.0 * (v1 - 2 * v2 + v3) ** 2 + 0.25 * (v1 - 4 * v2 + 3 * v3) ** 2
    b1 = 13.0 / 12.0 * (v2 - 2 * v3 + v4) ** 2 + 0.25 * (v2 - v4) ** 2
    b2 = 13.0 / 12.0 * (v3 - 2 * v4 + v5) ** 2 + 0.25 * (3 * v3 - 4 * v4 + v5) ** 2
    a0 = 0.1 / (WENO_EPS + b0) ** 2
    a1 = 0.6 / (WENO_EPS + b1) ** 2
    a2 = 0.3 / (WENO_EPS + b2) ** 2
    s = a0 + a1 + a2
    f0 = v1 / 3.0 - 7.0 * v2 / 6.0 + 11.0 * v3 / 6.0
    f1 = -v2 / 6.0 + 5.0 * v3 / 6.0 + v4 / 3.0
    f2 = v3 / 3.0 + 5.0 * v4 / 6.0 - v5 / 6.0
    return (a0 * f0 + a1 * f1 + a2 * f2) / s


def _weno_derivs(P, h, axis):
    """One-sided WENO5 derivatives (D-, D+) along an axis of the lattice."""
    Q = _pad3(P, axis) if axis == 1 else _pad3(P.T, 1)
    d = np.diff(Q, axis=1) / h
    n = P.shape[1] if axis == 1 else P.shape[0]
    # interior column i maps to difference index i+3 for the (i-1/2) gap
    sl = lambda k: d[:, 3 + k: 3 + k + n]
    Dm = _weno_combine(sl(-3), sl(-2), sl(-1), sl(0), sl(1))
    Dp = _weno_combine(sl(2), sl(1), sl(0), sl(-1), sl(-2))
    if axis == 1:
        return Dm, Dp
    return Dm.T, Dp.T


def _godunov_gradient(P, V, dx, dy):
    Dmx, Dpx = _weno_derivs(P, dx, axis=1)
    Dmy, Dpy = _weno_derivs(P, dy, axis=0)
    pos = V > 0
    gx2 = np.where(pos,
                   np.maximum(np.maximum(Dmx, 0.0) ** 2, np.minimum(Dpx, 0.0) ** 2),
                   np.maximum(np.minimum(Dmx, 0.0) ** 2, np.maximum(Dpx, 0.0) ** 2))
    gy2 = np.where(pos,
                   np.maximum(np.maximum(Dmy, 0.0) ** 2, np.minimum(Dpy, 0.0) ** 2),
                   np.maximum(np.minimum(Dmy, 0.0) ** 2, np.maximum(Dpy, 0.0) ** 2))
    return np.sqrt(gx2 + gy2)


def advect(field, velocity, dt, cfl=0.5):
    """One TVD-RK3 step of phi_t + v |grad phi| = 0. Returns a new field."""
    _require_uniform(field.mesh)
    mesh = field.mesh
    V = velocity.v.reshape(mesh.lattice_shape)
    vmax = np.abs(V).max()
    if vmax > 0 and dt > cfl * mesh.h / vmax * (1.0 + 1e-12):
        raise LevelSetError(f"CFL violation: dt={dt:g} exceeds {cfl * mesh.h / vmax:g}")

    def rhs(P):
        return -V * _godunov_gradient(P, V, mesh.dx, mesh.dy)

    P0 = field.lattice()
    P1 = P0 + dt * rhs(P0)
    P2 = 0.75 * P0 + 0.25 * (P1 + dt * rhs(P1))
    P3 = P0 / 3.0 + 2.0 / 3.0 * (P2 + dt * rhs(P2))
    return LevelSetField(mesh, P3.ravel())


# ---------------------------------------------------------------------------
# geometric reinitialization

def _segment_stack(contours):
    a = []
    b = []
    for c in contours:
        ca, cb = c.segment_endpoints()
        a.append(ca)
        b.append(cb)
    return np.vstack(a), np.vstack(b)


def _distance_to_segments(points, seg_a, seg_b, chunk=2048):
    d = np.empty(len(points))
    ab = seg_b - seg_a
    ab2 = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300)
    for lo in range(0, len(points), chunk):
        p = points[lo:lo + chunk]
        ap = p[:, None, :] - seg_a[None, :, :]
        t = np.clip(np.einsum("psj,sj->ps", ap, ab) / ab2[None, :], 0.0, 1.0)
        close = seg_a[None, :, :] + t[:, :, None] * ab[None, :, :]
        dist = np.linalg.norm(p[:, None, :] - close, axis=2)
        d[lo:lo + chunk] = dist.min(axis=1)
    return d


def reinitialize(field, band=None):
    """Rebuild phi as the exact signed distance to the current zero contour.

    band : float or None
        When given, clamp |phi| to band * h afterwards (narrow-band policy).
    """
    contours = zero_contours(field)
    seg_a, seg_b = _segment_stack(contours)
    d = _distance_to_segments(field.mesh.nodes, seg_a, seg_b)
    sign = np.where(field.snapped() < 0.0, -1.0, 1.0)
    phi = sign * d
    if band is not None:
        lim = band * field.mesh.h
        phi = np.clip(phi, -lim, lim)
    return LevelSetField(field.mesh, phi)


# ---------------------------------------------------------------------------
# velocity extension

def _closest_point_values(points, seg_a, seg_b, val_a, val_b):
    """Value at the closest polyline point, linear along each segment."""
    ab = seg_b - seg_a
    ab2 = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300)
    out = np.empty(len(points))
    for k, p in enumerate(points):
        ap = p[None, :] - seg_a
        t = np.clip((ap * ab).sum(axis=1) / ab2, 0.0, 1.0)
        close = seg_a + t[:, None] * ab
        d2 = ((p[None, :] - close) ** 2).sum(axis=1)
        s = int(np.argmin(d2))
        out[k] = (1.0 - t[s]) * val_a[s] + t[s] * val_b[s]
    return out


def extend_velocity(field, contour_speeds, band=8):
    """Extend interface speeds to lattice nodes along normals.

    contour_speeds : list of (Contour, vertex_values)
        Speed samples at each contour vertex.
    band : float
        March only nodes with |phi| <= band * h; the rest keep v = 0.

    Nodes of cut lattice cells are seeded with the closest-point speed; the
    remaining band nodes are filled in ascending |phi| order with one-sided
    (second order where the stencil allows) upwind differences, which keeps
    grad v . grad phi ~ 0. phi itself never changes, so the classic min-heap
    order reduces to a static sort on |phi|.
    """
    _require_uniform(field.mesh)
    mesh = field.mesh
    seg_a, seg_b, val_a, val_b = [], [], [], []
    for contour, vals in contour_speeds:
        vals = np.asarray(vals, dtype=float)
        if vals.shape != (len(contour.verts),):
            raise LevelSetError("one speed per contour vertex is required")
        a, b = contour.segment_endpoints()
        seg_a.append(a)
        seg_b.append(b)
        if contour.closed:
            val_a.append(vals)
            val_b.append(np.roll(vals, -1))
        else:
            val_a.append(vals[:-1])
            val_b.append(vals[1:])
    seg_a, seg_b = np.vstack(seg_a), np.vstack(seg_b)
    val_a, val_b = np.concatenate(val_a), np.concatenate(val_b)

    nyp, nxp = mesh.lattice_shape
    psi = np.abs(field.phi).reshape(nyp, nxp)
    phi_lat = field.snapped().reshape(nyp, nxp)
    v = np.zeros((nyp, nxp))
    accepted = np.zeros((nyp, nxp), dtype=bool)

    cut_x = phi_lat[:, :-1] * phi_lat[:, 1:] < 0
    cut_y = phi_lat[:-1, :] * phi_lat[1:, :] < 0
    seed = np.zeros((nyp, nxp), dtype=bool)
    seed[:, :-1] |= cut_x
    seed[:, 1:] |= cut_x
    seed[:-1, :] |= cut_y
    seed[1:, :] |= cut_y
    sj, si = np.nonzero(seed)
    pts = mesh.nodes.reshape(nyp, nxp, 2)[sj, si]
    v[sj, si] = _closest_point_values(pts, seg_a, seg_b, val_a, val_b)
    accepted[sj, si] = True

    lim = band * mesh.h
    order = np.argsort(psi, axis=None, kind="stable")
    hx, hy = mesh.dx, mesh.dy
    for flat in order:
        j, i = divmod(int(flat), nxp)
        if accepted[j, i] or psi[j, i] > lim:
            continue
        num = 0.0
        den = 0.0
        for dj, di, h in ((0, -1, hx), (0, 1, hx), (-1, 0, hy), (1, 0, hy)):
            j1, i1 = j + dj, i + di
            if not (0 <= j1 < nyp and 0 <= i1 < nxp) or not accepted[j1, i1]:
                continue
            if psi[j1, i1] >= psi[j, i]:
                continue
            j2, i2 = j + 2 * dj, i + 2 * di
            second = (0 <= j2 < nyp and 0 <= i2 < nxp and accepted[j2, i2]
                      and psi[j2, i2] <= psi[j1, i1])
            if second:
                g = (3.0 * psi[j, i] - 4.0 * psi[j1, i1] + psi[j2, i2]) / (2.0 * h)
                if g > 0.0:
                    num += g * (4.0 * v[j1, i1] - v[j2, i2]) / (2.0 * h)
                    den += 1.5 * g / h
                    continue
            g = (psi[j, i] - psi[j1, i1]) / h
            if g > 0.0:
                num += g * v[j1, i1] / h
                den += g / h
        if den > 0.0:
            v[j, i] = num / den
        else:
            nb = [(j + dj, i + di) for dj, di in ((0, -1), (0, 1), (-1, 0), (1, 0))
                  if 0 <= j + dj < nyp and 0 <= i + di < nxp and accepted[j + dj, i + di]]
            if nb:
                v[j, i] = np.mean([v[a, b] for a, b in nb])
        accepted[j, i] = True
    return VelocityField(mesh, v.ravel(), band)
