"""Bulk and interface constitutive models, loads, energy and driving force.

Plane strain throughout. Voigt order is (e11, e22, g12) with engineering
shear. The particle/matrix interface carries an excess energy density

    gamma(eps_s) = gamma0 + tau_s * eps_s + 0.5 * l_s * eps_s**2

in terms of the tangential interface strain eps_s = t . eps . t, which makes
the interface stress sigma_s = tau_s + l_s * eps_s. The interface therefore
contributes a stiffness and a constant pre-stress load to the field problem,
and a Gibbs-Thomson term to the configurational driving force.
"""
from __future__ import annotations

import numpy as np

from . import levelset as ls


class PhysicsError(ValueError):
    pass


class BulkMaterial:
    """Plane-strain stiffness in Voigt form."""

    def __init__(self, C):
        C = np.asarray(C, dtype=float)
        if C.shape != (3, 3) or not np.allclose(C, C.T, rtol=0, atol=1e-12 * np.abs(C).max()):
            raise PhysicsError("stiffness must be a symmetric 3x3 Voigt matrix")
        if np.any(np.linalg.eigvalsh(C) <= 0.0):
            raise PhysicsError("stiffness must be positive definite")
        self.C = C

    @classmethod
    def from_lame(cls, lam, mu):
        return cls([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])

    @classmethod
    def from_cubic(cls, c11, c12, c44):
        """Cubic crystal with <100> axes aligned to the grid."""
        return cls([[c11, c12, 0.0], [c12, c11, 0.0], [0.0, 0.0, c44]])


class InterfaceMaterial:
    def __init__(self, gamma0, tau_s=0.0, l_s=0.0):
        if gamma0 < 0.0:
            raise PhysicsError("gamma0 must be non-negative")
        self.gamma0 = float(gamma0)
        self.tau_s = float(tau_s)
        self.l_s = float(l_s)


class MaterialSet:
    """Matrix and particle stiffness, misfit eigenstrain, interface model."""

    def __init__(self, matrix, particle, eigenstrain, interface):
        self.matrix = matrix
        self.particle = particle
        e = np.asarray(eigenstrain, dtype=float)
        if e.shape != (3,):
            raise PhysicsError("eigenstrain must be a Voigt 3-vector")
        self.eigenstrain = e
        self.interface = interface

    def stiffness(self, phase):
        return self.particle.C if phase < 0 else self.matrix.C


class InterfaceSegment:
    """One linear interface segment inside a cut element."""

    __slots__ = ("element", "a", "b", "midpoint", "tangent", "normal", "length",
                 "qpoints", "qweights")

    def __init__(self, element, a, b, normal_hint=None):
        self.element = int(element)
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        d = self.b - self.a
        self.length = float(np.hypot(*d))
        if self.length <= 0.0:
            raise PhysicsError("degenerate interface segment")
        self.tangent = d / self.length
        n = np.array([self.tangent[1], -self.tangent[0]])
        if normal_hint is not None and float(n @ normal_hint) < 0.0:
            # swap endpoints so tangent stays (b - a) / length
            self.a, self.b = self.b, self.a
            self.tangent = -self.tangent
            n = -n
        self.normal = n
        self.midpoint = 0.5 * (self.a + self.b)
        off = 0.5 * self.length / np.sqrt(3.0)
        self.qpoints = np.vstack([self.midpoint - off * self.tangent,
                                  self.midpoint + off * self.tangent])
        self.qweights = np.full(2, 0.5 * self.length)


def extract_interface_segments(mesh, field):
    """Linear interface segments per cut element, normals into the matrix."""
    contours = ls.zero_contours(field)
    grad = ls.nodal_gradient(field) if mesh.uniform else None
    segments = []
    for contour in contours:
        a, b = contour.segment_endpoints()
        mids = 0.5 * (a + b)
        hints = ls._bilinear(mesh, grad, mids) if grad is not None else [None] * len(mids)
        for k in range(len(mids)):
            segments.append(InterfaceSegment(contour.element_ids[k], a[k], b[k], hints[k]))
    return segments, contours


def tangent_projector(tangent):
    """Voigt row extracting t . eps . t from (e11, e22, g12)."""
    t1, t2 = tangent
    return np.array([t1 * t1, t2 * t2, t1 * t2])


def nearest_phase_ops(cells, ops, point):
    """Pick the smoothing-cell operators on each side of an interface point.

    The cell with the centroid closest to the point is selected per phase;
    cells are small, so this is the touching cell for interface quadrature
    points.
    """
    best = {-1: (np.inf, None), 1: (np.inf, None)}
    for cell, op in zip(cells, ops):
        d = float(np.sum((cell.centroid() - point) ** 2))
        if d < best[cell.phase][0]:
            best[cell.phase] = (d, op)
    p_op = best[-1][1]
    m_op = best[1][1]
    if p_op is None and m_op is None:
        raise PhysicsError("interface point lacks smoothing cells on both sides")
    # a grazing cut can leave one phase without cells in this element; the
    # interface then effectively touches a single cell, so use it twice
    if p_op is None:
        p_op = m_op
    if m_op is None:
        m_op = p_op
    return p_op, m_op


def interface_strain_operator(segment, basis, nodal_phi):
    """Row vector mapping element dofs to the tangential strain eps_s.

    The displacement is continuous across a coherent interface, so the
    tangential strain along a straight segment is the stretch of the
    displacement trace between its endpoints: eps_s = t . (u(b) - u(a)) / L.
    This needs only shape-function values, never derivatives, and ties the
    interface energy directly to the bulk approximation.
    """
    ends = np.vstack([segment.a, segment.b])
    N = basis.eval(ends)
    if nodal_phi is not None:
        F = basis.enrichment(ends, nodal_phi)
        N = np.hstack([N, F[:, None] * N])
    ds = (N[1] - N[0]) / segment.length
    t1, t2 = segment.tangent
    g = np.empty(2 * N.shape[1])
    g[0::2] = ds * t1
    g[1::2] = ds * t2
    return g


def interface_stiffness_and_residual(segment, operator, interface):
    """Interface elasticity blocks on the element dofs of one segment.

    Stiffness  integral of l_s g^T g dS; residual load -integral of
    tau_s g^T dS with g the tangential-strain row (constant per segment).
    """
    L = segment.length
    K = (L * interface.l_s) * np.outer(operator, operator)
    f = (-L * interface.tau_s) * operator
    return K, f


def eigenstrain_load(op, stiffness, eigenstrain):
    """Equivalent nodal load of a misfit eigenstrain on one particle cell."""
    return op.area * (op.B.T @ (stiffness @ eigenstrain))


def strain_energy_density(strain, stiffness, eigenstrain=None):
    e = strain if eigenstrain is None else strain - eigenstrain
    return 0.5 * float(e @ (stiffness @ e))


class EnergyBreakdown:
    __slots__ = ("bulk", "interface", "external", "total")

    def __init__(self, bulk, interface, external):
        self.bulk = bulk
        self.interface = interface
        self.external = external
        self.total = bulk + interface - external

    def __repr__(self):
        return (f"EnergyBreakdown(bulk={self.bulk:.6e}, interface={self.interface:.6e}, "
                f"external={self.external:.6e}, total={self.total:.6e})")


def total_energy(solution):
    """Bulk + interface potential of a solved state (external work zero for
    pure displacement loading)."""
    mats = solution.materials
    eig = mats.eigenstrain
    table = solution.table
    U_bulk = 0.0
    if getattr(table, "template_ops", None) is not None and len(table.uncut_ids):
        # all uncut elements share one operator stack; integrate them in bulk
        elems = solution.mesh.elements[table.uncut_ids]
        dofs = np.empty((len(elems), 8), dtype=np.int64)
        dofs[:, 0::2] = 2 * elems
        dofs[:, 1::2] = 2 * elems + 1
        Q = solution.u[dofs]
        strains = np.einsum("cij,ej->eci", table.template_B, Q)
        phase = table.uncut_phase[table.uncut_ids]
        for ph, C, shift in ((1, mats.matrix.C, None), (-1, mats.particle.C, eig)):
            sel = strains[phase == ph]
            if not len(sel):
                continue
            if shift is not None:
                sel = sel - shift[None, None, :]
            dens = 0.5 * np.einsum("eci,ij,ecj->ec", sel, C, sel)
            U_bulk += float(np.sum(dens @ table.template_areas))
        remaining = table.cut_ids
    else:
        remaining = range(solution.mesh.n_elements)
    for e in remaining:
        q = solution.element_dof_values(e)
        for op in solution.table.ops_of(e):
            strain = op.B @ q
            if op.phase < 0:
                U_bulk += op.area * strain_energy_density(strain, mats.particle.C, eig)
            else:
                U_bulk += op.area * strain_energy_density(strain, mats.matrix.C)
    inter = mats.interface
    U_int = 0.0
    for seg in solution.segments:
        q = solution.element_dof_values(seg.element)
        data = solution.table.data[seg.element]
        g = interface_strain_operator(seg, data.basis, data.nodal_phi)
        eps_s = float(g @ q)
        U_int += seg.length * (inter.gamma0 + inter.tau_s * eps_s + 0.5 * inter.l_s * eps_s**2)
    return EnergyBreakdown(U_bulk, U_int, 0.0)


def eshelby_normal_component(op, q, normal, stiffness, eigenstrain=None):
    """n . Sigma . n of one side, Sigma = w I - (grad u)^T sigma."""
    grad = op.G @ q  # (du1/dx, du1/dy, du2/dx, du2/dy)
    strain = np.array([grad[0], grad[3], grad[1] + grad[2]])
    el = strain if eigenstrain is None else strain - eigenstrain
    sv = stiffness @ el
    sigma = np.array([[sv[0], sv[2]], [sv[2], sv[1]]])
    G = grad.reshape(2, 2)
    w = 0.5 * float(el @ sv)
    return w - float((sigma @ normal) @ (G @ normal))


def _side_sigma(solution, point, phase, seg, stiffness, eigenstrain):
    """n.Sigma.n of one side, sampled at a standoff point when possible.

    Falls back to the nearest same-phase cell of the segment's own element
    when the standoff point leaves the domain or lands across the interface
    (thin features, domain boundary).
    """
    mesh = solution.mesh
    if np.all(point >= mesh.domain_min) and np.all(point <= mesh.domain_max):
        e = int(solution.mesh.element_containing(point[None, :])[0])
        op, op_phase = solution.op_at(e, point)
        if op_phase == phase:
            q = solution.element_dof_values(e)
            return eshelby_normal_component(op, q, seg.normal, stiffness, eigenstrain)
    cells = solution.table.cells_of(seg.element)
    ops = solution.table.ops_of(seg.element)
    p_op, m_op = nearest_phase_ops(cells, ops, seg.midpoint)
    op = p_op if phase < 0 else m_op
    q = solution.element_dof_values(seg.element)
    return eshelby_normal_component(op, q, seg.normal, stiffness, eigenstrain)


def configurational_speed(solution, gamma, standoff=1.0):
    """Driving force per interface quadrature point (before the area
    constraint): matrix-minus-particle jump of n.Sigma.n, less gamma*kappa.

    Each side's smoothed strain is sampled standoff*h away from the interface
    along the normal: the cell-constant strains immediately at the cut carry
    the largest discretization error, and their noise would drive spurious
    grid-scale interface motion.
    """
    mats = solution.materials
    kappa_nodes = ls.nodal_curvature(solution.field)
    # radii below two grid spacings are not resolvable; cap the feedback
    kappa_cap = 0.5 / solution.mesh.h
    delta = float(standoff) * solution.mesh.h
    speeds = []
    for seg in solution.segments:
        kq = ls._bilinear(solution.mesh, kappa_nodes, seg.qpoints)
        kq = np.clip(kq, -kappa_cap, kappa_cap)
        f = np.empty(len(seg.qpoints))
        for k, qp in enumerate(seg.qpoints):
            s_m = _side_sigma(solution, qp + delta * seg.normal, 1, seg,
                              mats.matrix.C, None)
            s_p = _side_sigma(solution, qp - delta * seg.normal, -1, seg,
                              mats.particle.C, mats.eigenstrain)
            f[k] = (s_m - s_p) - gamma * float(kq[k])
        speeds.append(f)
    return speeds
