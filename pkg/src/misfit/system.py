"""Degrees of freedom, global assembly and linear solves.

Standard displacement dofs come first (two per node, node-major), followed by
one enrichment dof pair for every node of a cut element. Enrichment columns
vanish identically outside cut elements, so uncut elements assemble pure 8x8
blocks. On uniform meshes all uncut elements are congruent and share a single
set of smoothing-cell operators, which makes global assembly O(n_elements)
with a small constant.
"""
from __future__ import annotations

import copy

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import physics
from .shapefn import WachspressBasis
from .smoothing import partition_element, smoothed_B


class AssemblyError(RuntimeError):
    pass


class SolveError(RuntimeError):
    pass


class Partitions:
    """Smoothing-cell grid per element class."""

    def __init__(self, standard=(2, 2), enriched=(4, 4)):
        self.standard = tuple(int(v) for v in standard)
        self.enriched = tuple(int(v) for v in enriched)


class DofMap:
    def __init__(self, mesh, field):
        phi = field.snapped()
        corner = phi[mesh.elements]
        self.mesh = mesh
        self.cut_elements = np.any(corner < 0, axis=1) & np.any(corner > 0, axis=1)
        if np.any(self.cut_elements):
            self.enriched_nodes = np.unique(mesh.elements[self.cut_elements].ravel())
        else:
            self.enriched_nodes = np.empty(0, dtype=np.int64)
        self.enriched_rank = np.full(mesh.n_nodes, -1, dtype=np.int64)
        self.enriched_rank[self.enriched_nodes] = np.arange(len(self.enriched_nodes))
        self.n_standard = 2 * mesh.n_nodes
        self.n_dofs = self.n_standard + 2 * len(self.enriched_nodes)

    def is_enriched(self, node):
        return self.enriched_rank[node] >= 0

    def element_dofs(self, e):
        nodes = self.mesh.elements[e]
        std = np.empty(8, dtype=np.int64)
        std[0::2] = 2 * nodes
        std[1::2] = 2 * nodes + 1
        if not self.cut_elements[e]:
            return std
        rank = self.enriched_rank[nodes]
        if np.any(rank < 0):
            raise AssemblyError("cut element with non-enriched node")
        enr = np.empty(8, dtype=np.int64)
        enr[0::2] = self.n_standard + 2 * rank
        enr[1::2] = self.n_standard + 2 * rank + 1
        return np.concatenate([std, enr])


def enumerate_dofs(mesh, field):
    return DofMap(mesh, field)


class ElementData:
    __slots__ = ("basis", "cells", "ops", "nodal_phi")

    def __init__(self, basis, cells, ops, nodal_phi):
        self.basis = basis
        self.cells = cells
        self.ops = ops
        self.nodal_phi = nodal_phi


class ElementTable:
    """Per-element smoothing data, shared across congruent uncut elements."""

    def __init__(self, mesh, field, dofmap, partitions):
        self.mesh = mesh
        self.partitions = partitions
        self.uniform = mesh.uniform
        phi = field.snapped()
        self.nodal_phi = phi
        cut = dofmap.cut_elements
        self.cut_ids = np.nonzero(cut)[0]
        self.uncut_ids = np.nonzero(~cut)[0]
        self.uncut_phase = np.where(phi[mesh.elements[:, 0]] < 0.0, -1, 1)
        self.uncut_phase[cut] = 0
        self.data = {}
        m, n = partitions.enriched
        for e in self.cut_ids:
            basis = WachspressBasis(mesh.element_coords(e))
            cells = partition_element(basis, phi[mesh.elements[e]], m, n, enriched=True)
            ops = [smoothed_B(c, basis, phi[mesh.elements[e]]) for c in cells]
            self.data[int(e)] = ElementData(basis, cells, ops, phi[mesh.elements[e]])

        self.template_ops = None
        if self.uniform:
            e0 = 0
            basis = WachspressBasis(
                mesh.nodes[mesh.elements[e0][0]] + np.array([
                    [0.0, 0.0], [mesh.dx, 0.0], [mesh.dx, mesh.dy], [0.0, mesh.dy]]))
            ms, ns = partitions.standard
            cells = partition_element(basis, None, ms, ns, enriched=False)
            ops = [smoothed_B(c, basis) for c in cells]
            self.template_cells = cells
            self.template_ops = ops
            self.template_B = np.stack([op.B for op in ops])
            self.template_areas = np.array([op.area for op in ops])
        else:
            ms, ns = partitions.standard
            for e in self.uncut_ids:
                basis = WachspressBasis(mesh.element_coords(e))
                phase_phi = phi[mesh.elements[e]]
                cells = partition_element(basis, phase_phi, ms, ns, enriched=False)
                ops = [smoothed_B(c, basis) for c in cells]
                self.data[int(e)] = ElementData(basis, cells, ops, phase_phi)

    def _uncut_ops(self, e):
        phase = int(self.uncut_phase[e])
        ops = []
        for op in self.template_ops:
            if op.phase != phase:
                op = copy.copy(op)
                op.phase = phase
            ops.append(op)
        return ops

    def ops_of(self, e):
        e = int(e)
        if e in self.data:
            return self.data[e].ops
        return self._uncut_ops(e)

    def cells_of(self, e):
        e = int(e)
        if e in self.data:
            return self.data[e].cells
        return self.template_cells

    def basis_of(self, e):
        e = int(e)
        if e in self.data:
            return self.data[e].basis
        return WachspressBasis(self.mesh.element_coords(e))


class LinearSystem:
    def __init__(self, K, f, mesh, field, dofmap, table, segments, contours, materials, partitions):
        self.K = K
        self.f = f
        self.mesh = mesh
        self.field = field
        self.dofmap = dofmap
        self.table = table
        self.segments = segments
        self.contours = contours
        self.materials = materials
        self.partitions = partitions
        self.constrained_dofs = np.empty(0, dtype=np.int64)
        self.constrained_values = np.empty(0)


def _element_stiffness(ops, materials, eigenstrain):
    nd = ops[0].B.shape[1]
    K = np.zeros((nd, nd))
    f = np.zeros(nd)
    for op in ops:
        C = materials.stiffness(op.phase)
        K += op.area * (op.B.T @ (C @ op.B))
        if op.phase < 0:
            f += physics.eigenstrain_load(op, C, eigenstrain)
    return 0.5 * (K + K.T), f


def assemble(mesh, field, dofmap, materials, partitions=None):
    """Assemble the global stiffness and load vector.

    Returns a LinearSystem carrying the element table and interface segments
    for later post-processing.
    """
    partitions = partitions or Partitions()
    table = ElementTable(mesh, field, dofmap, partitions)
    n = dofmap.n_dofs
    f = np.zeros(n)
    rows, cols, vals = [], [], []

    if len(table.cut_ids) > 0:
        segments, contours = physics.extract_interface_segments(mesh, field)
    else:
        segments, contours = [], []
    seg_by_elem = {}
    for s in segments:
        seg_by_elem.setdefault(s.element, []).append(s)

    elems = mesh.elements
    std_dofs = np.empty((mesh.n_elements, 8), dtype=np.int64)
    std_dofs[:, 0::2] = 2 * elems
    std_dofs[:, 1::2] = 2 * elems + 1

    if table.uniform:
        K_by_phase = {}
        f_particle = None
        for phase in (1, -1):
            ops = table._uncut_ops(table.uncut_ids[0]) if len(table.uncut_ids) else []
            ops = [copy.copy(op) for op in ops]
            for op in ops:
                op.phase = phase
            if ops:
                Kp, fp = _element_stiffness(ops, materials, materials.eigenstrain)
                K_by_phase[phase] = Kp
                if phase == -1:
                    f_particle = fp
        for phase in (1, -1):
            ids = table.uncut_ids[table.uncut_phase[table.uncut_ids] == phase]
            if len(ids) == 0 or phase not in K_by_phase:
                continue
            d = std_dofs[ids]
            rows.append(np.repeat(d, 8, axis=1).ravel())
            cols.append(np.tile(d, (1, 8)).ravel())
            vals.append(np.tile(K_by_phase[phase].ravel(), len(ids)))
            if phase == -1:
                np.add.at(f, d.ravel(), np.tile(f_particle, len(ids)))
    else:
        for e in table.uncut_ids:
            Ke, fe = _element_stiffness(table.ops_of(e), materials, materials.eigenstrain)
            d = std_dofs[e]
            rows.append(np.repeat(d, 8).ravel())
            cols.append(np.tile(d, 8).ravel())
            vals.append(Ke.ravel())
            np.add.at(f, d, fe)

    for e in table.cut_ids:
        data = table.data[int(e)]
        Ke, fe = _element_stiffness(data.ops, materials, materials.eigenstrain)
        for seg in seg_by_elem.get(int(e), []):
            g = physics.interface_strain_operator(seg, data.basis, data.nodal_phi)
            Ks, fs = physics.interface_stiffness_and_residual(
                seg, g, materials.interface)
            Ke += 0.5 * (Ks + Ks.T)
            fe += fs
        d = dofmap.element_dofs(e)
        rows.append(np.repeat(d, len(d)).ravel())
        cols.append(np.tile(d, len(d)).ravel())
        vals.append(Ke.ravel())
        np.add.at(f, d, fe)

    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
    K = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    K.sum_duplicates()
    return LinearSystem(K, f, mesh, field, dofmap, table, segments, contours, materials, partitions)


def apply_dirichlet(system, nodes, displacement):
    """Constrain the standard dofs of the given nodes.

    displacement : callable mapping an (M, 2) coordinate array to (M, 2)
        prescribed displacements, or a constant (2,) array.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    coords = system.mesh.nodes[nodes]
    if callable(displacement):
        vals = np.asarray(displacement(coords), dtype=float)
    else:
        vals = np.broadcast_to(np.asarray(displacement, dtype=float), (len(nodes), 2)).copy()
    if vals.shape != (len(nodes), 2):
        raise AssemblyError("displacement values must be (n_nodes, 2)")
    dofs = np.empty(2 * len(nodes), dtype=np.int64)
    dofs[0::2] = 2 * nodes
    dofs[1::2] = 2 * nodes + 1
    order = np.argsort(dofs)
    system.constrained_dofs = dofs[order]
    system.constrained_values = vals.reshape(-1)[order]
    return system


class Solution:
    """Solved displacement state plus everything needed to evaluate it."""

    def __init__(self, system, u):
        self.mesh = system.mesh
        self.field = system.field
        self.dofmap = system.dofmap
        self.table = system.table
        self.segments = system.segments
        self.contours = system.contours
        self.materials = system.materials
        self.partitions = system.partitions
        self.u = u

    def element_dof_values(self, e):
        return self.u[self.dofmap.element_dofs(e)]

    def displacement_at(self, e, points):
        """Displacement field evaluated inside element e."""
        e = int(e)
        basis = self.table.basis_of(e)
        N = basis.eval(points)
        q = self.element_dof_values(e)
        std = q[:8]
        ux = N @ std[0::2]
        uy = N @ std[1::2]
        if self.dofmap.cut_elements[e]:
            F = basis.enrichment(points, self.table.data[e].nodal_phi)
            FN = F[:, None] * N
            ux += FN @ q[8::2]
            uy += FN @ q[9::2]
        return np.column_stack([ux, uy])

    def strain_at(self, e, points):
        """Smoothed strain of the cell containing each point (Voigt)."""
        e = int(e)
        q = self.element_dof_values(e)
        points = np.atleast_2d(points)
        out = np.empty((len(points), 3))
        if self.dofmap.cut_elements[e] or not self.table.uniform:
            cells = self.table.cells_of(e)
            ops = self.table.ops_of(e)
            cents = np.array([c.centroid() for c in cells])
            for k, p in enumerate(points):
                idx = _containing_cell(cells, cents, p)
                out[k] = ops[idx].B @ q
        else:
            ms, ns = self.table.partitions.standard
            origin = self.mesh.nodes[self.mesh.elements[e][0]]
            rel = points - origin
            i = np.clip((rel[:, 0] / (self.mesh.dx / ms)).astype(int), 0, ms - 1)
            j = np.clip((rel[:, 1] / (self.mesh.dy / ns)).astype(int), 0, ns - 1)
            B = self.table.template_B
            for k in range(len(points)):
                out[k] = B[i[k] * ns + j[k]] @ q
        return out

    def cell_at(self, e, point):
        """Containing smoothing cell of a point: (strain, centroid, phase).

        The smoothed strain is constant per cell, so the centroid is the
        natural location to attach the returned value to.
        """
        e = int(e)
        q = self.element_dof_values(e)
        p = np.asarray(point, dtype=float)
        if self.dofmap.cut_elements[e] or not self.table.uniform:
            cells = self.table.cells_of(e)
            ops = self.table.ops_of(e)
            cents = np.array([c.centroid() for c in cells])
            idx = _containing_cell(cells, cents, p)
            return ops[idx].B @ q, cents[idx], cells[idx].phase
        ms, ns = self.table.partitions.standard
        origin = self.mesh.nodes[self.mesh.elements[e][0]]
        hx, hy = self.mesh.dx / ms, self.mesh.dy / ns
        i = min(max(int((p[0] - origin[0]) / hx), 0), ms - 1)
        j = min(max(int((p[1] - origin[1]) / hy), 0), ns - 1)
        cent = origin + [(i + 0.5) * hx, (j + 0.5) * hy]
        return (self.table.template_B[i * ns + j] @ q, cent,
                int(self.table.uncut_phase[e]))

    def op_at(self, e, point):
        """Smoothed operator of the containing cell of a point: (op, phase)."""
        e = int(e)
        p = np.asarray(point, dtype=float)
        ops = self.table.ops_of(e)
        if self.dofmap.cut_elements[e] or not self.table.uniform:
            cells = self.table.cells_of(e)
            cents = np.array([c.centroid() for c in cells])
            idx = _containing_cell(cells, cents, p)
            return ops[idx], cells[idx].phase
        ms, ns = self.table.partitions.standard
        origin = self.mesh.nodes[self.mesh.elements[e][0]]
        hx, hy = self.mesh.dx / ms, self.mesh.dy / ns
        i = min(max(int((p[0] - origin[0]) / hx), 0), ms - 1)
        j = min(max(int((p[1] - origin[1]) / hy), 0), ns - 1)
        return ops[i * ns + j], int(self.table.uncut_phase[e])


def _containing_cell(cells, centroids, p):
    best = None
    for idx, c in enumerate(cells):
        v = c.verts
        d = np.roll(v, -1, axis=0) - v
        rel = p[None, :] - v
        cr = d[:, 0] * rel[:, 1] - d[:, 1] * rel[:, 0]
        if np.all(cr >= -1e-12 * max(1.0, np.abs(v).max())):
            return idx
    # fall back to the nearest centroid (point on a shared edge or roundoff)
    return int(np.argmin(np.sum((centroids - p[None, :]) ** 2, axis=1)))


def solve(system, method="direct"):
    """Solve the constrained system and return a Solution.

    Rows and columns of constrained dofs are eliminated symmetrically; the
    reduced residual must come out below 1e-10 relative.
    """
    n = system.K.shape[0]
    u = np.zeros(n)
    cd = system.constrained_dofs
    u[cd] = system.constrained_values
    free = np.ones(n, dtype=bool)
    free[cd] = False
    rhs = system.f - system.K @ u
    K_ff = system.K[free][:, free].tocsc()
    b = rhs[free]
    if method == "direct":
        try:
            lu = spla.splu(K_ff)
            x = lu.solve(b)
        except RuntimeError as err:
            diag = K_ff.diagonal()
            raise SolveError(
                f"factorization failed: {err}; diag range [{np.abs(diag).min():.3e}, "
                f"{np.abs(diag).max():.3e}]") from err
    elif method == "cg":
        M = sp.diags(1.0 / np.maximum(K_ff.diagonal(), 1e-300))
        x, info = spla.cg(K_ff, b, rtol=1e-13, atol=0.0, maxiter=20 * K_ff.shape[0], M=M)
        if info != 0:
            raise SolveError(f"conjugate gradients did not converge (info={info})")
    else:
        raise SolveError(f"unknown solve method '{method}'")
    if not np.all(np.isfinite(x)):
        raise SolveError("solver produced non-finite values (singular system?)")
    scale = np.linalg.norm(b)
    resid = np.linalg.norm(K_ff @ x - b)
    if resid > 1e-10 * max(scale, 1e-300) and resid > 1e-14:
        raise SolveError(f"linear solve residual too large: {resid:.3e} (rhs norm {scale:.3e})")
    u[free] = x
    return Solution(system, u)


def export_system(system, stem):
    """Write K and f in Matrix Market format as <stem>_K.mtx / <stem>_f.mtx."""
    scipy.io.mmwrite(f"{stem}_K.mtx", system.K.tocoo())
    scipy.io.mmwrite(f"{stem}_f.mtx", sp.coo_matrix(system.f[:, None]))
    return f"{stem}_K.mtx", f"{stem}_f.mtx"


def solve_state(mesh, field, materials, partitions=None, dirichlet=None, method="direct"):
    """Convenience driver: enumerate dofs, assemble, constrain, solve."""
    dofmap = enumerate_dofs(mesh, field)
    system = assemble(mesh, field, dofmap, materials, partitions)
    if dirichlet is None:
        dirichlet = np.zeros(2)
    apply_dirichlet(system, mesh.boundary_nodes(), dirichlet)
    return solve(system, method=method)
