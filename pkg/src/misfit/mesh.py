"""Structured quadrilateral meshes and elementary geometry queries."""
from __future__ import annotations

import numpy as np


class MeshError(ValueError):
    pass


class Mesh:
    """Quadrilateral mesh with structured (nx by ny) topology.

    Nodes are numbered row-major with x running fastest; element (i, j)
    has id j*nx + i and counter-clockwise connectivity. Node coordinates
    may be perturbed away from the regular grid as long as every element
    stays strictly convex, in which case ``uniform`` is False and the
    fast point-location shortcuts are disabled.
    """

    def __init__(self, nodes, elements, nx, ny, domain_min, domain_max, uniform=False):
        self.nodes = np.asarray(nodes, dtype=float)
        self.elements = np.asarray(elements, dtype=np.int64)
        self.nx = int(nx)
        self.ny = int(ny)
        self.domain_min = np.asarray(domain_min, dtype=float)
        self.domain_max = np.asarray(domain_max, dtype=float)
        self.uniform = bool(uniform)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise MeshError("nodes must be (N, 2)")
        if self.elements.ndim != 2 or self.elements.shape[1] != 4:
            raise MeshError("elements must be (E, 4)")
        if self.elements.shape[0] != self.nx * self.ny:
            raise MeshError("element count does not match nx*ny")
        areas = self.signed_areas()
        if np.any(areas <= 0.0):
            bad = int(np.argmin(areas))
            raise MeshError(f"element {bad} is not counter-clockwise convex (signed area {areas[bad]:g})")

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    @property
    def dx(self):
        return (self.domain_max[0] - self.domain_min[0]) / self.nx

    @property
    def dy(self):
        return (self.domain_max[1] - self.domain_min[1]) / self.ny

    @property
    def h(self):
        """Representative grid spacing."""
        return min(self.dx, self.dy)

    @property
    def lattice_shape(self):
        """Shape of the nodal lattice, rows = y levels."""
        return (self.ny + 1, self.nx + 1)

    def element_coords(self, e):
        return self.nodes[self.elements[e]]

    def signed_areas(self):
        v = self.nodes[self.elements]
        x, y = v[..., 0], v[..., 1]
        return 0.5 * np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)

    def boundary_nodes(self):
        nxp, nyp = self.nx + 1, self.ny + 1
        idx = np.arange(nxp * nyp).reshape(nyp, nxp)
        return np.unique(np.concatenate([idx[0, :], idx[-1, :], idx[:, 0], idx[:, -1]]))

    def element_containing(self, points):
        """Locate points in the structured grid (uniform meshes only)."""
        if not self.uniform:
            raise MeshError("point location requires a uniform structured mesh")
        p = np.atleast_2d(np.asarray(points, dtype=float))
        fx = (p[:, 0] - self.domain_min[0]) / self.dx
        fy = (p[:, 1] - self.domain_min[1]) / self.dy
        i = np.clip(np.floor(fx).astype(np.int64), 0, self.nx - 1)
        j = np.clip(np.floor(fy).astype(np.int64), 0, self.ny - 1)
        out = (fx < -1e-9) | (fx > self.nx + 1e-9) | (fy < -1e-9) | (fy > self.ny + 1e-9)
        if np.any(out):
            raise MeshError("point outside the mesh domain")
        return j * self.nx + i


def build_structured_mesh(domain_min, domain_max, nx, ny):
    """Build a uniform structured quad mesh on [min, max] x [min, max].

    Parameters
    ----------
    domain_min, domain_max : (2,) float
        Opposite corners of the rectangular domain.
    nx, ny : int
        Number of elements per direction.
    """
    domain_min = np.asarray(domain_min, dtype=float)
    domain_max = np.asarray(domain_max, dtype=float)
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be positive")
    if np.any(domain_max <= domain_min):
        raise MeshError("domain_max must exceed domain_min componentwise")
    xs = np.linspace(domain_min[0], domain_max[0], nx + 1)
    ys = np.linspace(domain_min[1], domain_max[1], ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i = np.arange(nx)
    j = np.arange(ny)
    I, J = np.meshgrid(i, j)
    n0 = (J * (nx + 1) + I).ravel()
    elements = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])
    return Mesh(nodes, elements, nx, ny, domain_min, domain_max, uniform=True)
