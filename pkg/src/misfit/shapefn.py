"""Rational shape functions on convex quadrilaterals, plus ridge enrichment.

The basis is built directly in global coordinates from the four edge-line
functions of the quad, so no isoparametric mapping or Jacobian enters any
downstream computation. On parallelograms the functions coincide with the
bilinear ones.
"""
from __future__ import annotations

import numpy as np


class GeometryError(ValueError):
    pass


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


class WachspressBasis:
    """Wachspress basis N_1..N_4 on a strictly convex CCW quad.

    Edge i runs from vertex i to vertex i+1 (mod 4) and carries the line
    function l_i(x) = cross(v_{i+1}-v_i, x-v_i), positive inside. Node I
    uses the wedge w_I = kappa_I * l_{I+1} * l_{I+2}; the kappa weights are
    fixed (up to common scale) by requiring N to vary linearly along every
    edge: kappa_i * l_{i+1}(v_i) = kappa_{i+1} * l_{i+3}(v_{i+1}).
    """

    def __init__(self, vertices, kappa=None):
        v = np.asarray(vertices, dtype=float)
        if v.shape != (4, 2):
            raise GeometryError("a quad needs four 2D vertices")
        self.vertices = v
        e = np.roll(v, -1, axis=0) - v
        scale = np.abs(e).max()
        if scale == 0.0:
            raise GeometryError("degenerate quad")
        turn = _cross(e, np.roll(e, -1, axis=0))
        if np.any(turn <= 1e-12 * scale**2):
            raise GeometryError("quad must be strictly convex and counter-clockwise")
        self._edge_dir = e
        if kappa is None:
            kappa = np.ones(4)
            lv = self._edge_lines(v)  # lv[I, i] = l_i(v_I)
            for i in range(3):
                kappa[i + 1] = kappa[i] * lv[i, (i + 1) % 4] / lv[(i + 1) % 4, (i + 3) % 4]
            closure = kappa[3] * lv[3, 0] / (kappa[0] * lv[0, 2])
            if abs(closure - 1.0) > 1e-9:
                raise GeometryError(f"edge-linearity conditions do not close (ratio {closure:.3e})")
        self.kappa = np.asarray(kappa, dtype=float)
        if np.any(self.kappa <= 0.0):
            raise GeometryError("kappa weights must be positive")

    def _edge_lines(self, pts):
        """l_i at each point, shape (Q, 4)."""
        p = np.atleast_2d(pts)
        rel = p[:, None, :] - self.vertices[None, :, :]
        return _cross(self._edge_dir[None, :, :], rel)

    def eval(self, pts):
        """Shape function values at points, shape (Q, 4)."""
        l = self._edge_lines(pts)
        w = self.kappa[None, :] * np.take(l, [1, 2, 3, 0], axis=1) * np.take(l, [2, 3, 0, 1], axis=1)
        denom = w.sum(axis=1)
        if np.any(denom <= 0.0):
            raise GeometryError("shape function denominator is non-positive (point outside quad?)")
        return w / denom[:, None]

    def enrichment(self, pts, nodal_phi):
        """Ridge function F = sum_I N_I |phi_I| - |sum_I N_I phi_I| at points."""
        phi = np.asarray(nodal_phi, dtype=float)
        N = self.eval(pts)
        return N @ np.abs(phi) - np.abs(N @ phi)

    def contains(self, pts, tol=1e-12):
        l = self._edge_lines(pts)
        scale = np.abs(l).max() + 1e-300
        return np.all(l >= -tol * scale, axis=1)
