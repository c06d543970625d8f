"""Analytic circular-inclusion benchmark, error norms, and scaling studies.

A misfitting circular particle in an infinite matrix with identical isotropic
phases admits a closed-form plane-strain solution u_r = a r inside and
u_r = b / r outside, with (a, b) fixed by displacement continuity and the
generalized Young-Laplace traction jump at the interface. The closed form is
cross-checked here against an independent 1D radial finite-difference oracle.
The infinite-matrix fields are imposed on a finite box through exact
Dirichlet data, so domain truncation never enters the error budget.
"""
import time

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import levelset
from . import mesh as meshmod
from . import physics
from . import system


class VerifyError(RuntimeError):
    pass


class CircularInclusionOracle:
    """Closed-form fields of the circular inclusion with interface stress.

    u_r = a r for r <= R and u_r = b / r outside; a and b solve the 2x2
    system built from displacement continuity and the traction jump
    sigma_rr(matrix) - sigma_rr(inclusion) = sigma_s / R with
    sigma_s = tau_s + l_s * u_r(R) / R.
    """

    def __init__(self, R, lam, mu, misfit, tau_s, l_s, a, b):
        self.R = float(R)
        self.lam = float(lam)
        self.mu = float(mu)
        self.misfit = float(misfit)
        self.tau_s = float(tau_s)
        self.l_s = float(l_s)
        self.a = float(a)
        self.b = float(b)

    def radial_displacement(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= self.R, self.a * r, self.b / np.maximum(r, 1e-300))

    def displacement(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        r = np.hypot(points[:, 0], points[:, 1])
        ur = self.radial_displacement(r)
        safe = np.where(r == 0.0, 1.0, r)
        out = points * (ur / safe)[:, None]
        out[r == 0.0] = 0.0
        return out

    def radial_strains(self, r):
        """(eps_rr, eps_tt) of the total strain at radius r."""
        r = np.asarray(r, dtype=float)
        inside = r <= self.R
        rr = np.where(inside, self.a, -self.b / np.maximum(r, 1e-300) ** 2)
        tt = np.where(inside, self.a, self.b / np.maximum(r, 1e-300) ** 2)
        return rr, tt

    def strain(self, points):
        """Total strain in Cartesian Voigt components (e11, e22, g12)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        r = np.hypot(points[:, 0], points[:, 1])
        rr, tt = self.radial_strains(r)
        safe = np.where(r == 0.0, 1.0, r)
        c = points[:, 0] / safe
        s = points[:, 1] / safe
        exx = rr * c * c + tt * s * s
        eyy = rr * s * s + tt * c * c
        gxy = 2.0 * (rr - tt) * c * s
        out = np.column_stack([exx, eyy, gxy])
        out[r == 0.0] = [self.a, self.a, 0.0]
        return out

    def interface_stress(self):
        return self.tau_s + self.l_s * self.a

    def jump_residual(self):
        """Traction-jump defect of the solved coefficients (should be ~0)."""
        s_rr_in = 2.0 * (self.lam + self.mu) * (self.a - self.misfit)
        s_rr_out = -2.0 * self.mu * self.b / self.R**2
        return s_rr_out - s_rr_in - self.interface_stress() / self.R


def oracle_solve(R, lam, mu, misfit, tau_s=0.0, l_s=0.0):
    """Solve the continuity / traction-jump system for (a, b)."""
    if mu <= 0.0 or 3.0 * lam + 2.0 * mu <= 0.0:
        raise VerifyError("moduli must satisfy mu > 0 and 3 lam + 2 mu > 0")
    A = np.array([
        [R, -1.0 / R],
        [-2.0 * (lam + mu) - l_s / R, -2.0 * mu / R**2],
    ])
    rhs = np.array([0.0, tau_s / R - 2.0 * (lam + mu) * misfit])
    try:
        a, b = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as err:
        raise VerifyError(f"singular interface system: {err}") from err
    oracle = CircularInclusionOracle(R, lam, mu, misfit, tau_s, l_s, a, b)
    scale = max(abs(a), abs(b) / R**2, 1e-300) * 2.0 * (lam + mu)
    if abs(oracle.jump_residual()) > 1e-12 * max(scale, 1.0):
        raise VerifyError("oracle self-check failed: traction jump residual")
    return oracle


def _one_sided_coeffs(h1, h2):
    c0 = -(2.0 * h1 + h2) / (h1 * (h1 + h2))
    c1 = (h1 + h2) / (h1 * h2)
    c2 = -h1 / (h2 * (h1 + h2))
    return c0, c1, c2


def radial_fd_oracle(R, lam, mu, misfit, tau_s=0.0, l_s=0.0,
                     n_inner=800, growth=1.015, extent_factor=400.0):
    """Brute-force 1D finite-difference solution of the radial ODE.

    Solves u'' + u'/r - u/r**2 = 0 on both sides of r = R on a graded grid,
    with the interface jump row enforcing the traction condition through
    one-sided second-order differences. Returns (r, u_r, interface index).
    """
    r_in = np.linspace(0.0, R, n_inner + 1)
    h = R / n_inner
    r_out = [R]
    step = h
    while r_out[-1] < extent_factor * R:
        r_out.append(r_out[-1] + step)
        step *= growth
    r = np.concatenate([r_in, r_out[1:]])
    k = n_inner
    n = len(r)
    rows, cols, vals = [], [], []
    rhs = np.zeros(n)

    def add(i, j, v):
        rows.append(i)
        cols.append(j)
        vals.append(v)

    add(0, 0, 1.0)
    add(n - 1, n - 1, 1.0)
    for i in range(1, n - 1):
        if i == k:
            continue
        hm = r[i] - r[i - 1]
        hp = r[i + 1] - r[i]
        ri = r[i]
        add(i, i - 1, 2.0 / (hm * (hm + hp)) - hp / (hm * (hm + hp)) / ri)
        add(i, i, -2.0 / (hm * hp) + (hp - hm) / (hm * hp) / ri - 1.0 / ri**2)
        add(i, i + 1, 2.0 / (hp * (hm + hp)) + hm / (hp * (hm + hp)) / ri)
    pw = lam + 2.0 * mu
    c0, c1, c2 = _one_sided_coeffs(r[k] - r[k - 1], r[k - 1] - r[k - 2])
    add(k, k, pw * c0)
    add(k, k - 1, pw * c1)
    add(k, k - 2, pw * c2)
    d0, d1, d2 = _one_sided_coeffs(r[k + 1] - r[k], r[k + 2] - r[k + 1])
    add(k, k, pw * d0)
    add(k, k + 1, pw * d1)
    add(k, k + 2, pw * d2)
    add(k, k, -l_s / R**2)
    rhs[k] = tau_s / R - 2.0 * (lam + mu) * misfit

    K = sp.csr_matrix(sp.coo_matrix((vals, (rows, cols)), shape=(n, n)))
    u = spla.spsolve(K, rhs)
    return r, u, k


def oracle_table(oracle, radii):
    """Tabulated (r, u_r, eps_rr, eps_tt, phase) rows at the given radii."""
    radii = np.asarray(radii, dtype=float)
    ur = oracle.radial_displacement(radii)
    rr, tt = oracle.radial_strains(radii)
    phase = np.where(radii <= oracle.R, -1, 1)
    return np.column_stack([radii, ur, rr, tt, phase])


def benchmark_materials(lam=58.17, mu=26.13, misfit=0.01, tau_s=-1.0,
                        l_s=10.0, gamma0=0.0):
    bulk = physics.BulkMaterial.from_lame(lam, mu)
    return physics.MaterialSet(bulk, bulk, [misfit, misfit, 0.0],
                               physics.InterfaceMaterial(gamma0, tau_s, l_s))


def circular_state(nx, R=5.0, half_width=7.5, materials=None, partitions=None):
    """Mesh, level set, and materials for the circular benchmark box."""
    if materials is None:
        materials = benchmark_materials()
    m = meshmod.build_structured_mesh((-half_width, -half_width),
                                      (half_width, half_width), nx, nx)
    field = levelset.init_signed_distance_circles(m, [((0.0, 0.0), R)])
    return m, field, materials


def _element_quadrature(mesh, e, order=4):
    """Midpoints of an order x order subgrid of a uniform element."""
    origin = mesh.nodes[mesh.elements[e][0]]
    hx, hy = mesh.dx / order, mesh.dy / order
    off = (np.arange(order) + 0.5)
    X, Y = np.meshgrid(origin[0] + off * hx, origin[1] + off * hy)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return pts, hx * hy


def error_norms(solution, oracle, order=4):
    """Relative displacement and energy error norms vs the oracle.

    Both integrals use a fixed order x order midpoint rule per element so the
    measure does not depend on the smoothing partition. The energy norm uses
    the phase-correct stiffness; the misfit offset cancels in the difference
    and is removed from the exact strain in the denominator.
    """
    mesh = solution.mesh
    if not mesh.uniform:
        raise VerifyError("error norms expect a uniform benchmark mesh")
    mats = solution.materials
    num_d = den_d = num_e = den_e = 0.0
    for e in range(mesh.n_elements):
        pts, w = _element_quadrature(mesh, e, order)
        uh = solution.displacement_at(e, pts)
        ux = oracle.displacement(pts)
        num_d += w * float(np.sum((uh - ux) ** 2))
        den_d += w * float(np.sum(ux**2))
        eh = solution.strain_at(e, pts)
        ee = oracle.strain(pts)
        r = np.hypot(pts[:, 0], pts[:, 1])
        inside = r <= oracle.R
        de = eh - ee
        el = ee.copy()
        el[inside] -= mats.eigenstrain
        for phase, C in ((-1, mats.particle.C), (1, mats.matrix.C)):
            sel = inside if phase < 0 else ~inside
            if not np.any(sel):
                continue
            num_e += w * float(np.einsum("ij,jk,ik->", de[sel], C, de[sel]))
            den_e += w * float(np.einsum("ij,jk,ik->", el[sel], C, el[sel]))
    e_d = np.sqrt(num_d / den_d) if den_d > 0 else np.sqrt(num_d)
    e_e = np.sqrt(num_e / den_e) if den_e > 0 else np.sqrt(num_e)
    return e_d, e_e


def run_circular_benchmark(nx, lam=58.17, mu=26.13, misfit=0.01, tau_s=-1.0,
                           l_s=10.0, R=5.0, half_width=7.5, partitions=None):
    """Solve the boxed circular-inclusion problem against the oracle."""
    oracle = oracle_solve(R, lam, mu, misfit, tau_s, l_s)
    materials = benchmark_materials(lam, mu, misfit, tau_s, l_s)
    m, field, _ = circular_state(nx, R, half_width, materials)
    t0 = time.perf_counter()
    dofmap = system.enumerate_dofs(m, field)
    lin = system.assemble(m, field, dofmap, materials, partitions)
    t_assemble = time.perf_counter() - t0
    system.apply_dirichlet(lin, m.boundary_nodes(), oracle.displacement)
    t0 = time.perf_counter()
    solution = system.solve(lin)
    t_solve = time.perf_counter() - t0
    e_d, e_e = error_norms(solution, oracle)
    return {
        "nx": nx,
        "h": m.dx,
        "oracle": oracle,
        "solution": solution,
        "e_d": e_d,
        "e_e": e_e,
        "t_assemble": t_assemble,
        "t_solve": t_solve,
    }


def _loglog_slope(x, y):
    return float(np.polyfit(np.log(np.asarray(x, dtype=float)),
                            np.log(np.asarray(y, dtype=float)), 1)[0])


def convergence_study(nx_list=(20, 40, 80, 160), tau_s=-1.0, l_s=10.0, **kw):
    """Error norms across mesh levels with fitted log-log rates."""
    nx_list = list(nx_list)
    if len(nx_list) < 3:
        raise VerifyError("convergence study needs at least 3 mesh levels")
    rows = []
    for nx in nx_list:
        out = run_circular_benchmark(nx, tau_s=tau_s, l_s=l_s, **kw)
        rows.append((out["h"], out["e_d"], out["e_e"]))
    h = np.array([r[0] for r in rows])
    e_d = np.array([r[1] for r in rows])
    e_e = np.array([r[2] for r in rows])
    return {
        "nx": np.array(nx_list),
        "h": h,
        "e_d": e_d,
        "e_e": e_e,
        "rate_d": _loglog_slope(h, e_d),
        "rate_e": _loglog_slope(h, e_e),
    }


def timing_study(nx_list=(20, 40, 80, 160), lam=58.17, mu=26.13, misfit=0.01,
                 tau_s=-1.0, l_s=10.0, R=5.0, half_width=7.5, repeats=1):
    """Global-matrix formation time vs element count with fitted slope."""
    nx_list = list(nx_list)
    if len(nx_list) < 4:
        raise VerifyError("timing study needs at least 4 sizes")
    counts = np.array([nx * nx for nx in nx_list], dtype=float)
    if np.log10(counts[-1] / counts[0]) < 1.5:
        raise VerifyError("timing sizes must span at least 1.5 decades")
    materials = benchmark_materials(lam, mu, misfit, tau_s, l_s)
    seconds = []
    for nx in nx_list:
        m, field, _ = circular_state(nx, R, half_width, materials)
        dofmap = system.enumerate_dofs(m, field)
        best = np.inf
        for _ in range(max(1, repeats)):
            t0 = time.perf_counter()
            system.assemble(m, field, dofmap, materials)
            best = min(best, time.perf_counter() - t0)
        seconds.append(best)
    seconds = np.array(seconds)
    return {
        "n_elements": counts.astype(int),
        "seconds": seconds,
        "slope": _loglog_slope(counts, seconds),
    }


def radial_profile(solution, oracle, theta=45.0, n=240, r_min=None, r_max=None):
    """Numerical vs exact u_r and eps_rr along a ray at angle theta (deg).

    Displacement is continuous and sampled pointwise. The smoothed strain is
    constant per cell, so each strain sample is attached to the centroid of
    the containing cell (its carrier point) and the exact value is taken on
    the side the cell belongs to; duplicate cells are dropped.
    """
    mesh = solution.mesh
    if r_min is None:
        r_min = 1.5 * mesh.dx
    if r_max is None:
        r_max = min(np.min(np.abs(mesh.domain_min)),
                    np.min(np.abs(mesh.domain_max))) - 0.5 * mesh.dx
    th = np.radians(float(theta))
    d = np.array([np.cos(th), np.sin(th)])
    radii = np.linspace(r_min, r_max, n)
    elems = mesh.element_containing(radii[:, None] * d[None, :])
    ur = np.empty(n)
    for i, r in enumerate(radii):
        ur[i] = float(solution.displacement_at(int(elems[i]), r * d)[0] @ d)
    ur_exact = oracle.radial_displacement(radii)

    seen = set()
    st, val, exact = [], [], []
    for r, e in zip(radii, elems):
        p = r * d
        strain, cent, phase = solution.cell_at(int(e), p)
        key = (e, round(cent[0], 12), round(cent[1], 12))
        if key in seen:
            continue
        seen.add(key)
        rc = float(np.hypot(*cent))
        rhat = cent / rc
        e_rr = (strain[0] * rhat[0] ** 2 + strain[1] * rhat[1] ** 2
                + strain[2] * rhat[0] * rhat[1])
        if phase < 0:
            ex = oracle.a
        else:
            ex = -oracle.b / rc**2
        st.append(rc)
        val.append(float(e_rr))
        exact.append(float(ex))
    order = np.argsort(st)
    return {
        "r_u": radii,
        "u_r": ur,
        "u_r_exact": ur_exact,
        "r_e": np.array(st)[order],
        "e_rr": np.array(val)[order],
        "e_rr_exact": np.array(exact)[order],
    }


def joint_profile(solution, oracle, theta=45.0, n=240):
    """Single profile table with u_r and eps_rr sharing the strain stations.

    Strain rows come from radial_profile; u_r is then re-sampled pointwise at
    those carrier radii so one row holds (r, u_r, u_r_exact, e_rr, e_rr_exact).
    """
    prof = radial_profile(solution, oracle, theta=theta, n=n)
    mesh = solution.mesh
    th = np.radians(float(theta))
    d = np.array([np.cos(th), np.sin(th)])
    radii = prof["r_e"]
    elems = mesh.element_containing(radii[:, None] * d[None, :])
    ur = np.array([float(solution.displacement_at(int(e), r * d)[0] @ d)
                   for r, e in zip(radii, elems)])
    return {
        "r": radii,
        "u_r": ur,
        "u_r_exact": oracle.radial_displacement(radii),
        "e_rr": prof["e_rr"],
        "e_rr_exact": prof["e_rr_exact"],
    }
