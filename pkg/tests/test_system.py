"""Dof bookkeeping, assembly, and the solved displacement field."""

import numpy as np
import pytest

from misfit import levelset, mesh as meshmod, physics, system, verify


def _uncut_setup(nx=6):
    m = meshmod.build_structured_mesh((0.0, 0.0), (1.0, 1.0), nx, nx)
    field = levelset.LevelSetField(m, np.full(m.n_nodes, 1.0))
    return m, field


def _cut_setup(nx=16, R=0.55, half=1.0):
    m = meshmod.build_structured_mesh((-half, -half), (half, half), nx, nx)
    field = levelset.init_signed_distance_circles(m, [((0.0, 0.0), R)])
    return m, field


def _homogeneous_materials(eigenstrain=(0.0, 0.0, 0.0)):
    bulk = physics.BulkMaterial.from_lame(2.0, 1.0)
    return physics.MaterialSet(bulk, bulk, np.asarray(eigenstrain),
                               physics.InterfaceMaterial(0.0))


def test_dof_counts_uncut():
    m, field = _uncut_setup()
    dofmap = system.enumerate_dofs(m, field)
    assert dofmap.n_dofs == 2 * m.n_nodes
    assert not dofmap.cut_elements.any()
    assert not any(dofmap.is_enriched(n) for n in range(m.n_nodes))


def test_dof_counts_cut():
    m, field = _cut_setup()
    dofmap = system.enumerate_dofs(m, field)
    enriched = [n for n in range(m.n_nodes) if dofmap.is_enriched(n)]
    assert dofmap.cut_elements.any()
    assert len(enriched) > 0
    assert dofmap.n_dofs == 2 * m.n_nodes + 2 * len(enriched)
    # enriched nodes belong to cut elements only
    cut_nodes = set()
    for e in np.flatnonzero(dofmap.cut_elements):
        cut_nodes.update(m.elements[e])
    assert set(enriched) <= cut_nodes


def test_element_dofs_order():
    m, field = _cut_setup()
    dofmap = system.enumerate_dofs(m, field)
    e = int(np.flatnonzero(dofmap.cut_elements)[0])
    dofs = dofmap.element_dofs(e)
    assert len(dofs) == 16
    np.testing.assert_array_equal(
        dofs[:8], np.repeat(m.elements[e], 2) * 2 + np.tile([0, 1], 4))


def test_stiffness_symmetric_and_rigid_modes():
    m, field = _uncut_setup(nx=3)
    mats = _homogeneous_materials()
    dofmap = system.enumerate_dofs(m, field)
    lin = system.assemble(m, field, dofmap, mats)
    K = lin.K.toarray()
    assert np.abs(K - K.T).max() <= 1e-12 * np.abs(K).max()
    w = np.linalg.eigvalsh(K)
    # two translations and one rotation stay unconstrained before BCs
    assert (np.abs(w) < 1e-10 * w.max()).sum() == 3


def test_zero_load_zero_solution():
    m, field = _cut_setup()
    mats = _homogeneous_materials()
    sol = system.solve_state(m, field, mats,
                             dirichlet=lambda p: np.zeros_like(p))
    assert np.abs(sol.u).max() <= 1e-12


def test_patch_test_with_cut_interface():
    """Linear boundary data reproduces the linear field despite enrichment."""
    m, field = _cut_setup(nx=12)
    mats = _homogeneous_materials()
    A = np.array([[0.3, 0.1], [-0.2, 0.4]])
    sol = system.solve_state(m, field, mats, dirichlet=lambda p: p @ A.T)
    exact = m.nodes @ A.T
    uh = sol.u[:2 * m.n_nodes].reshape(-1, 2)
    assert np.abs(uh - exact).max() <= 1e-9
    sym = 0.5 * (A + A.T)
    expected = [sym[0, 0], sym[1, 1], 2 * sym[0, 1]]
    rng = np.random.default_rng(11)
    pts = rng.uniform(-0.9, 0.9, size=(40, 2))
    for e, p in zip(m.element_containing(pts), pts):
        eps = sol.strain_at(int(e), p[None, :])
        np.testing.assert_allclose(eps[0], expected, atol=1e-9)


def test_displacement_probe_matches_nodes():
    m, field = _cut_setup()
    mats = verify.benchmark_materials(misfit=0.01, tau_s=0.0, l_s=0.0)
    sol = system.solve_state(m, field, mats,
                             dirichlet=lambda p: np.zeros_like(p))
    n = 2 * m.nx + 3   # interior node id
    e = int(m.element_containing(m.nodes[n][None, :])[0])
    up = sol.displacement_at(e, m.nodes[n][None, :])[0]
    np.testing.assert_allclose(up, sol.u[2 * n:2 * n + 2], atol=1e-10)


def test_op_at_agrees_with_cell_lookup():
    m, field = _cut_setup(nx=14)
    mats = verify.benchmark_materials()
    sol = system.solve_state(m, field, mats,
                             dirichlet=lambda p: np.zeros_like(p))
    rng = np.random.default_rng(5)
    pts = rng.uniform(-0.95, 0.95, size=(30, 2))
    for p in pts:
        e = int(m.element_containing(p[None, :])[0])
        op, phase = sol.op_at(e, p)
        cells = sol.table.cells_of(e)
        ops = sol.table.ops_of(e)
        best = min(range(len(cells)),
                   key=lambda i: float(np.sum((cells[i].centroid() - p) ** 2)))
        assert phase == cells[best].phase
        np.testing.assert_allclose(op.B, ops[best].B, atol=1e-14)


def test_apply_dirichlet_enforces_values():
    m, field = _cut_setup(nx=10)
    mats = verify.benchmark_materials()
    g = lambda p: np.column_stack([0.01 * p[:, 0], -0.02 * p[:, 1]])
    sol = system.solve_state(m, field, mats, dirichlet=g)
    b = m.boundary_nodes()
    ub = sol.u[:2 * m.n_nodes].reshape(-1, 2)[b]
    np.testing.assert_allclose(ub, g(m.nodes[b]), atol=1e-12)


def test_misfitting_circle_energy_regression():
    """Pinned zero-boundary energies for the standard benchmark state."""
    mats = verify.benchmark_materials()
    m, field, _ = verify.circular_state(50, materials=mats)
    sol = system.solve_state(m, field, mats,
                             dirichlet=lambda p: np.zeros_like(p))
    eb = physics.total_energy(sol)
    assert eb.bulk == pytest.approx(6.899860144143e-01, rel=1e-8)
    assert eb.interface == pytest.approx(-1.648601930309e-01, rel=1e-8)
    assert eb.total == pytest.approx(5.251258213834e-01, rel=1e-8)


def test_solver_rejects_singular_system():
    m, field = _uncut_setup(nx=3)
    mats = _homogeneous_materials()
    dofmap = system.enumerate_dofs(m, field)
    lin = system.assemble(m, field, dofmap, mats)
    with pytest.raises(system.SolveError):
        system.solve(lin)   # no Dirichlet data, rigid modes unconstrained
