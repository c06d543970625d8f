"""Deterministic CSV/VTK writers and field extraction."""

import numpy as np
import pytest

from misfit import io, levelset, mesh as meshmod, system, verify


def test_config_hash_normalizes_line_endings():
    text = "alpha = 1.4\nL = 10\n"
    h = io.config_hash(text)
    assert h == "8b6c5cb088ec"
    assert io.config_hash(text.replace("\n", "\r\n")) == h
    assert io.config_hash(text + "x = 1\n") != h


def test_fmt_values():
    assert io._fmt("label") == "label"
    assert io._fmt(True) == "1"
    assert io._fmt(3) == "3"
    assert io._fmt(0.25) == "0.25"
    assert io._fmt(1.0 / 3.0) == f"{1.0 / 3.0:.12g}"


def test_write_csv_roundtrip(tmp_path):
    p = tmp_path / "out.csv"
    io.write_csv(p, ["a", "b"], [[1, 2.5], [3, 0.1]], meta={"k": "v"})
    text = p.read_text()
    assert text.splitlines()[0] == "# k: v"
    assert text.splitlines()[1] == "a,b"
    data = np.loadtxt(p, delimiter=",", skiprows=2)
    np.testing.assert_allclose(data, [[1.0, 2.5], [3.0, 0.1]])


def test_write_csv_rejects_ragged_rows(tmp_path):
    with pytest.raises(ValueError):
        io.write_csv(tmp_path / "bad.csv", ["a", "b"], [[1.0]])


def test_write_csv_deterministic(tmp_path):
    rows = [[0.1 * k, "row"] for k in range(5)]
    p1, p2 = tmp_path / "one.csv", tmp_path / "two.csv"
    io.write_csv(p1, ["x", "tag"], rows, meta={"mode": "test"})
    io.write_csv(p2, ["x", "tag"], rows, meta={"mode": "test"})
    assert p1.read_bytes() == p2.read_bytes()


def _small_solution(nx=12):
    mats = verify.benchmark_materials()
    m, field, _ = verify.circular_state(nx, materials=mats)
    sol = system.solve_state(m, field, mats,
                             dirichlet=lambda p: np.zeros_like(p))
    return m, sol


def test_nodal_displacement_and_phase():
    m, sol = _small_solution()
    u = io.nodal_displacement(sol)
    assert u.shape == (m.n_nodes, 2)
    phase = io.element_phase(sol)
    assert phase.shape == (m.n_elements,)
    assert set(np.unique(phase)) <= {-1, 0, 1}
    assert (phase == 0).any()   # cut elements present


def test_element_energy_density_positive_outside():
    m, sol = _small_solution()
    w = io.element_energy_density(sol)
    assert w.shape == (m.n_elements,)
    assert np.isfinite(w).all()
    assert w.max() > 0.0


def test_write_vtk_structure(tmp_path):
    m, sol = _small_solution()
    p = tmp_path / "state.vtk"
    io.write_state_vtk(p, sol, title="unit test")
    lines = p.read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert "ASCII" in lines
    assert f"POINTS {m.n_nodes} double" in lines
    assert f"CELL_TYPES {m.n_elements}" in lines
    joined = "\n".join(lines)
    assert "VECTORS displacement double" in joined
    assert "SCALARS phi double" in joined
    assert "SCALARS phase int" in joined
    assert "SCALARS energy_density double" in joined


def test_write_vtk_deterministic(tmp_path):
    m, sol = _small_solution()
    a, b = tmp_path / "a.vtk", tmp_path / "b.vtk"
    io.write_state_vtk(a, sol)
    io.write_state_vtk(b, sol)
    assert a.read_bytes() == b.read_bytes()


def test_write_contours_csv(tmp_path):
    m, sol = _small_solution()
    p = tmp_path / "contours.csv"
    io.write_contours_csv(p, sol.contours, meta={"step": 0})
    lines = p.read_text().splitlines()
    assert lines[0] == "# step: 0"
    assert lines[1] == "contour,vertex,x,y,closed"
    n_rows = sum(len(c.verts) for c in sol.contours)
    assert len(lines) == 2 + n_rows


def test_contours_csv_length_scale(tmp_path):
    m, sol = _small_solution()
    p1 = tmp_path / "c1.csv"
    p5 = tmp_path / "c5.csv"
    io.write_contours_csv(p1, sol.contours)
    io.write_contours_csv(p5, sol.contours, length_scale=5.0)
    a = np.loadtxt(p1, delimiter=",", skiprows=1, usecols=(2, 3))
    b = np.loadtxt(p5, delimiter=",", skiprows=1, usecols=(2, 3))
    np.testing.assert_allclose(b, 5.0 * a, rtol=1e-12)
