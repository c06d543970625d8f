"""Artifact writers: legacy ASCII VTK snapshots and self-describing CSV tables.

All writers are deterministic: fixed float formatting, fixed iteration order,
and no timestamps, so repeated runs of the same configuration produce
bit-identical files.
"""

import hashlib

import numpy as np

from . import physics


def config_hash(text):
    """Short content hash used to stamp output files.

    Line endings are normalized so the same config written on different
    platforms hashes identically.
    """
    canon = "\n".join(str(text).splitlines())
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def _fmt(value):
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".12g")


def write_csv(path, columns, rows, meta=None):
    """Write a CSV table with a commented self-describing header.

    meta maps header keys to values; each becomes a ``# key: value`` line
    ahead of the column row.
    """
    lines = []
    for key, value in (meta or {}).items():
        lines.append(f"# {key}: {value}")
    lines.append(",".join(columns))
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(f"row width {len(row)} != {len(columns)} columns")
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def element_energy_density(solution):
    """Cell-averaged bulk strain energy per unit area, one value per element."""
    mats = solution.materials
    out = np.zeros(solution.mesh.n_elements)
    for e in range(solution.mesh.n_elements):
        q = solution.element_dof_values(e)
        acc = 0.0
        area = 0.0
        for op in solution.table.ops_of(e):
            if op.phase < 0:
                w = physics.strain_energy_density(op.B @ q, mats.particle.C,
                                                  mats.eigenstrain)
            else:
                w = physics.strain_energy_density(op.B @ q, mats.matrix.C)
            acc += op.area * w
            area += op.area
        out[e] = acc / area
    return out


def element_phase(solution):
    """Per-element phase marker: -1 particle, +1 matrix, 0 cut."""
    return solution.table.uncut_phase.copy()


def nodal_displacement(solution):
    """Standard displacement dofs per node; enrichment vanishes at nodes."""
    n = solution.mesh.n_nodes
    return solution.u[: 2 * n].reshape(n, 2)


def write_vtk(path, mesh, point_data=None, cell_data=None, title="misfit state",
              length_scale=1.0):
    """Write the mesh and attached fields as a legacy ASCII VTK unstructured grid.

    point_data and cell_data map names to arrays; (n, 2) arrays become 3-vector
    fields with zero z, 1-D float arrays scalars, integer arrays int scalars.
    length_scale multiplies node coordinates on output.
    """
    lines = ["# vtk DataFile Version 3.0", str(title), "ASCII",
             "DATASET UNSTRUCTURED_GRID"]
    nodes = mesh.nodes * float(length_scale)
    lines.append(f"POINTS {mesh.n_nodes} double")
    for x, y in nodes:
        lines.append(f"{_fmt(x)} {_fmt(y)} 0")
    lines.append(f"CELLS {mesh.n_elements} {5 * mesh.n_elements}")
    for quad in mesh.elements:
        lines.append("4 " + " ".join(str(int(i)) for i in quad))
    lines.append(f"CELL_TYPES {mesh.n_elements}")
    lines.extend(["9"] * mesh.n_elements)

    def emit(block, size, data):
        lines.append(f"{block} {size}")
        for name, arr in data.items():
            arr = np.asarray(arr)
            if arr.shape[0] != size:
                raise ValueError(f"field {name!r} has {arr.shape[0]} entries, expected {size}")
            if arr.ndim == 2:
                lines.append(f"VECTORS {name} double")
                for vx, vy in arr:
                    lines.append(f"{_fmt(vx)} {_fmt(vy)} 0")
            elif np.issubdtype(arr.dtype, np.integer):
                lines.append(f"SCALARS {name} int 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(str(int(v)) for v in arr)
            else:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(_fmt(v) for v in arr)

    if point_data:
        emit("POINT_DATA", mesh.n_nodes, point_data)
    if cell_data:
        emit("CELL_DATA", mesh.n_elements, cell_data)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_state_vtk(path, solution, title="misfit state", length_scale=1.0,
                    displacement_scale=1.0, energy_scale=1.0):
    """Snapshot a solved state: displacement and level set at nodes, phase and
    energy density per element."""
    point_data = {
        "displacement": nodal_displacement(solution) * float(displacement_scale),
        "phi": solution.field.phi * float(length_scale),
    }
    cell_data = {
        "phase": element_phase(solution),
        "energy_density": element_energy_density(solution) * float(energy_scale),
    }
    write_vtk(path, solution.mesh, point_data, cell_data, title=title,
              length_scale=length_scale)


def write_contours_csv(path, contours, meta=None, length_scale=1.0):
    """Dump interface polylines as (contour, vertex, x, y, closed) rows."""
    rows = []
    for ci, contour in enumerate(contours):
        for vi, (x, y) in enumerate(contour.verts):
            rows.append((ci, vi, x * length_scale, y * length_scale,
                         int(contour.closed)))
    write_csv(path, ["contour", "vertex", "x", "y", "closed"], rows, meta)
