"""Field exporters: per-node CSV and legacy-ASCII VTK on the reference mesh.

Restricted fields are embedded back onto the full square before writing:
obstacle-interior and obstacle-boundary nodes carry the prescribed
temperature for the state, zero for the adjoint, and the control is zero
outside its support.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from .assembly import FemOperators
from .meshing import Mesh

_FMT = "%.17g"


def embed_state(ops: FemOperators, values, boundary_value=0.0):
    """Restricted-mesh free-dof field as a full reference-mesh array."""
    full = np.full(ops.n_reference, float(boundary_value))
    full[ops.restriction.free_to_reference] = values
    return full


def embed_control(ops: FemOperators, values):
    full = np.zeros(ops.n_reference)
    full[ops.restriction.node_map[ops.control_nodes]] = values
    return full


def embedded_fields(ops: FemOperators, z, q, p, u, obstacle_temperature=0.0):
    """Column dict for one time level, all on reference-mesh nodes."""
    return {
        "z": np.asarray(z, dtype=float),
        "q": embed_state(ops, q, boundary_value=obstacle_temperature),
        "p": embed_state(ops, p, boundary_value=0.0),
        "u": embed_control(ops, u),
    }


def write_csv_fields(path, mesh: Mesh, columns):
    """`node, x, y, <field...>` rows; full float precision for round trips."""
    names = list(columns)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "x", "y", *names])
        for idx in range(mesh.node_count):
            row = [idx, _FMT % mesh.nodes[idx, 0], _FMT % mesh.nodes[idx, 1]]
            row.extend(_FMT % columns[name][idx] for name in names)
            writer.writerow(row)


def read_csv_fields(path):
    """Inverse of :func:`write_csv_fields`; returns (xy, column dict)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = header[3:]
        xs, ys = [], []
        columns = {name: [] for name in names}
        for row in reader:
            xs.append(float(row[1]))
            ys.append(float(row[2]))
            for name, text in zip(names, row[3:]):
                columns[name].append(float(text))
    xy = np.column_stack([xs, ys])
    return xy, {name: np.asarray(vals) for name, vals in columns.items()}


def write_vtk_fields(path, mesh: Mesh, columns, title="thermocloak fields"):
    """Legacy-ASCII VTK unstructured grid with one scalar array per field."""
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title[:255] + "\n")
        fh.write("ASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.node_count} double\n")
        for x, y in mesh.nodes:
            fh.write(f"{_FMT % x} {_FMT % y} 0\n")
        m = mesh.element_count
        fh.write(f"CELLS {m} {4 * m}\n")
        for tri in mesh.triangles:
            fh.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n")
        fh.write(f"CELL_TYPES {m}\n")
        fh.write("\n".join(["5"] * m) + "\n")
        fh.write(f"POINT_DATA {mesh.node_count}\n")
        for name, values in columns.items():
            fh.write(f"SCALARS {name} double 1\n")
            fh.write("LOOKUP_TABLE default\n")
            fh.write("\n".join(_FMT % v for v in values) + "\n")


def export_fields(solution, ops: FemOperators, fmt, out_dir, prefix="fields",
                  obstacle_temperature=0.0, frames=None):
    """Write a steady solution or a trajectory to disk.

    Steady solutions produce one file per format; trajectories produce one
    file per requested frame index plus a `timeline.csv` iteration log.
    Returns the list of written paths.
    """
    if fmt not in ("csv", "vtk", "both"):
        raise ValueError("format must be 'csv', 'vtk' or 'both'")
    os.makedirs(out_dir, exist_ok=True)
    formats = ["csv", "vtk"] if fmt == "both" else [fmt]
    written = []

    def emit(tag, columns):
        for kind in formats:
            path = os.path.join(out_dir, f"{prefix}{tag}.{kind}")
            if kind == "csv":
                write_csv_fields(path, ops.mesh_un, columns)
            else:
                write_vtk_fields(path, ops.mesh_un, columns)
            written.append(path)

    if hasattr(solution, "grid"):  # trajectory
        grid = solution.grid
        indices = frames if frames is not None else [grid.steps]
        for k in indices:
            if not 0 <= k <= grid.steps:
                continue
            columns = embedded_fields(
                ops, solution.z[k], solution.q[k], solution.p[k], solution.u[k],
                obstacle_temperature=obstacle_temperature,
            )
            emit(f"_{k:04d}", columns)
        timeline = os.path.join(out_dir, f"{prefix}_timeline.csv")
        with open(timeline, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "cost", "merit", "grad_norm", "step"])
            for rec in solution.iterations:
                writer.writerow([rec.index, _FMT % rec.cost, _FMT % rec.merit,
                                 _FMT % rec.grad_norm, _FMT % rec.step])
        written.append(timeline)
    else:
        columns = embedded_fields(
            ops, solution.z, solution.q, solution.p, solution.u,
            obstacle_temperature=obstacle_temperature,
        )
        emit("", columns)
    return written


def write_matrix_coo(path, matrix, name="matrix"):
    """Coordinate-list text dump of a sparse (or dense) matrix, for debugging."""
    from scipy import sparse

    coo = sparse.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"{name} {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {_FMT % v}\n")


def read_matrix_coo(path):
    from scipy import sparse

    with open(path) as fh:
        header = fh.readline().split()
        n, m, nnz = int(header[1]), int(header[2]), int(header[3])
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        data = np.empty(nnz)
        for k in range(nnz):
            i, j, v = fh.readline().split()
            rows[k], cols[k], data[k] = int(i), int(j), float(v)
    return sparse.csr_matrix((data, (rows, cols)), shape=(n, m))


def write_report_csv(path, reports):
    """`report.csv` with one row per report entry (dicts of scalars)."""
    rows = [r.as_row() if hasattr(r, "as_row") else dict(r) for r in reports]
    if not rows:
        raise ValueError("no report rows to write")
    names = []
    for row in rows:
        for key in row:
            if key not in names:
                names.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=names)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
