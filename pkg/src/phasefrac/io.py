"""Output writers: load-deflection CSV, mesh diagnostics CSV and legacy VTK."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable

import numpy as np

LOAD_DEFLECTION_HEADER = ("step", "U_mm", "Fx_kN", "Fy_kN", "newton_iters", "min_d")
MMPDE_HEADER = ("step", "I_h", "eq_max", "ali_max", "min_area", "ode_steps")


class OutputExistsError(FileExistsError):
    pass


def prepare_output_dir(path, overwrite: bool = False) -> Path:
    """Create ``path``; refuse a non-empty existing directory unless ``overwrite``."""
    path = Path(path)
    if path.exists():
        if not path.is_dir():
            raise OutputExistsError(f"output path {path} exists and is not a directory")
        if any(path.iterdir()) and not overwrite:
            raise OutputExistsError(f"output directory {path} is not empty (use --overwrite)")
    path.mkdir(parents=True, exist_ok=True)
    probe = path / ".write-test"
    try:
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise PermissionError(f"output directory {path} is not writable: {exc}") from exc
    return path


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def load_deflection_row(rec) -> list[str]:
    return [_fmt(rec.step), _fmt(rec.U), _fmt(rec.Fx), _fmt(rec.Fy),
            _fmt(rec.newton_iters), _fmt(rec.min_d)]


def mmpde_row(rec) -> list[str]:
    return [_fmt(rec.step), _fmt(rec.mesh_energy), _fmt(rec.eq_max), _fmt(rec.ali_max),
            _fmt(rec.min_area), _fmt(rec.ode_steps)]


class CsvStream:
    """Append rows to a CSV file, flushing after each one."""

    def __init__(self, path, header: Iterable[str]):
        self.path = Path(path)
        self._fh = self.path.open("w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(header)
        self._fh.flush()

    def write(self, row) -> None:
        self._writer.writerow(row)
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_load_deflection(path, records) -> Path:
    with CsvStream(path, LOAD_DEFLECTION_HEADER) as out:
        for rec in records:
            out.write(load_deflection_row(rec))
    return Path(path)


def write_mmpde_diagnostics(path, records) -> Path:
    with CsvStream(path, MMPDE_HEADER) as out:
        for rec in records:
            out.write(mmpde_row(rec))
    return Path(path)


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(x) for x in r] for r in body]) if body else np.zeros((0, len(header)))
    return header, data


def snapshot_name(step: int) -> str:
    return f"fields_{step:05d}.vtk"


def write_vtk(path, mesh, point_data: dict, title: str = "phase-field snapshot") -> Path:
    """Legacy ASCII VTK unstructured grid of triangles.

    ``point_data`` maps names to arrays of length ``N_v`` (scalars) or
    ``(N_v, 2)`` (vectors, written with a zero z-component).
    """
    path = Path(path)
    nv, ne = mesh.n_vertices, mesh.n_elements
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {nv} double"]
    lines += [f"{x!r} {y!r} 0.0" for x, y in mesh.vertices.tolist()]
    lines.append(f"CELLS {ne} {4 * ne}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.elements.tolist()]
    lines.append(f"CELL_TYPES {ne}")
    lines += ["5"] * ne
    lines.append(f"POINT_DATA {nv}")
    for name, values in point_data.items():
        v = np.asarray(values, dtype=float)
        if v.shape[0] != nv:
            raise ValueError(f"point data {name!r} has {v.shape[0]} values, mesh has {nv} vertices")
        if v.ndim == 1:
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [repr(x) for x in v.tolist()]
        elif v.ndim == 2 and v.shape[1] == 2:
            lines.append(f"VECTORS {name} double")
            lines += [f"{a!r} {b!r} 0.0" for a, b in v.tolist()]
        else:
            raise ValueError(f"point data {name!r} must be scalar or 2-vector")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_snapshot(directory, snap) -> Path:
    data = {"d": snap.d, "H": snap.H, "u": snap.u, "von_mises": snap.von_mises}
    return write_vtk(Path(directory) / snapshot_name(snap.step), snap.mesh, data,
                     title=f"step {snap.step} U {snap.U!r}")


def read_vtk(path) -> dict:
    """Parse a file written by :func:`write_vtk` into points, cells and point data."""
    tokens = Path(path).read_text().split("\n")
    out: dict = {"point_data": {}}
    i = 0
    while i < len(tokens):
        line = tokens[i].strip()
        if line.startswith("POINTS"):
            n = int(line.split()[1])
            out["points"] = np.array([[float(x) for x in t.split()] for t in tokens[i + 1:i + 1 + n]])
            i += n
        elif line.startswith("CELLS"):
            n = int(line.split()[1])
            out["cells"] = np.array([[int(x) for x in t.split()[1:]] for t in tokens[i + 1:i + 1 + n]])
            i += n
        elif line.startswith("SCALARS"):
            name = line.split()[1]
            n = len(out["points"])
            out["point_data"][name] = np.array([float(t) for t in tokens[i + 2:i + 2 + n]])
            i += n + 1
        elif line.startswith("VECTORS"):
            name = line.split()[1]
            n = len(out["points"])
            vals = np.array([[float(x) for x in t.split()] for t in tokens[i + 1:i + 1 + n]])
            out["point_data"][name] = vals[:, :2]
            i += n
        i += 1
    return out

