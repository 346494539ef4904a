"""Result writers: load-curve CSV and legacy-VTK field snapshots.

Both formats are plain ASCII with ``\\n`` line endings and locale-free
number formatting, so identical runs give byte-identical files.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .discretization import Mesh
from .solver import CurveRow, LoadCurve, Snapshot
from .splines import evaluate_grid

__all__ = [
    "CURVE_HEADER",
    "CurveWriter",
    "SampledField",
    "read_curve_csv",
    "sample_snapshot",
    "write_curve_csv",
    "write_vtk",
]

CURVE_HEADER = ("step", "applied_mm", "reaction_N", "cmod_mm", "iters", "status")


def _num(x: float) -> str:
    return "nan" if math.isnan(x) else "%.10e" % x


def _row(r: CurveRow) -> list[str]:
    return [str(int(r.step)), _num(r.applied_mm), _num(r.reaction_N), _num(r.cmod_mm),
            str(int(r.iters)), r.status]


class CurveWriter:
    """Append load-curve rows to a CSV file, flushing after every row.

    Use as a context manager; ``write`` matches the ``on_row`` callback of
    :func:`~pf4czm.solver.run_simulation`.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="", encoding="ascii")
        self._csv = csv.writer(self._fh, lineterminator="\n")
        self._csv.writerow(CURVE_HEADER)
        self._fh.flush()

    def write(self, row: CurveRow) -> None:
        self._csv.writerow(_row(row))
        self._fh.flush()

    __call__ = write

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_curve_csv(curve: LoadCurve, path) -> None:
    """Write ``curve`` with header ``step,applied_mm,reaction_N,cmod_mm,iters,status``."""
    with CurveWriter(path) as w:
        for r in curve.rows:
            w.write(r)


def read_curve_csv(path) -> LoadCurve:
    """Inverse of :func:`write_curve_csv`."""
    with open(path, newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CURVE_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        curve = LoadCurve()
        for rec in reader:
            curve.append(CurveRow(int(rec[0]), float(rec[1]), float(rec[2]),
                                  float(rec[3]), int(rec[4]), rec[5]))
    return curve


@dataclass
class SampledField:
    """Fields on a per-element visualization grid.

    Every element contributes ``s*s`` points (shared element edges are
    duplicated) and ``(s-1)**2`` quadrilaterals.
    """

    points: np.ndarray        # (m, 2) physical coordinates
    phi: np.ndarray           # (m,)
    displacement: np.ndarray  # (m, 2)
    cells: np.ndarray         # (c, 4) counter-clockwise point indices


def sample_snapshot(snapshot: Snapshot, mesh: Mesh, samples: int = 2) -> SampledField:
    """Evaluate ``u`` and ``phi`` of a snapshot on an ``samples x samples`` grid per element."""
    s = int(samples)
    if s < 2:
        raise ValueError("at least 2 samples per element direction are needed")
    if snapshot.u.shape != (mesh.n_u,) or snapshot.phi.shape != (mesh.n_active,):
        raise ValueError("snapshot does not match the mesh")
    kx, ke = mesh.patch.kv_xi.knots, mesh.patch.kv_eta.knots
    t = np.linspace(0.0, 1.0, s)
    pts, ph, disp = [], [], []
    for sx, se in zip(mesh.span_xi, mesh.span_eta):
        xis = kx[sx] + t * (kx[sx + 1] - kx[sx])
        etas = ke[se] + t * (ke[se + 1] - ke[se])
        ev = evaluate_grid(mesh.patch, sx, se, xis, etas)
        dofs = mesh.dof_map[ev.indices]
        pts.append(ev.x)
        ph.append(ev.N @ snapshot.phi[dofs[:, 2] - mesh.n_u])
        disp.append(np.stack([ev.N @ snapshot.u[dofs[:, 0]],
                              ev.N @ snapshot.u[dofs[:, 1]]], axis=1))
    # local quads of one element (xi fastest)
    i, j = np.meshgrid(np.arange(s - 1), np.arange(s - 1), indexing="xy")
    a = (i + s * j).ravel()
    local = np.stack([a, a + 1, a + s + 1, a + s], axis=1)
    offsets = s * s * np.arange(mesh.n_elements)
    cells = (offsets[:, None, None] + local[None]).reshape(-1, 4)
    return SampledField(np.concatenate(pts), np.concatenate(ph),
                        np.concatenate(disp), cells)


def write_vtk(snapshot: Snapshot, mesh: Mesh, path, samples: int = 2,
              title: str | None = None) -> SampledField:
    """Write a legacy ASCII VTK unstructured grid of quads.

    Point data: scalars ``phi`` and vectors ``displacement`` (z = 0).
    Returns the sampled field that was written.
    """
    f = sample_snapshot(snapshot, mesh, samples)
    m, c = len(f.points), len(f.cells)
    title = title or f"pf4czm step {snapshot.step} applied {snapshot.applied:.6e} mm"
    buf = io.StringIO()
    buf.write("# vtk DataFile Version 3.0\n")
    buf.write(title.replace("\n", " ")[:255] + "\n")
    buf.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
    buf.write(f"POINTS {m} double\n")
    for x, y in f.points:
        buf.write("%.10e %.10e 0\n" % (x, y))
    buf.write(f"CELLS {c} {5 * c}\n")
    for q in f.cells:
        buf.write("4 %d %d %d %d\n" % tuple(q))
    buf.write(f"CELL_TYPES {c}\n")
    buf.write("9\n" * c)
    buf.write(f"POINT_DATA {m}\n")
    buf.write("SCALARS phi double 1\nLOOKUP_TABLE default\n")
    for v in f.phi:
        buf.write("%.10e\n" % v)
    buf.write("VECTORS displacement double\n")
    for ux, uy in f.displacement:
        buf.write("%.10e %.10e 0\n" % (ux, uy))
    Path(path).write_text(buf.getvalue(), encoding="ascii", newline="\n")
    return f
