"""Legacy ASCII VTK writers for the 3D field and the 1D network fields.

Chosen for universality; every value is printed with 17 significant digits so
reruns produce byte-identical artifacts.
"""

from __future__ import annotations

import numpy as np

from .assembly import BlockSystem
from .solution import Solution


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_vtk_3d(path, blocks: BlockSystem, solution: Solution, name: str = "U") -> None:
    """Unstructured tet grid with the solved pressure as point data."""
    mesh = blocks.mesh
    with open(path, "w") as fp:
        fp.write("# vtk DataFile Version 3.0\n")
        fp.write("3D field\n")
        fp.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fp.write(f"POINTS {mesh.num_vertices} double\n")
        for p in mesh.vertices:
            fp.write(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}\n")
        fp.write(f"CELLS {mesh.num_tets} {5 * mesh.num_tets}\n")
        for t in mesh.tets:
            fp.write(f"4 {t[0]} {t[1]} {t[2]} {t[3]}\n")
        fp.write(f"CELL_TYPES {mesh.num_tets}\n")
        fp.write("10\n" * mesh.num_tets)
        fp.write(f"POINT_DATA {mesh.num_vertices}\n")
        fp.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
        for v in solution.U_full:
            fp.write(_fmt(v) + "\n")


def write_vtk_1d(path, blocks: BlockSystem, solution: Solution) -> None:
    """Per-segment polylines sampled at the 1D solution nodes, carrying the
    1D solution and both interface fields (interpolated where needed)."""
    parts = blocks.uhat.partitions
    segments = blocks.network.segments
    counts = [p.num_nodes for p in parts]
    total = sum(counts)
    has_psi = bool(solution.PsiD)

    with open(path, "w") as fp:
        fp.write("# vtk DataFile Version 3.0\n")
        fp.write("1D network fields\n")
        fp.write("ASCII\nDATASET POLYDATA\n")
        fp.write(f"POINTS {total} double\n")
        for seg, part in zip(segments, parts):
            for p in seg.point(part.nodes):
                fp.write(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}\n")
        size = sum(c + 1 for c in counts)
        fp.write(f"LINES {len(segments)} {size}\n")
        offset = 0
        for c in counts:
            fp.write(" ".join([str(c)] + [str(offset + k) for k in range(c)]) + "\n")
            offset += c
        fp.write(f"POINT_DATA {total}\n")

        fp.write("SCALARS Uhat double 1\nLOOKUP_TABLE default\n")
        for values in solution.Uhat:
            for v in values:
                fp.write(_fmt(v) + "\n")

        for label, field in (("PsiD", "PsiD"), ("PsiSigma", "PsiSigma")):
            fp.write(f"SCALARS {label} double 1\nLOOKUP_TABLE default\n")
            for i, part in enumerate(parts):
                if has_psi:
                    src = blocks.psi_d if field == "PsiD" else blocks.psi_sigma
                    values = getattr(solution, field)[i]
                    sampled = src.partitions[i].interpolate(values, part.nodes)
                else:
                    sampled = np.zeros(part.num_nodes)
                for v in sampled:
                    fp.write(_fmt(v) + "\n")
