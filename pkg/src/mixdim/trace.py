"""Restriction of 3D P1 fields along segments and 1D partition machinery.

Tracing a segment yields an ordered list of sub-intervals, each owned by one
tetrahedron together with the affine map from arclength to barycentric
coordinates, so trace integrals reduce to composite 1D quadrature. Tracing is
independent per segment and the results are immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geom import GeometryError, Segment, TetMesh
from .quadrature import composite_gauss

_BARY_TOL = 1e-12
_MERGE_TOL = 1e-9
_MIDPOINT_TOL = 1e-9


@dataclass
class TraceCell:
    tet: int
    s_start: float
    s_end: float
    bary_start: np.ndarray
    bary_end: np.ndarray


@dataclass
class TraceDecomposition:
    """Per-segment covering of [0, S] by tetrahedron-owned sub-intervals."""

    segment_id: int
    breakpoints: np.ndarray
    cells: list[TraceCell]

    @property
    def crossing_count(self) -> int:
        """Number of interior breakpoints (face crossings of the segment)."""
        return max(len(self.breakpoints) - 2, 0)

    def cell_of(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(self.breakpoints, s, side="right") - 1
        return np.clip(idx, 0, len(self.cells) - 1)

    def p1_basis(self, mesh: TetMesh, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vertex indices (k, 4) and basis values (k, 4) of the traced 3D P1
        field at arclengths ``s``."""
        s = np.asarray(s, dtype=float)
        idx = self.cell_of(s)
        dofs = np.empty((len(s), 4), dtype=np.int64)
        vals = np.empty((len(s), 4), dtype=float)
        for c, cell in enumerate(self.cells):
            mask = idx == c
            if not mask.any():
                continue
            span = cell.s_end - cell.s_start
            t = (s[mask] - cell.s_start) / span
            vals[mask] = cell.bary_start[None, :] + t[:, None] * (
                cell.bary_end - cell.bary_start
            )[None, :]
            dofs[mask] = mesh.tets[cell.tet]
        return dofs, vals


def _barycentric_endpoints(
    mesh: TetMesh, tet_ids: np.ndarray, a: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    v = mesh.vertices[mesh.tets[tet_ids]]
    T = np.swapaxes(v[:, 1:] - v[:, :1], 1, 2)  # columns v_i - v_0
    rhs = np.stack(
        [np.broadcast_to(a - v[:, 0], (len(tet_ids), 3)),
         np.broadcast_to(b - v[:, 0], (len(tet_ids), 3))],
        axis=2,
    )
    lam = np.linalg.solve(T, rhs)  # (k, 3, 2)
    lam_a = np.concatenate([1.0 - lam[:, :, 0].sum(axis=1, keepdims=True), lam[:, :, 0]], axis=1)
    lam_b = np.concatenate([1.0 - lam[:, :, 1].sum(axis=1, keepdims=True), lam[:, :, 1]], axis=1)
    return lam_a, lam_b


def _clip_intervals(lam_a: np.ndarray, lam_b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per tet, the parameter interval [t0, t1] of the line kept inside it."""
    slope = lam_b - lam_a
    lo = np.zeros(lam_a.shape[0])
    hi = np.ones(lam_a.shape[0])
    for i in range(4):
        c0, c1 = lam_a[:, i], slope[:, i]
        crossing = (-_BARY_TOL - c0) / np.where(np.abs(c1) < 1e-300, 1.0, c1)
        pos = c1 > 1e-14
        neg = c1 < -1e-14
        flat = ~(pos | neg)
        lo = np.where(pos, np.maximum(lo, crossing), lo)
        hi = np.where(neg, np.minimum(hi, crossing), hi)
        infeasible = flat & (c0 < -_BARY_TOL)
        hi = np.where(infeasible, -1.0, hi)
    return lo, hi


def trace_segment(mesh: TetMesh, segment: Segment, tie_break: str = "low") -> TraceDecomposition:
    """Decompose a segment into tetrahedron-owned sub-intervals.

    Breakpoints are the parameters where the segment crosses tet boundaries.
    When a sub-interval lies on a shared face or edge, ownership goes to the
    lowest-index (or, with ``tie_break='high'``, highest-index) incident tet;
    P1 continuity makes the assembled integrals independent of that choice.
    """
    if tie_break not in ("low", "high"):
        raise ValueError("tie_break must be 'low' or 'high'")
    a, b = segment.a, segment.b
    length = segment.length

    vmin, vmax = mesh.bounding_box()
    pad = 1e-12 * float(np.linalg.norm(vmax - vmin)) + 1e-12
    seg_lo = np.minimum(a, b) - pad
    seg_hi = np.maximum(a, b) + pad
    v = mesh.vertices[mesh.tets]
    cand = np.where(
        np.all(v.max(axis=1) >= seg_lo, axis=1) & np.all(v.min(axis=1) <= seg_hi, axis=1)
    )[0]
    if len(cand) == 0:
        raise GeometryError(f"segment {segment.id} lies outside the mesh")

    lam_a, lam_b = _barycentric_endpoints(mesh, cand, a, b)
    lo, hi = _clip_intervals(lam_a, lam_b)
    keep = hi - lo > _MERGE_TOL
    cand, lam_a, lam_b, lo, hi = cand[keep], lam_a[keep], lam_b[keep], lo[keep], hi[keep]
    if len(cand) == 0:
        raise GeometryError(f"segment {segment.id} lies outside the mesh")

    # Cluster interval endpoints; the cluster mean lands within rounding of
    # the exact crossing because the clip tolerance is far below the merge
    # tolerance.
    ts = np.concatenate([[0.0, 1.0], lo, hi])
    ts = np.sort(np.clip(ts, 0.0, 1.0))
    clusters = [[ts[0]]]
    for t in ts[1:]:
        if t - clusters[-1][-1] > _MERGE_TOL:
            clusters.append([t])
        else:
            clusters[-1].append(t)
    breaks = np.array([np.mean(c) for c in clusters])
    breaks[0], breaks[-1] = 0.0, 1.0

    pick = np.argmin if tie_break == "low" else np.argmax
    cells = []
    for k in range(len(breaks) - 1):
        t0, t1 = breaks[k], breaks[k + 1]
        tm = 0.5 * (t0 + t1)
        inside = np.where((lo <= tm + _MIDPOINT_TOL) & (hi >= tm - _MIDPOINT_TOL))[0]
        if len(inside) == 0:
            raise GeometryError(
                f"segment {segment.id} leaves the mesh near s={tm * length:.6g}"
            )
        j = inside[pick(cand[inside])]
        db = lam_b[j] - lam_a[j]
        cells.append(
            TraceCell(
                tet=int(cand[j]),
                s_start=t0 * length,
                s_end=t1 * length,
                bary_start=lam_a[j] + t0 * db,
                bary_end=lam_a[j] + t1 * db,
            )
        )
    return TraceDecomposition(segment.id, breaks * length, cells)


def locate_points(mesh: TetMesh, points: np.ndarray, tol: float = 1e-10):
    """Lowest-index containing tet and barycentric coordinates per point.

    Returns (tet indices, barycentric (k, 4)); the tet index is -1 for points
    outside the mesh. Brute force over tets, chunked to bound memory.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    v = mesh.vertices[mesh.tets]
    Tinv = np.linalg.inv(np.swapaxes(v[:, 1:] - v[:, :1], 1, 2))  # (nt, 3, 3)
    v0 = v[:, 0]
    found = np.full(len(points), -1, dtype=np.int64)
    bary = np.zeros((len(points), 4))
    chunk = max(1, int(4e6 / max(mesh.num_tets, 1)))
    for start in range(0, len(points), chunk):
        p = points[start : start + chunk]
        lam = np.einsum("tij,ptj->pti", Tinv, p[:, None, :] - v0[None, :, :])
        lam_full = np.concatenate([1.0 - lam.sum(axis=2, keepdims=True), lam], axis=2)
        ok = np.all(lam_full >= -tol, axis=2)
        has = ok.any(axis=1)
        first = np.argmax(ok, axis=1)
        idx = np.where(has, first, -1)
        found[start : start + chunk] = idx
        rows = np.where(has)[0]
        bary[start + rows] = lam_full[rows, first[rows]]
    return found, bary


# ---------------------------------------------------------------------------
# 1D partitions
# ---------------------------------------------------------------------------

PARTITION_ROLES = ("uhat", "psiD", "psiSigma")


@dataclass
class Partition1D:
    """Equally spaced nodes on [0, S] carrying piecewise-linear hat functions."""

    segment_id: int
    role: str
    nodes: np.ndarray

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def spacing(self) -> float:
        return float(self.nodes[1] - self.nodes[0])

    def hat_basis(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Node indices (k, 2) and hat values (k, 2) at arclengths ``s``."""
        s = np.asarray(s, dtype=float)
        i = np.clip(np.searchsorted(self.nodes, s, side="right") - 1, 0, len(self.nodes) - 2)
        t = (s - self.nodes[i]) / (self.nodes[i + 1] - self.nodes[i])
        dofs = np.stack([i, i + 1], axis=1)
        vals = np.stack([1.0 - t, t], axis=1)
        return dofs, vals

    def hat_basis_deriv(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = np.asarray(s, dtype=float)
        i = np.clip(np.searchsorted(self.nodes, s, side="right") - 1, 0, len(self.nodes) - 2)
        inv_h = 1.0 / (self.nodes[i + 1] - self.nodes[i])
        dofs = np.stack([i, i + 1], axis=1)
        vals = np.stack([-inv_h, inv_h], axis=1)
        return dofs, vals

    def interpolate(self, values: np.ndarray, s: np.ndarray) -> np.ndarray:
        return np.interp(np.asarray(s, dtype=float), self.nodes, values)


def build_partition(
    segment: Segment, role: str, delta: float, crossing_count: int
) -> Partition1D:
    """Uniform partition with max(2, round(delta * crossing_count)) nodes.

    ``crossing_count`` is the number of interior face crossings reported by
    the trace; halves round up.
    """
    if role not in PARTITION_ROLES:
        raise ValueError(f"role must be one of {PARTITION_ROLES}")
    if delta <= 0:
        raise ValueError("delta must be positive")
    if crossing_count < 1:
        raise ValueError("crossing_count must be >= 1")
    n_nodes = max(2, int(math.floor(delta * crossing_count + 0.5)))
    return Partition1D(segment.id, role, np.linspace(0.0, segment.length, n_nodes))


# ---------------------------------------------------------------------------
# Composite quadrature over merged breakpoints
# ---------------------------------------------------------------------------


@dataclass
class CompositeRule:
    """3-point Gauss rule per sub-interval of the merged breakpoint set.

    Exact for polynomials of degree 5 per sub-interval, comfortably above the
    degree-4 products that assembly produces. Gauss points never coincide with
    breakpoints, so piecewise-linear evaluation at them is unambiguous.
    """

    edges: np.ndarray
    points: np.ndarray
    weights: np.ndarray


def composite_rule(*breakpoint_lists: np.ndarray, npts: int = 3) -> CompositeRule:
    """Merge breakpoint lists and lay a Gauss rule on each sub-interval."""
    allpts = np.concatenate([np.asarray(b, dtype=float) for b in breakpoint_lists])
    allpts = np.sort(allpts)
    span = allpts[-1] - allpts[0]
    merge_tol = 1e-12 * max(span, 1.0)
    edges = [allpts[0]]
    for x in allpts[1:]:
        if x - edges[-1] > merge_tol:
            edges.append(float(x))
    edges = np.asarray(edges)
    points, weights = composite_gauss(edges, npts=npts)
    return CompositeRule(edges, points, weights)
