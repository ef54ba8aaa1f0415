"""Tetrahedral box meshes and embedded 1D segment networks.

Meshes and networks are plain data containers, immutable by convention after
construction, so they can be shared read-only between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

BOUNDARY_TAGS = ("lateral", "top", "bottom", "other")

Coefficient = Union[float, Callable[[np.ndarray], np.ndarray]]


class MeshFormatError(ValueError):
    """A mesh or network file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MeshValidationError(ValueError):
    """Mesh connectivity violates a structural invariant."""


class GeometryError(ValueError):
    """Points or segments violate a geometric precondition."""


# ---------------------------------------------------------------------------
# 3D mesh
# ---------------------------------------------------------------------------


@dataclass
class TetMesh:
    """Tetrahedral mesh of the embedding box.

    ``h`` is the maximum edge length over all tetrahedra.  Tets are stored
    positively oriented; boundary faces carry one tag each from
    ``BOUNDARY_TAGS``.
    """

    vertices: np.ndarray
    tets: np.ndarray
    boundary_faces: np.ndarray
    boundary_tags: np.ndarray
    h: float

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_tets(self) -> int:
        return self.tets.shape[0]

    def tet_volumes(self) -> np.ndarray:
        v = self.vertices[self.tets]
        e = v[:, 1:] - v[:, :1]
        return np.linalg.det(e) / 6.0

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def _face_keys(faces: np.ndarray, nv: int) -> np.ndarray:
    fs = np.sort(faces, axis=1).astype(np.int64)
    return (fs[:, 0] * nv + fs[:, 1]) * nv + fs[:, 2]


def _max_edge_length(vertices: np.ndarray, tets: np.ndarray) -> float:
    pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    v = vertices[tets]
    best = 0.0
    for i, j in pairs:
        d = np.linalg.norm(v[:, i] - v[:, j], axis=1)
        best = max(best, float(d.max()))
    return best


def make_mesh(
    vertices: np.ndarray,
    tets: np.ndarray,
    boundary_faces: np.ndarray | None = None,
    boundary_tags: np.ndarray | None = None,
) -> TetMesh:
    """Build a validated, canonically oriented mesh.

    Tets with negative signed volume get their last two vertices swapped.
    Every interior face must be shared by exactly two tets and every boundary
    face by exactly one; the declared boundary faces must match the ones
    derived from connectivity.
    """
    vertices = np.ascontiguousarray(vertices, dtype=float)
    tets = np.ascontiguousarray(tets, dtype=np.int64)
    nv = vertices.shape[0]
    if tets.size and (tets.min() < 0 or tets.max() >= nv):
        raise MeshValidationError("tet references a vertex index out of range")

    v = vertices[tets]
    vol = np.linalg.det(v[:, 1:] - v[:, :1]) / 6.0
    flip = vol < 0
    if flip.any():
        tets = tets.copy()
        tets[flip, 2], tets[flip, 3] = tets[flip, 3].copy(), tets[flip, 2].copy()
        vol = np.abs(vol)
    if np.any(vol <= 0):
        raise MeshValidationError("degenerate tetrahedron with zero volume")

    local_faces = tets[:, [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]].reshape(-1, 3)
    keys = _face_keys(local_faces, nv)
    uniq, counts = np.unique(keys, return_counts=True)
    if counts.max(initial=0) > 2:
        raise MeshValidationError("a face is shared by more than two tetrahedra")
    derived_boundary = uniq[counts == 1]

    if boundary_faces is None:
        # Recover representative vertex triples for the derived boundary keys.
        order = np.argsort(keys, kind="stable")
        sorted_keys = keys[order]
        pos = np.searchsorted(sorted_keys, derived_boundary)
        boundary_faces = local_faces[order[pos]]
        boundary_tags = np.full(len(boundary_faces), "other", dtype="U8")
    else:
        boundary_faces = np.ascontiguousarray(boundary_faces, dtype=np.int64)
        if boundary_faces.size and (boundary_faces.min() < 0 or boundary_faces.max() >= nv):
            raise MeshValidationError("boundary face references a vertex index out of range")
        declared = np.sort(_face_keys(boundary_faces, nv))
        if declared.shape != derived_boundary.shape or not np.array_equal(
            declared, derived_boundary
        ):
            raise MeshValidationError(
                "declared boundary faces do not match mesh connectivity"
            )
        if boundary_tags is None:
            boundary_tags = np.full(len(boundary_faces), "other", dtype="U8")
        boundary_tags = np.asarray(boundary_tags, dtype="U8")
        bad = set(boundary_tags.tolist()) - set(BOUNDARY_TAGS)
        if bad:
            raise MeshValidationError(f"unknown boundary tags: {sorted(bad)}")

    h = _max_edge_length(vertices, tets)
    return TetMesh(vertices, tets, boundary_faces, np.asarray(boundary_tags, dtype="U8"), h)


# The six tetrahedra of the Kuhn subdivision of a unit cell, as cumulative
# axis insertions for every permutation of (x, y, z).
_KUHN_PERMS = (
    (0, 1, 2),
    (0, 2, 1),
    (1, 0, 2),
    (1, 2, 0),
    (2, 0, 1),
    (2, 1, 0),
)


def build_box_mesh(n: int, lo=(-1.0, -1.0, -1.0), hi=(1.0, 1.0, 1.0)) -> TetMesh:
    """Structured mesh of a box with n subdivisions per axis, six tets per cell.

    For a cube of side L this gives (n+1)^3 vertices, 6 n^3 tets and
    h = sqrt(3) L / n.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if not np.all(hi > lo):
        raise ValueError("hi must exceed lo componentwise")

    m = n + 1
    xs = [np.linspace(lo[k], hi[k], m) for k in range(3)]
    X, Y, Z = np.meshgrid(xs[0], xs[1], xs[2], indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def vid(i, j, k):
        return (i * m + j) * m + k

    ii, jj, kk = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    base = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)

    tets = np.empty((6 * n**3, 4), dtype=np.int64)
    row = 0
    for perm in _KUHN_PERMS:
        corners = np.zeros((4, 3), dtype=np.int64)
        for step, axis in enumerate(perm):
            corners[step + 1] = corners[step]
            corners[step + 1, axis] += 1
        for c in range(4):
            off = base + corners[c]
            tets[row : row + base.shape[0], c] = vid(off[:, 0], off[:, 1], off[:, 2])
        row += base.shape[0]

    mesh = make_mesh(vertices, tets)

    # Tag boundary faces by the coordinate plane they lie on.
    pts = mesh.vertices[mesh.boundary_faces]
    tags = np.full(len(mesh.boundary_faces), "other", dtype="U8")
    tol = 1e-12 * float(np.linalg.norm(hi - lo))
    on_top = np.all(np.abs(pts[:, :, 2] - hi[2]) <= tol, axis=1)
    on_bottom = np.all(np.abs(pts[:, :, 2] - lo[2]) <= tol, axis=1)
    lateral = np.zeros(len(tags), dtype=bool)
    for axis in (0, 1):
        for val in (lo[axis], hi[axis]):
            lateral |= np.all(np.abs(pts[:, :, axis] - val) <= tol, axis=1)
    tags[lateral] = "lateral"
    tags[on_top] = "top"
    tags[on_bottom] = "bottom"
    return TetMesh(mesh.vertices, mesh.tets, mesh.boundary_faces, tags, mesh.h)


def save_mesh(mesh: TetMesh, path) -> None:
    """Write a mesh in the plain-text format read back by :func:`load_mesh`."""
    with open(path, "w") as fp:
        fp.write(
            f"{mesh.num_vertices} {mesh.num_tets} {len(mesh.boundary_faces)}\n"
        )
        for p in mesh.vertices:
            fp.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        for t in mesh.tets:
            fp.write(f"{t[0]} {t[1]} {t[2]} {t[3]}\n")
        for f, tag in zip(mesh.boundary_faces, mesh.boundary_tags):
            fp.write(f"{f[0]} {f[1]} {f[2]} {tag}\n")


def load_mesh(path) -> TetMesh:
    """Read a mesh written by :func:`save_mesh`, validating connectivity."""
    with open(path) as fp:
        lines = fp.read().splitlines()
    if not lines:
        raise MeshFormatError("empty mesh file", line=1)
    head = lines[0].split()
    if len(head) != 3:
        raise MeshFormatError("expected 'nv nt nf' header", line=1)
    try:
        nv, nt, nf = (int(x) for x in head)
    except ValueError:
        raise MeshFormatError("non-integer counts in header", line=1) from None
    if len(lines) < 1 + nv + nt + nf:
        raise MeshFormatError(
            f"file truncated: expected {1 + nv + nt + nf} lines", line=len(lines)
        )

    def parse_block(start, count, width, conv, what):
        out = []
        for i in range(count):
            ln = start + i
            parts = lines[ln].split()
            if len(parts) < width:
                raise MeshFormatError(f"expected {width} fields for {what}", line=ln + 1)
            try:
                out.append([conv(x) for x in parts[:width]])
            except ValueError:
                raise MeshFormatError(f"malformed {what}", line=ln + 1) from None
        return out

    vertices = np.array(parse_block(1, nv, 3, float, "vertex"), dtype=float).reshape(nv, 3)
    tets = np.array(parse_block(1 + nv, nt, 4, int, "tet"), dtype=np.int64).reshape(nt, 4)
    if nt and (tets.min() < 0 or tets.max() >= nv):
        bad = 1 + nv + int(np.argmax(np.any((tets < 0) | (tets >= nv), axis=1)))
        raise MeshFormatError("tet references a vertex index out of range", line=bad + 1)

    faces = np.empty((nf, 3), dtype=np.int64)
    tags = np.empty(nf, dtype="U8")
    for i in range(nf):
        ln = 1 + nv + nt + i
        parts = lines[ln].split()
        if len(parts) < 4:
            raise MeshFormatError("expected 'v0 v1 v2 tag' for boundary face", line=ln + 1)
        try:
            faces[i] = [int(x) for x in parts[:3]]
        except ValueError:
            raise MeshFormatError("malformed boundary face", line=ln + 1) from None
        if parts[3] not in BOUNDARY_TAGS:
            raise MeshFormatError(f"unknown boundary tag {parts[3]!r}", line=ln + 1)
        tags[i] = parts[3]

    return make_mesh(vertices, tets, faces, tags)


# ---------------------------------------------------------------------------
# 1D segment network
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dirichlet:
    """Fixed endpoint value."""

    value: float


@dataclass(frozen=True)
class NeumannZero:
    """Homogeneous natural condition at an endpoint."""


@dataclass(frozen=True)
class JunctionBC:
    """Endpoint tied to other segments through a junction constraint."""

    junction_id: int


EndpointBC = Union[Dirichlet, NeumannZero, JunctionBC]


@dataclass
class Segment:
    """Straight segment with circular cross-section of constant radius.

    ``conductivity`` and ``source`` may be constants or callables of the
    arclength; ``perimeter``/``area`` are exposed as functions of arclength so
    that varying cross-sections can be dropped in later.
    """

    id: int
    a: np.ndarray
    b: np.ndarray
    radius: float
    beta: float
    conductivity: Coefficient = 1.0
    source: Coefficient = 0.0
    bc_a: EndpointBC = NeumannZero()
    bc_b: EndpointBC = NeumannZero()

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float).reshape(3)
        self.b = np.asarray(self.b, dtype=float).reshape(3)
        if not np.linalg.norm(self.b - self.a) > 0:
            raise GeometryError(f"segment {self.id} has zero length")
        if not self.radius > 0:
            raise GeometryError(f"segment {self.id} must have positive radius")
        if self.beta < 0:
            raise GeometryError(f"segment {self.id} must have nonnegative beta")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.b - self.a))

    @property
    def direction(self) -> np.ndarray:
        d = self.b - self.a
        return d / np.linalg.norm(d)

    def point(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return self.a + np.multiply.outer(s, self.direction)

    def perimeter(self, s) -> np.ndarray:
        return np.full_like(np.asarray(s, dtype=float), 2.0 * math.pi * self.radius)

    def area(self, s) -> np.ndarray:
        return np.full_like(np.asarray(s, dtype=float), math.pi * self.radius**2)

    def conductivity_at(self, s) -> np.ndarray:
        return _eval_coefficient(self.conductivity, s)

    def source_at(self, s) -> np.ndarray:
        return _eval_coefficient(self.source, s)


def _eval_coefficient(coeff: Coefficient, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if callable(coeff):
        return np.asarray(coeff(s), dtype=float) * np.ones_like(s)
    return np.full_like(s, float(coeff))


def _shift_coefficient(coeff: Coefficient, offset: float) -> Coefficient:
    if callable(coeff) and offset != 0.0:
        return lambda s, _c=coeff, _o=offset: _c(np.asarray(s, dtype=float) + _o)
    return coeff


@dataclass
class Junction:
    """Meeting point of segment endpoints; incidences are (segment id, end flag)."""

    point: np.ndarray
    incidences: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float).reshape(3)

    @property
    def arity(self) -> int:
        return len(self.incidences)


@dataclass
class SegmentNetwork:
    segments: list[Segment]
    junctions: list[Junction] = field(default_factory=list)

    def total_length(self) -> float:
        return float(sum(s.length for s in self.segments))

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        pts = np.array([p for s in self.segments for p in (s.a, s.b)])
        return pts.min(axis=0), pts.max(axis=0)

    def tolerance(self) -> float:
        lo, hi = self.bounding_box()
        diag = float(np.linalg.norm(hi - lo))
        return 1e-12 * diag if diag > 0 else 1e-12

    def validate(self) -> None:
        """Check that junction records point at coincident segment endpoints."""
        tol = self.tolerance()
        for j, junc in enumerate(self.junctions):
            for seg_id, flag in junc.incidences:
                seg = self.segments[seg_id]
                end = seg.a if flag == 0 else seg.b
                if np.linalg.norm(end - junc.point) > tol:
                    raise GeometryError(
                        f"junction {j} does not coincide with endpoint {flag} "
                        f"of segment {seg_id}"
                    )


def _segment_param(seg: Segment, point: np.ndarray) -> tuple[float, float]:
    """Arclength of the closest point on the segment and the distance to it."""
    d = seg.b - seg.a
    t = float(np.dot(point - seg.a, d) / np.dot(d, d))
    t = min(max(t, 0.0), 1.0)
    closest = seg.a + t * d
    return t * seg.length, float(np.linalg.norm(point - closest))


def split_at_junctions(network: SegmentNetwork) -> SegmentNetwork:
    """Split segments at declared junction points.

    Junction points may sit on endpoints or interiors of segments; after the
    split every junction point is an endpoint of each incident sub-segment and
    sub-segments inherit radius, beta and (arclength-shifted) coefficient
    callbacks from their parent. The input network is left untouched.
    """
    if not network.junctions:
        return network

    tol = network.tolerance()
    for j, junc in enumerate(network.junctions):
        for seg_id, flag in junc.incidences:
            seg = network.segments[seg_id]
            end = seg.a if flag == 0 else seg.b
            if np.linalg.norm(end - junc.point) > tol:
                raise GeometryError(
                    f"declared incidence of junction {j} is not an endpoint "
                    f"of segment {seg_id}"
                )

    # Interior split arclengths per segment; endpoint hits need no split.
    cuts: dict[int, list[float]] = {}
    touched = [False] * len(network.junctions)
    for j, junc in enumerate(network.junctions):
        for i, seg in enumerate(network.segments):
            s, dist = _segment_param(seg, junc.point)
            if dist <= tol:
                touched[j] = True
                if tol < s < seg.length - tol:
                    cuts.setdefault(i, []).append(s)
    for j, ok in enumerate(touched):
        if not ok:
            raise GeometryError(
                f"junction {j} at {network.junctions[j].point} lies farther "
                "than tolerance from every segment"
            )

    final_segments: list[Segment] = []
    for i, seg in enumerate(network.segments):
        edges = [0.0]
        for s in sorted(cuts.get(i, [])):
            if s - edges[-1] > tol:
                edges.append(s)
        edges.append(seg.length)
        for k in range(len(edges) - 1):
            s0, s1 = edges[k], edges[k + 1]
            final_segments.append(
                Segment(
                    id=len(final_segments),
                    a=seg.point(s0),
                    b=seg.point(s1),
                    radius=seg.radius,
                    beta=seg.beta,
                    conductivity=_shift_coefficient(seg.conductivity, s0),
                    source=_shift_coefficient(seg.source, s0),
                    bc_a=seg.bc_a if k == 0 else NeumannZero(),
                    bc_b=seg.bc_b if k == len(edges) - 2 else NeumannZero(),
                )
            )

    # Junction incidences over the new segments, located geometrically.
    final_junctions: list[Junction] = []
    for junc in network.junctions:
        inc = []
        for new_id, seg in enumerate(final_segments):
            for flag, end in ((0, seg.a), (1, seg.b)):
                if np.linalg.norm(end - junc.point) <= tol:
                    inc.append((new_id, flag))
        inc.sort()
        final_junctions.append(Junction(point=junc.point.copy(), incidences=inc))

    # Mark endpoint boundary conditions at junctions.
    for j, junc in enumerate(final_junctions):
        for seg_id, flag in junc.incidences:
            seg = final_segments[seg_id]
            current = seg.bc_a if flag == 0 else seg.bc_b
            if isinstance(current, Dirichlet):
                raise GeometryError(
                    f"segment {seg_id} endpoint {flag} carries a Dirichlet value "
                    f"but participates in junction {j}"
                )
            if flag == 0:
                seg.bc_a = JunctionBC(j)
            else:
                seg.bc_b = JunctionBC(j)

    out = SegmentNetwork(final_segments, final_junctions)
    out.validate()
    return out


def infer_junctions(segments: list[Segment]) -> SegmentNetwork:
    """Group coincident endpoints into junctions (used by the file loader)."""
    net = SegmentNetwork(segments, [])
    tol = net.tolerance()
    pts = np.array([p for s in segments for p in (s.a, s.b)])
    owner = [(s.id, flag) for s in segments for flag in (0, 1)]
    groups: list[list[int]] = []
    assigned = np.full(len(pts), -1)
    for i in range(len(pts)):
        if assigned[i] >= 0:
            continue
        close = np.where(np.linalg.norm(pts - pts[i], axis=1) <= tol)[0]
        if len(close) >= 2:
            gid = len(groups)
            groups.append(list(close))
            assigned[close] = gid
    junctions = []
    for g in groups:
        inc = sorted(owner[k] for k in g)
        for seg_id, flag in inc:
            seg = segments[seg_id]
            bc = seg.bc_a if flag == 0 else seg.bc_b
            if isinstance(bc, Dirichlet):
                raise GeometryError(
                    f"segment {seg_id} endpoint {flag} has a Dirichlet value but "
                    "coincides with other endpoints"
                )
        junctions.append(Junction(point=pts[g[0]].copy(), incidences=inc))
    for j, junc in enumerate(junctions):
        for seg_id, flag in junc.incidences:
            seg = segments[seg_id]
            if flag == 0:
                seg.bc_a = JunctionBC(j)
            else:
                seg.bc_b = JunctionBC(j)
    return SegmentNetwork(segments, junctions)


def _format_bc(bc: EndpointBC) -> str:
    if isinstance(bc, Dirichlet):
        return f"D:{bc.value:.17g}"
    return "N"


def _parse_bc(text: str, line: int) -> EndpointBC:
    if text == "N":
        return NeumannZero()
    if text.startswith("D:"):
        try:
            return Dirichlet(float(text[2:]))
        except ValueError:
            raise MeshFormatError(f"malformed Dirichlet value {text!r}", line=line) from None
    raise MeshFormatError(f"unknown endpoint condition {text!r}", line=line)


def save_network(network: SegmentNetwork, path) -> None:
    """Write one segment per line; junction endpoints are stored as 'N' and
    re-inferred from coincident endpoints on load."""
    with open(path, "w") as fp:
        for seg in network.segments:
            if callable(seg.conductivity) or callable(seg.source):
                raise ValueError(
                    f"segment {seg.id} has non-constant coefficients; "
                    "only constants can be serialized"
                )
            fields = [f"{x:.17g}" for x in (*seg.a, *seg.b)]
            fields += [
                f"{seg.radius:.17g}",
                f"{seg.beta:.17g}",
                f"{float(seg.conductivity):.17g}",
                f"{float(seg.source):.17g}",
            ]
            bc_a = seg.bc_a if not isinstance(seg.bc_a, JunctionBC) else NeumannZero()
            bc_b = seg.bc_b if not isinstance(seg.bc_b, JunctionBC) else NeumannZero()
            fields += [_format_bc(bc_a), _format_bc(bc_b)]
            fp.write(" ".join(fields) + "\n")


def load_network(path) -> SegmentNetwork:
    """Read a network written by :func:`save_network`."""
    segments = []
    with open(path) as fp:
        for ln, raw in enumerate(fp, start=1):
            raw = raw.strip()
            if not raw or raw.startswith("#"):
                continue
            parts = raw.split()
            if len(parts) != 12:
                raise MeshFormatError("expected 12 fields per segment", line=ln)
            try:
                nums = [float(x) for x in parts[:10]]
            except ValueError:
                raise MeshFormatError("malformed segment record", line=ln) from None
            segments.append(
                Segment(
                    id=len(segments),
                    a=nums[0:3],
                    b=nums[3:6],
                    radius=nums[6],
                    beta=nums[7],
                    conductivity=nums[8],
                    source=nums[9],
                    bc_a=_parse_bc(parts[10], ln),
                    bc_b=_parse_bc(parts[11], ln),
                )
            )
    if not segments:
        raise MeshFormatError("network file contains no segments", line=1)
    return infer_junctions(segments)


# ---------------------------------------------------------------------------
# Synthetic networks
# ---------------------------------------------------------------------------


def generate_random_network(
    count: int,
    box=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)),
    min_length: float = 0.25,
    seed: int = 0,
    *,
    radius: float = 0.01,
    beta: float = 1.0,
    conductivity: Coefficient = 1.0,
    source: Coefficient = 0.0,
    inlet_value: float = 0.0,
    inlet_count: int = 1,
) -> SegmentNetwork:
    """Seeded random tree-like network grown upward from inlets on the bottom face.

    Segments stay strictly inside the box except for inlet endpoints, which sit
    exactly on the bottom face. Interior attachments are resolved through
    :func:`split_at_junctions`, so the result is ready for assembly.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    lo = np.asarray(box[0], dtype=float)
    hi = np.asarray(box[1], dtype=float)
    extent = hi - lo
    if not np.all(extent > 0):
        raise ValueError("box must have positive extent")
    if min_length <= 0 or min_length > 0.45 * float(extent.min()):
        raise ValueError("box too small for the requested minimum segment length")

    rng = np.random.default_rng(seed)
    margin = 0.02 * float(extent.min())
    inner_lo, inner_hi = lo + margin, hi - margin

    def clip_endpoint(start: np.ndarray, direction: np.ndarray, length: float) -> np.ndarray | None:
        # Largest step along `direction` that stays inside the margin box.
        t_max = length
        for k in range(3):
            if direction[k] > 1e-14:
                t_max = min(t_max, (inner_hi[k] - start[k]) / direction[k])
            elif direction[k] < -1e-14:
                t_max = min(t_max, (inner_lo[k] - start[k]) / direction[k])
        t = min(length, 0.999 * t_max)
        if t < 0.4 * min_length:
            return None
        return start + t * direction

    raw: list[tuple[np.ndarray, np.ndarray, bool]] = []  # (a, b, a_is_inlet)
    attach_points: list[np.ndarray] = []
    n_inlets = min(max(1, inlet_count), count)
    for _ in range(n_inlets):
        frac = 0.2 + 0.6 * rng.random(2)
        a = np.array([lo[0] + frac[0] * extent[0], lo[1] + frac[1] * extent[1], lo[2]])
        direction = rng.normal(size=3) * np.array([0.4, 0.4, 0.1]) + np.array([0, 0, 1.0])
        direction /= np.linalg.norm(direction)
        length = min_length * (1.0 + 1.2 * rng.random())
        b = clip_endpoint(a + np.array([0, 0, margin]), direction, length)
        if b is None:
            b = a + np.array([0.0, 0.0, min_length])
        raw.append((a, b, True))

    while len(raw) < count:
        parent = int(rng.integers(len(raw)))
        pa, pb, _ = raw[parent]
        if rng.random() < 0.3:
            t = 0.3 + 0.4 * rng.random()
            start = pa + t * (pb - pa)
        else:
            start = pb
        placed = False
        for _ in range(25):
            direction = rng.normal(size=3) + np.array([0.0, 0.0, 0.6])
            direction /= np.linalg.norm(direction)
            length = min_length * (1.0 + 1.8 * rng.random())
            end = clip_endpoint(start, direction, length)
            if end is not None and np.linalg.norm(end - start) >= 0.4 * min_length:
                raw.append((start.copy(), end, False))
                attach_points.append(start.copy())
                placed = True
                break
        if not placed:
            # Fall back to a short vertical stub, guaranteed inside.
            end = np.minimum(start + np.array([0.0, 0.0, 0.5 * min_length]), inner_hi)
            raw.append((start.copy(), end, False))
            attach_points.append(start.copy())

    segments = []
    for i, (a, b, a_inlet) in enumerate(raw):
        segments.append(
            Segment(
                id=i,
                a=a,
                b=b,
                radius=radius,
                beta=beta,
                conductivity=conductivity,
                source=source,
                bc_a=Dirichlet(inlet_value) if a_inlet else NeumannZero(),
                bc_b=NeumannZero(),
            )
        )

    # Deduplicate attachment points within tolerance before declaring junctions.
    net = SegmentNetwork(segments, [])
    tol = net.tolerance()
    junctions: list[Junction] = []
    for p in attach_points:
        if all(np.linalg.norm(p - j.point) > tol for j in junctions):
            junctions.append(Junction(point=p, incidences=[]))
    net = SegmentNetwork(segments, junctions)
    return split_at_junctions(net) if junctions else net
