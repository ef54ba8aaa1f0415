"""Assembly of every discrete block of the coupled system.

All element contributions are collected as coordinate triplets (duplicates
summed on conversion to CSR). Matrices are first assembled over full node
sets, then Dirichlet rows/columns are eliminated with their contributions
moved to the right-hand side; the squared-mismatch functional additionally
picks up linear terms from inhomogeneous 1D endpoint values, which are kept
in the ``lift_*`` vectors. Per-element work is independent and could be
reduced into the triplet buffers concurrently; the resulting
:class:`BlockSystem` is immutable by convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .geom import Dirichlet, JunctionBC, Segment, SegmentNetwork, TetMesh
from .quadrature import tet_rule, tri_rule_midpoints
from .trace import Partition1D, TraceDecomposition, composite_rule


class AssemblyError(RuntimeError):
    """Internal inconsistency while building the discrete system."""


BoundarySpec = dict[str, tuple[str, Callable[[np.ndarray], np.ndarray]]]


def block_matrix(rows, row_sizes, col_sizes) -> sp.csr_matrix:
    """Compose a sparse block matrix, tolerating zero-sized blocks."""
    row_off = np.concatenate([[0], np.cumsum(row_sizes)])
    col_off = np.concatenate([[0], np.cumsum(col_sizes)])
    data, ii, jj = [], [], []
    for r, row in enumerate(rows):
        for c, blk in enumerate(row):
            if blk is None:
                continue
            coo = sp.coo_matrix(blk)
            if coo.shape != (row_sizes[r], col_sizes[c]):
                raise AssemblyError(
                    f"block ({r},{c}) has shape {coo.shape}, "
                    f"expected {(row_sizes[r], col_sizes[c])}"
                )
            data.append(coo.data)
            ii.append(coo.row + row_off[r])
            jj.append(coo.col + col_off[c])
    if data:
        data = np.concatenate(data)
        ii = np.concatenate(ii)
        jj = np.concatenate(jj)
    shape = (int(row_off[-1]), int(col_off[-1]))
    return sp.coo_matrix((data, (ii, jj)), shape=shape).tocsr()


# ---------------------------------------------------------------------------
# Degree-of-freedom bookkeeping
# ---------------------------------------------------------------------------


@dataclass
class Dof3d:
    """Free/fixed split of the 3D vertices with Dirichlet values."""

    free: np.ndarray
    free_index: np.ndarray
    fixed: np.ndarray
    values: np.ndarray

    @property
    def n_free(self) -> int:
        return int(self.free.sum())

    @property
    def free_ids(self) -> np.ndarray:
        return np.where(self.free)[0]

    def lift(self) -> np.ndarray:
        out = np.zeros(len(self.free))
        out[self.fixed] = self.values
        return out

    def expand(self, u_free: np.ndarray) -> np.ndarray:
        out = self.lift()
        out[self.free] = u_free
        return out


def dirichlet_data_3d(mesh: TetMesh, boundary: BoundarySpec) -> Dof3d:
    nv = mesh.num_vertices
    fixed_mask = np.zeros(nv, dtype=bool)
    values = np.zeros(nv)
    for tag in sorted(boundary):
        kind, fn = boundary[tag]
        if kind != "dirichlet":
            continue
        faces = mesh.boundary_faces[mesh.boundary_tags == tag]
        verts = np.unique(faces)
        fixed_mask[verts] = True
        values[verts] = np.asarray(fn(mesh.vertices[verts]), dtype=float)
    free = ~fixed_mask
    free_index = np.full(nv, -1, dtype=np.int64)
    free_index[free] = np.arange(free.sum())
    fixed = np.where(fixed_mask)[0]
    return Dof3d(free, free_index, fixed, values[fixed])


@dataclass
class UhatSpace:
    """Global numbering for the per-segment 1D solution variables.

    Nodes are numbered segment by segment; Dirichlet endpoints are dropped
    from the free numbering and their values kept in ``lift``. Junction
    continuity is enforced by the chain constraints in ``Q`` acting on the
    free numbering.
    """

    partitions: list[Partition1D]
    node_offsets: np.ndarray
    free: np.ndarray
    free_index: np.ndarray
    lift: np.ndarray
    Q: sp.csr_matrix

    @property
    def n_nodes(self) -> int:
        return int(self.node_offsets[-1])

    @property
    def n_free(self) -> int:
        return int(self.free.sum())

    @property
    def n_mult(self) -> int:
        return self.Q.shape[0]

    @property
    def n_ext(self) -> int:
        return self.n_free + self.n_mult

    @property
    def fixed(self) -> np.ndarray:
        return np.where(~self.free)[0]

    def seg_nodes(self, i: int) -> np.ndarray:
        return np.arange(self.node_offsets[i], self.node_offsets[i + 1])

    def seg_free_global(self, i: int) -> np.ndarray:
        nodes = self.seg_nodes(i)
        return self.free_index[nodes[self.free[nodes]]]

    def expand(self, u_free: np.ndarray) -> np.ndarray:
        out = self.lift.copy()
        out[self.free] = u_free[: self.n_free]
        return out

    def per_segment(self, u_free: np.ndarray) -> list[np.ndarray]:
        full = self.expand(u_free)
        return [full[self.seg_nodes(i)] for i in range(len(self.partitions))]


def build_uhat_space(network: SegmentNetwork, partitions: list[Partition1D]) -> UhatSpace:
    if len(partitions) != len(network.segments):
        raise AssemblyError("one uhat partition required per segment")
    counts = np.array([p.num_nodes for p in partitions], dtype=np.int64)
    node_offsets = np.concatenate([[0], np.cumsum(counts)])
    n_nodes = int(node_offsets[-1])
    free = np.ones(n_nodes, dtype=bool)
    lift = np.zeros(n_nodes)
    for i, seg in enumerate(network.segments):
        first = node_offsets[i]
        last = node_offsets[i + 1] - 1
        if isinstance(seg.bc_a, Dirichlet):
            free[first] = False
            lift[first] = seg.bc_a.value
        if isinstance(seg.bc_b, Dirichlet):
            free[last] = False
            lift[last] = seg.bc_b.value
    free_index = np.full(n_nodes, -1, dtype=np.int64)
    free_index[free] = np.arange(free.sum())

    rows, cols, vals = [], [], []
    nq = 0
    for junc in network.junctions:
        ends = []
        for seg_id, flag in junc.incidences:
            node = node_offsets[seg_id] + (0 if flag == 0 else counts[seg_id] - 1)
            if not free[node]:
                raise AssemblyError(
                    f"junction endpoint of segment {seg_id} is not a free DOF"
                )
            ends.append(free_index[node])
        for a, b in zip(ends[:-1], ends[1:]):
            rows += [nq, nq]
            cols += [a, b]
            vals += [1.0, -1.0]
            nq += 1
    Q = sp.coo_matrix((vals, (rows, cols)), shape=(nq, int(free.sum()))).tocsr()
    return UhatSpace(partitions, node_offsets, free, free_index, lift, Q)


@dataclass
class PsiSpace:
    """Global numbering for one family of interface variables."""

    partitions: list[Partition1D]
    offsets: np.ndarray

    @property
    def n(self) -> int:
        return int(self.offsets[-1])

    def seg_slice(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def per_segment(self, x: np.ndarray) -> list[np.ndarray]:
        return [x[self.seg_slice(i)] for i in range(len(self.partitions))]


def build_psi_space(partitions: list[Partition1D]) -> PsiSpace:
    counts = np.array([p.num_nodes for p in partitions], dtype=np.int64)
    return PsiSpace(partitions, np.concatenate([[0], np.cumsum(counts)]))


# ---------------------------------------------------------------------------
# Element-level assemblers
# ---------------------------------------------------------------------------


class _Triplets:
    def __init__(self, shape):
        self.shape = shape
        self.data, self.rows, self.cols = [], [], []

    def add(self, pairs_row, pairs_col, w, row_offset=0, col_offset=0):
        rd, rv = pairs_row
        cd, cv = pairs_col
        contrib = np.einsum("k,ki,kj->kij", w, rv, cv)
        ii = np.broadcast_to(rd[:, :, None] + row_offset, contrib.shape)
        jj = np.broadcast_to(cd[:, None, :] + col_offset, contrib.shape)
        self.data.append(contrib.ravel())
        self.rows.append(ii.ravel())
        self.cols.append(jj.ravel())

    def tocsr(self) -> sp.csr_matrix:
        if not self.data:
            return sp.csr_matrix(self.shape)
        return sp.coo_matrix(
            (np.concatenate(self.data), (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=self.shape,
        ).tocsr()


def _tet_gradients(mesh: TetMesh) -> tuple[np.ndarray, np.ndarray]:
    """P1 basis gradients (nt, 4, 3) and volumes per tet."""
    v = mesh.vertices[mesh.tets]
    edges = np.swapaxes(v[:, 1:] - v[:, :1], 1, 2)  # columns v_i - v_0
    vol = np.linalg.det(edges) / 6.0
    if np.any(vol <= 0):
        raise AssemblyError("degenerate tetrahedron (non-positive volume)")
    inv = np.linalg.inv(edges)  # rows are gradients of lambda_1..3
    grads = np.empty((mesh.num_tets, 4, 3))
    grads[:, 1:, :] = inv
    grads[:, 0, :] = -inv.sum(axis=1)
    return grads, vol


def stiffness_3d(mesh: TetMesh, conductivity: float) -> sp.csr_matrix:
    grads, vol = _tet_gradients(mesh)
    local = conductivity * vol[:, None, None] * np.einsum("tid,tjd->tij", grads, grads)
    i = np.broadcast_to(mesh.tets[:, :, None], local.shape)
    j = np.broadcast_to(mesh.tets[:, None, :], local.shape)
    nv = mesh.num_vertices
    return sp.coo_matrix((local.ravel(), (i.ravel(), j.ravel())), shape=(nv, nv)).tocsr()


def assemble_A_full(
    mesh: TetMesh,
    network: SegmentNetwork,
    traces: list[TraceDecomposition],
    conductivity: float,
) -> sp.csr_matrix:
    """Stiffness over the whole box plus the membrane trace-mass terms."""
    nv = mesh.num_vertices
    trip = _Triplets((nv, nv))
    for seg, td in zip(network.segments, traces):
        rule = composite_rule(td.breakpoints)
        basis = td.p1_basis(mesh, rule.points)
        w = rule.weights * seg.beta * seg.perimeter(rule.points)
        trip.add(basis, basis, w)
    return stiffness_3d(mesh, conductivity) + trip.tocsr()


def assemble_A(
    mesh: TetMesh,
    network: SegmentNetwork,
    traces: list[TraceDecomposition],
    conductivity: float,
    dof3d: Dof3d,
) -> tuple[sp.csr_matrix, np.ndarray]:
    """Eliminated system matrix and the Dirichlet contribution A_fd u_d."""
    A_full = assemble_A_full(mesh, network, traces, conductivity)
    free = dof3d.free_ids
    A = A_full[free][:, free].tocsr()
    shift = A_full[free][:, dof3d.fixed] @ dof3d.values
    return A, shift


def _ahat_segment_full(seg: Segment, part: Partition1D) -> sp.csr_matrix:
    n = part.num_nodes
    rule = composite_rule(part.nodes)
    trip = _Triplets((n, n))
    dbasis = part.hat_basis_deriv(rule.points)
    w_stiff = rule.weights * seg.conductivity_at(rule.points) * seg.area(rule.points)
    trip.add(dbasis, dbasis, w_stiff)
    basis = part.hat_basis(rule.points)
    w_mass = rule.weights * seg.beta * seg.perimeter(rule.points)
    trip.add(basis, basis, w_mass)
    return trip.tocsr()


def assemble_Ahat(
    network: SegmentNetwork, partitions_uhat: list[Partition1D]
) -> tuple[sp.csr_matrix, sp.csr_matrix, UhatSpace, np.ndarray]:
    """Block-diagonal 1D operator on free DOFs, junction constraints and the
    Dirichlet shift Ahat_fd uhat_d."""
    uhat = build_uhat_space(network, partitions_uhat)
    full = block_matrix(
        [[_ahat_segment_full(seg, p) if i == j else None
          for j, p in enumerate(partitions_uhat)]
         for i, seg in enumerate(network.segments)],
        [p.num_nodes for p in partitions_uhat],
        [p.num_nodes for p in partitions_uhat],
    )
    free = np.where(uhat.free)[0]
    fixed = uhat.fixed
    sharp = full[free][:, free].tocsr()
    shift = full[free][:, fixed] @ uhat.lift[fixed]
    return sharp, uhat.Q, uhat, shift


@dataclass
class CouplingBlocks:
    """Full-node-space coupling and mass matrices (no elimination applied)."""

    Dhat_beta: sp.csr_matrix  # (uhat nodes, N_D)
    S_beta: sp.csr_matrix  # (3D vertices, N_Sigma)
    D: sp.csr_matrix  # (3D vertices, N_D)
    Shat: sp.csr_matrix  # (uhat nodes, N_Sigma)
    G: sp.csr_matrix  # (3D vertices, 3D vertices)
    Ghat: sp.csr_matrix  # (uhat nodes, uhat nodes)
    M_D: sp.csr_matrix
    M_Sigma: sp.csr_matrix


def assemble_coupling(
    mesh: TetMesh,
    network: SegmentNetwork,
    traces: list[TraceDecomposition],
    partitions_uhat: list[Partition1D],
    partitions_d: list[Partition1D],
    partitions_sigma: list[Partition1D],
) -> CouplingBlocks:
    """All mass-type blocks, integrated on merged-breakpoint composite rules."""
    nv = mesh.num_vertices
    uhat_counts = [p.num_nodes for p in partitions_uhat]
    uhat_off = np.concatenate([[0], np.cumsum(uhat_counts)])
    d_counts = [p.num_nodes for p in partitions_d]
    d_off = np.concatenate([[0], np.cumsum(d_counts)])
    s_counts = [p.num_nodes for p in partitions_sigma]
    s_off = np.concatenate([[0], np.cumsum(s_counts)])
    n_uhat, n_d, n_s = int(uhat_off[-1]), int(d_off[-1]), int(s_off[-1])

    t_dhat = _Triplets((n_uhat, n_d))
    t_sbeta = _Triplets((nv, n_s))
    t_d = _Triplets((nv, n_d))
    t_shat = _Triplets((n_uhat, n_s))
    t_g = _Triplets((nv, nv))
    t_ghat = _Triplets((n_uhat, n_uhat))
    t_md = _Triplets((n_d, n_d))
    t_ms = _Triplets((n_s, n_s))

    for i, (seg, td) in enumerate(zip(network.segments, traces)):
        p_u, p_d, p_s = partitions_uhat[i], partitions_d[i], partitions_sigma[i]

        rule = composite_rule(p_u.nodes, p_d.nodes)
        w = rule.weights * seg.beta * seg.perimeter(rule.points)
        t_dhat.add(p_u.hat_basis(rule.points), p_d.hat_basis(rule.points), w,
                   uhat_off[i], d_off[i])

        rule = composite_rule(td.breakpoints, p_s.nodes)
        w = rule.weights * seg.beta * seg.perimeter(rule.points)
        tb = td.p1_basis(mesh, rule.points)
        sb = p_s.hat_basis(rule.points)
        t_sbeta.add(tb, sb, w, 0, s_off[i])

        rule = composite_rule(td.breakpoints, p_d.nodes)
        tb = td.p1_basis(mesh, rule.points)
        t_d.add(tb, p_d.hat_basis(rule.points), rule.weights, 0, d_off[i])

        rule = composite_rule(p_u.nodes, p_s.nodes)
        t_shat.add(p_u.hat_basis(rule.points), p_s.hat_basis(rule.points),
                   rule.weights, uhat_off[i], s_off[i])

        rule = composite_rule(td.breakpoints)
        tb = td.p1_basis(mesh, rule.points)
        t_g.add(tb, tb, rule.weights)

        rule = composite_rule(p_u.nodes)
        ub = p_u.hat_basis(rule.points)
        t_ghat.add(ub, ub, rule.weights, uhat_off[i], uhat_off[i])

        rule = composite_rule(p_d.nodes)
        db = p_d.hat_basis(rule.points)
        t_md.add(db, db, rule.weights, d_off[i], d_off[i])

        rule = composite_rule(p_s.nodes)
        sb = p_s.hat_basis(rule.points)
        t_ms.add(sb, sb, rule.weights, s_off[i], s_off[i])

    return CouplingBlocks(
        Dhat_beta=t_dhat.tocsr(),
        S_beta=t_sbeta.tocsr(),
        D=t_d.tocsr(),
        Shat=t_shat.tocsr(),
        G=t_g.tocsr(),
        Ghat=t_ghat.tocsr(),
        M_D=t_md.tocsr(),
        M_Sigma=t_ms.tocsr(),
    )


def assemble_B(
    mesh: TetMesh,
    network: SegmentNetwork,
    traces: list[TraceDecomposition],
    partitions_uhat: list[Partition1D],
) -> sp.csr_matrix:
    """Unweighted trace/1D-solution products (3D vertices x uhat nodes)."""
    counts = [p.num_nodes for p in partitions_uhat]
    off = np.concatenate([[0], np.cumsum(counts)])
    trip = _Triplets((mesh.num_vertices, int(off[-1])))
    for i, (seg, td) in enumerate(zip(network.segments, traces)):
        p_u = partitions_uhat[i]
        rule = composite_rule(td.breakpoints, p_u.nodes)
        tb = td.p1_basis(mesh, rule.points)
        ub = p_u.hat_basis(rule.points)
        trip.add(tb, ub, rule.weights, 0, off[i])
    return trip.tocsr()


def assemble_rhs(
    mesh: TetMesh,
    network: SegmentNetwork,
    partitions_uhat: list[Partition1D],
    source3d: Callable[[np.ndarray], np.ndarray],
    boundary: BoundarySpec,
) -> tuple[np.ndarray, np.ndarray]:
    """Load vectors over full node sets: 4-point tet quadrature for the 3D
    source, boundary-face midpoint quadrature for Neumann data, composite
    Gauss for the per-segment line sources. Dirichlet elimination shifts are
    applied by :func:`assemble_system`."""
    nv = mesh.num_vertices
    f = np.zeros(nv)

    bary, wq = tet_rule(2)
    v = mesh.vertices[mesh.tets]
    vol = np.abs(np.linalg.det(np.swapaxes(v[:, 1:] - v[:, :1], 1, 2))) / 6.0
    pts = np.einsum("qi,tid->tqd", bary, v)
    fvals = np.asarray(source3d(pts.reshape(-1, 3)), dtype=float).reshape(pts.shape[:2])
    contrib = np.einsum("t,q,tq,qi->ti", vol, wq, fvals, bary)
    np.add.at(f, mesh.tets, contrib)

    tb, tw = tri_rule_midpoints()
    for tag in sorted(boundary):
        kind, fn = boundary[tag]
        if kind != "neumann":
            continue
        faces = mesh.boundary_faces[mesh.boundary_tags == tag]
        if len(faces) == 0:
            continue
        fv = mesh.vertices[faces]
        area = 0.5 * np.linalg.norm(
            np.cross(fv[:, 1] - fv[:, 0], fv[:, 2] - fv[:, 0]), axis=1
        )
        fpts = np.einsum("qi,fid->fqd", tb, fv)
        gvals = np.asarray(fn(fpts.reshape(-1, 3)), dtype=float).reshape(fpts.shape[:2])
        contrib = np.einsum("f,q,fq,qi->fi", area, tw, gvals, tb)
        np.add.at(f, faces, contrib)

    counts = [p.num_nodes for p in partitions_uhat]
    off = np.concatenate([[0], np.cumsum(counts)])
    g = np.zeros(int(off[-1]))
    for i, seg in enumerate(network.segments):
        p_u = partitions_uhat[i]
        rule = composite_rule(p_u.nodes)
        w = rule.weights * seg.area(rule.points) * seg.source_at(rule.points)
        dofs, vals = p_u.hat_basis(rule.points)
        np.add.at(g, dofs + off[i], w[:, None] * vals)
    return f, g


# ---------------------------------------------------------------------------
# Assembled system
# ---------------------------------------------------------------------------


@dataclass
class BlockSystem:
    """Every discrete block after Dirichlet elimination.

    ``lift_*`` are the linear functional terms produced by inhomogeneous
    Dirichlet data (zero in the homogeneous case) and ``lift_const`` the
    corresponding constant, so the squared-mismatch functional stays exact.
    """

    mesh: TetMesh
    network: SegmentNetwork
    traces: list[TraceDecomposition]
    dof3d: Dof3d
    uhat: UhatSpace
    psi_d: PsiSpace
    psi_sigma: PsiSpace

    A: sp.csr_matrix
    f: np.ndarray
    Ahat_sharp: sp.csr_matrix
    Q: sp.csr_matrix
    g: np.ndarray
    Dhat_beta: sp.csr_matrix
    S_beta: sp.csr_matrix
    D: sp.csr_matrix
    Shat: sp.csr_matrix
    G: sp.csr_matrix
    Ghat: sp.csr_matrix
    M_D: sp.csr_matrix
    M_Sigma: sp.csr_matrix

    lift_U: np.ndarray
    lift_Uhat: np.ndarray
    lift_psi_d: np.ndarray
    lift_psi_sigma: np.ndarray
    lift_const: float

    B_full: sp.csr_matrix | None = None

    @property
    def n_u(self) -> int:
        return self.A.shape[0]

    @property
    def n_uhat(self) -> int:
        return self.Ahat_sharp.shape[0]

    @property
    def n_mult(self) -> int:
        return self.Q.shape[0]

    @property
    def n_uhat_ext(self) -> int:
        return self.n_uhat + self.n_mult

    @property
    def n_d(self) -> int:
        return self.M_D.shape[0]

    @property
    def n_sigma(self) -> int:
        return self.M_Sigma.shape[0]

    @cached_property
    def Ahat_ext(self) -> sp.csr_matrix:
        """[[Ahat_sharp, Q^T], [Q, 0]]; equals Ahat_sharp when no junctions."""
        if self.n_mult == 0:
            return self.Ahat_sharp
        return block_matrix(
            [[self.Ahat_sharp, self.Q.T], [self.Q, None]],
            [self.n_uhat, self.n_mult],
            [self.n_uhat, self.n_mult],
        )

    def pad_uhat(self, v: np.ndarray) -> np.ndarray:
        if self.n_mult == 0:
            return v
        return np.concatenate([v, np.zeros(self.n_mult)])

    @cached_property
    def Dhat_beta_ext(self) -> sp.csr_matrix:
        if self.n_mult == 0:
            return self.Dhat_beta
        return block_matrix([[self.Dhat_beta], [None]], [self.n_uhat, self.n_mult], [self.n_d])

    @cached_property
    def Ghat_ext(self) -> sp.csr_matrix:
        if self.n_mult == 0:
            return self.Ghat
        return block_matrix(
            [[self.Ghat, None], [None, None]],
            [self.n_uhat, self.n_mult],
            [self.n_uhat, self.n_mult],
        )

    @cached_property
    def Shat_ext(self) -> sp.csr_matrix:
        if self.n_mult == 0:
            return self.Shat
        return block_matrix([[self.Shat], [None]], [self.n_uhat, self.n_mult], [self.n_sigma])

    @property
    def g_ext(self) -> np.ndarray:
        return self.pad_uhat(self.g)

    @property
    def lift_uhat_ext(self) -> np.ndarray:
        return self.pad_uhat(self.lift_Uhat)

    def split_x(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return x[: self.n_d], x[self.n_d :]

    def seg_weight(self, i: int) -> float:
        """Constant membrane weight beta * perimeter of segment i."""
        seg = self.network.segments[i]
        return float(seg.beta * seg.perimeter(0.0))


def assemble_system(
    mesh: TetMesh,
    network: SegmentNetwork,
    traces: list[TraceDecomposition],
    partitions_uhat: list[Partition1D],
    partitions_d: list[Partition1D],
    partitions_sigma: list[Partition1D],
    conductivity: float,
    source3d: Callable[[np.ndarray], np.ndarray],
    boundary: BoundarySpec,
    with_b: bool = False,
) -> BlockSystem:
    """Assemble and eliminate the full block system."""
    if not (
        len(traces)
        == len(partitions_uhat)
        == len(partitions_d)
        == len(partitions_sigma)
        == len(network.segments)
    ):
        raise AssemblyError("per-segment inputs have inconsistent lengths")

    dof3d = dirichlet_data_3d(mesh, boundary)
    A, a_shift = assemble_A(mesh, network, traces, conductivity, dof3d)
    Ahat_sharp, Q, uhat, g_shift = assemble_Ahat(network, partitions_uhat)
    cpl = assemble_coupling(
        mesh, network, traces, partitions_uhat, partitions_d, partitions_sigma
    )
    f_full, g_full = assemble_rhs(mesh, network, partitions_uhat, source3d, boundary)

    free3 = dof3d.free_ids
    fix3 = dof3d.fixed
    freeu = np.where(uhat.free)[0]
    fixu = uhat.fixed
    u_d = dof3d.values
    uhat_d = uhat.lift[fixu]

    f = f_full[free3] - a_shift
    g = g_full[freeu] - g_shift

    G = cpl.G[free3][:, free3].tocsr()
    lift_U = cpl.G[free3][:, fix3] @ u_d
    D = cpl.D[free3].tocsr()
    lift_psi_d = -(cpl.D[fix3].T @ u_d)
    S_beta = cpl.S_beta[free3].tocsr()

    Ghat = cpl.Ghat[freeu][:, freeu].tocsr()
    lift_Uhat = cpl.Ghat[freeu][:, fixu] @ uhat_d
    Shat = cpl.Shat[freeu].tocsr()
    lift_psi_sigma = -(cpl.Shat[fixu].T @ uhat_d)
    Dhat_beta = cpl.Dhat_beta[freeu].tocsr()

    lift_const = 0.5 * float(
        u_d @ (cpl.G[fix3][:, fix3] @ u_d) + uhat_d @ (cpl.Ghat[fixu][:, fixu] @ uhat_d)
    )

    B_full = (
        assemble_B(mesh, network, traces, partitions_uhat) if with_b else None
    )

    return BlockSystem(
        mesh=mesh,
        network=network,
        traces=traces,
        dof3d=dof3d,
        uhat=uhat,
        psi_d=build_psi_space(partitions_d),
        psi_sigma=build_psi_space(partitions_sigma),
        A=A,
        f=f,
        Ahat_sharp=Ahat_sharp,
        Q=Q,
        g=g,
        Dhat_beta=Dhat_beta,
        S_beta=S_beta,
        D=D,
        Shat=Shat,
        G=G,
        Ghat=Ghat,
        M_D=cpl.M_D,
        M_Sigma=cpl.M_Sigma,
        lift_U=lift_U,
        lift_Uhat=lift_Uhat,
        lift_psi_d=lift_psi_d,
        lift_psi_sigma=lift_psi_sigma,
        lift_const=lift_const,
        B_full=B_full,
    )


def dump_matrix(matrix: sp.spmatrix, path) -> None:
    """MatrixMarket coordinate dump with 17 significant digits."""
    from scipy.io import mmwrite

    mmwrite(path, sp.coo_matrix(matrix), precision=17)
