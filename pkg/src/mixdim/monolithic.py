"""One-shot coupled solver without interface variables, for cross-validation.

The 3D and 1D unknowns are solved together through the membrane-weighted
exchange blocks. Assembly, tracing and boundary handling are shared with the
optimization path, so solution differences isolate the interface-variable
machinery.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import BlockSystem, block_matrix
from .quadrature import tet_rule
from .solution import Solution, SolveReport, make_solution
from .trace import composite_rule


def weighted_exchange_matrix(blocks: BlockSystem) -> sp.csr_matrix:
    """Exchange matrix with each segment's column block scaled by beta times
    the section perimeter (constant along a segment for circular sections)."""
    if blocks.B_full is None:
        raise ValueError("blocks were assembled without the exchange matrix; "
                         "pass with_b=True")
    scale = np.empty(blocks.uhat.n_nodes)
    for i in range(len(blocks.network.segments)):
        scale[blocks.uhat.seg_nodes(i)] = blocks.seg_weight(i)
    return blocks.B_full.multiply(scale[None, :]).tocsr()


def coupled_system(blocks: BlockSystem) -> tuple[sp.csr_matrix, np.ndarray]:
    """Symmetric global matrix [[A, -Bw], [-Bw^T, Ahat]] and its right-hand
    side, with Dirichlet contributions from both fields moved to the RHS."""
    bw = weighted_exchange_matrix(blocks)
    free3 = blocks.dof3d.free_ids
    freeu = np.where(blocks.uhat.free)[0]
    fixu = blocks.uhat.fixed

    bw_ff = bw[free3][:, freeu].tocsr()
    if blocks.n_mult:
        bw_ff = block_matrix(
            [[bw_ff, None]], [blocks.n_u], [blocks.n_uhat, blocks.n_mult]
        )
    rhs_3d = blocks.f + bw[free3][:, fixu] @ blocks.uhat.lift[fixu]
    lift3 = blocks.dof3d.lift()
    rhs_1d = blocks.g + (bw.T @ lift3)[freeu]

    K = block_matrix(
        [[blocks.A, -bw_ff], [-bw_ff.T, blocks.Ahat_ext]],
        [blocks.n_u, blocks.n_uhat_ext],
        [blocks.n_u, blocks.n_uhat_ext],
    )
    rhs = np.concatenate([rhs_3d, blocks.pad_uhat(rhs_1d)])
    return K, rhs


def solve_coupled(blocks: BlockSystem) -> Solution:
    K, rhs = coupled_system(blocks)
    try:
        lu = spla.splu(K.tocsc())
        x = lu.solve(rhs)
    except RuntimeError as exc:
        raise RuntimeError(f"coupled system factorization failed: {exc}") from exc
    resid = float(np.linalg.norm(K @ x - rhs)) / max(float(np.linalg.norm(rhs)), 1e-300)
    report = SolveReport(method="coupled", converged=True,
                         constraint_residual_3d=resid, constraint_residual_1d=resid)
    u = x[: blocks.n_u]
    uhat_ext = x[blocks.n_u :]
    return make_solution(blocks, u, uhat_ext, np.zeros(0), report)


@dataclass
class CompareReport:
    """Relative differences between two solutions on matched discretizations."""

    uhat_l2: list[float]
    uhat_linf: list[float]
    u_l2: float
    plane_l2: dict[float, float]

    @property
    def max_uhat_l2(self) -> float:
        return max(self.uhat_l2) if self.uhat_l2 else 0.0


def compare_solutions(
    sol_a: Solution,
    sol_b: Solution,
    blocks: BlockSystem,
    planes: tuple[float, ...] = (-0.5, 0.0, 0.5),
    plane_samples: int = 31,
) -> CompareReport:
    """Per-segment relative L2/Linf differences of the 1D solution plus
    relative L2 differences of the 3D field, globally and on z-planes."""
    if len(sol_a.Uhat) != len(sol_b.Uhat) or any(
        len(a) != len(b) for a, b in zip(sol_a.Uhat, sol_b.Uhat)
    ):
        raise ValueError("solutions come from different 1D discretizations")
    if sol_a.U_full.shape != sol_b.U_full.shape:
        raise ValueError("solutions come from different 3D meshes")

    uhat_l2, uhat_linf = [], []
    for i, part in enumerate(blocks.uhat.partitions):
        rule = composite_rule(part.nodes)
        va = part.interpolate(sol_a.Uhat[i], rule.points)
        vb = part.interpolate(sol_b.Uhat[i], rule.points)
        num = np.sqrt(np.sum(rule.weights * (va - vb) ** 2))
        den = np.sqrt(np.sum(rule.weights * va**2))
        uhat_l2.append(float(num / max(den, 1e-300)))
        uhat_linf.append(
            float(np.max(np.abs(sol_a.Uhat[i] - sol_b.Uhat[i])))
            / max(float(np.max(np.abs(sol_a.Uhat[i]))), 1e-300)
        )

    mesh = blocks.mesh
    bary, wq = tet_rule(2)
    v = mesh.vertices[mesh.tets]
    vol = np.abs(np.linalg.det(np.swapaxes(v[:, 1:] - v[:, :1], 1, 2))) / 6.0
    ua = sol_a.U_full[mesh.tets] @ bary.T
    ub = sol_b.U_full[mesh.tets] @ bary.T
    num = np.einsum("t,q,tq->", vol, wq, (ua - ub) ** 2)
    den = np.einsum("t,q,tq->", vol, wq, ua**2)
    u_l2 = float(np.sqrt(num) / max(np.sqrt(den), 1e-300))

    plane_l2 = {}
    if planes:
        from .trace import locate_points

        lo, hi = mesh.bounding_box()
        xs = np.linspace(lo[0], hi[0], plane_samples)
        ys = np.linspace(lo[1], hi[1], plane_samples)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        for zp in planes:
            pts = np.column_stack([X.ravel(), Y.ravel(), np.full(X.size, zp)])
            tets, bar = locate_points(mesh, pts)
            ok = tets >= 0
            dofs = mesh.tets[tets[ok]]
            va = np.sum(sol_a.U_full[dofs] * bar[ok], axis=1)
            vb = np.sum(sol_b.U_full[dofs] * bar[ok], axis=1)
            plane_l2[float(zp)] = float(
                np.linalg.norm(va - vb) / max(np.linalg.norm(va), 1e-300)
            )
    return CompareReport(uhat_l2, uhat_linf, u_l2, plane_l2)


def exchange_balance(blocks: BlockSystem, sol: Solution) -> tuple[float, float]:
    """Total membrane exchange versus total boundary load for a coupled solve.

    Testing the coupled system with the constant function gives the discrete
    balance: the total exchange across all membranes equals minus the total
    assembled 3D load (Neumann influx, assuming a zero volume source). The
    constant must be in the test space, so an all-Neumann 3D boundary is
    required.
    """
    if len(blocks.dof3d.fixed):
        raise ValueError("balance check requires an all-Neumann 3D boundary")
    total_exchange = 0.0
    for i, seg in enumerate(blocks.network.segments):
        td = blocks.traces[i]
        part = blocks.uhat.partitions[i]
        rule = composite_rule(td.breakpoints, part.nodes)
        dofs, vals = td.p1_basis(blocks.mesh, rule.points)
        u_line = np.sum(sol.U_full[dofs] * vals, axis=1)
        uhat_line = part.interpolate(sol.Uhat[i], rule.points)
        w = rule.weights * seg.beta * seg.perimeter(rule.points)
        total_exchange += float(np.sum(w * (uhat_line - u_line)))
    return total_exchange, -float(blocks.f.sum())
