"""End-to-end pipeline: problem -> discretization -> solve."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import BlockSystem, assemble_system
from .kkt import build_kkt, solve_direct
from .monolithic import solve_coupled
from .optsolver import ReducedOperator, SegmentPreconditioner, pcg
from .problems import TestProblem
from .solution import Solution, make_solution
from .trace import Partition1D, TraceDecomposition, build_partition, trace_segment

METHODS = ("opt_pcg", "opt_direct", "coupled")


@dataclass
class Deltas:
    """1D refinement ratios: nodes per tet-face crossing, one per family."""

    uhat: float = 1.0
    psi_d: float = 0.5
    psi_sigma: float = 0.5


@dataclass
class Discretization:
    problem: TestProblem
    n: int
    deltas: Deltas
    mesh: object
    traces: list[TraceDecomposition]
    crossing_counts: list[int]
    partitions_uhat: list[Partition1D]
    partitions_d: list[Partition1D]
    partitions_sigma: list[Partition1D]
    blocks: BlockSystem


def discretize(
    problem: TestProblem,
    n: int,
    deltas: Deltas | None = None,
    with_b: bool = False,
) -> Discretization:
    """Mesh the box, trace every segment and assemble all blocks.

    Partition sizes are normalized by each segment's face-crossing count
    (clamped to one so short interior segments still get a partition).
    """
    deltas = deltas or Deltas()
    mesh = problem.build_mesh(n)
    segments = problem.network.segments
    traces = [trace_segment(mesh, seg) for seg in segments]
    crossings = [max(1, td.crossing_count) for td in traces]
    parts_u = [
        build_partition(seg, "uhat", deltas.uhat, c) for seg, c in zip(segments, crossings)
    ]
    parts_d = [
        build_partition(seg, "psiD", deltas.psi_d, c) for seg, c in zip(segments, crossings)
    ]
    parts_s = [
        build_partition(seg, "psiSigma", deltas.psi_sigma, c)
        for seg, c in zip(segments, crossings)
    ]
    blocks = assemble_system(
        mesh,
        problem.network,
        traces,
        parts_u,
        parts_d,
        parts_s,
        problem.conductivity,
        problem.source,
        problem.boundary,
        with_b=with_b,
    )
    return Discretization(
        problem, n, deltas, mesh, traces, crossings, parts_u, parts_d, parts_s, blocks
    )


def solve_problem(
    disc: Discretization,
    method: str = "opt_pcg",
    tol: float = 1e-6,
    max_iter: int | None = None,
    preconditioner: bool = True,
    x0: np.ndarray | None = None,
) -> Solution:
    """Dispatch to the reduced iterative solver, the direct optimality-system
    solver, or the coupled cross-validation solver."""
    blocks = disc.blocks
    if method == "opt_direct":
        return solve_direct(build_kkt(blocks))
    if method == "coupled":
        if blocks.B_full is None:
            disc = discretize(disc.problem, disc.n, disc.deltas, with_b=True)
            blocks = disc.blocks
        return solve_coupled(blocks)
    if method != "opt_pcg":
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")

    op = ReducedOperator(blocks)
    pre = SegmentPreconditioner(blocks) if preconditioner else None
    result = pcg(op, precond=pre, tol=tol, max_iter=max_iter, x0=x0)
    u, uhat_ext = op.recover(result.X)
    psi_d, psi_sigma = blocks.split_x(result.X)
    p, phat = op.adjoints(u, uhat_ext, psi_d, psi_sigma)
    result.report.constraint_residual_3d = float(
        np.linalg.norm(blocks.A @ u - blocks.S_beta @ psi_sigma - blocks.f)
    ) / max(float(np.linalg.norm(blocks.f)), 1e-300)
    result.report.constraint_residual_1d = float(
        np.linalg.norm(
            blocks.Ahat_ext @ uhat_ext - blocks.Dhat_beta_ext @ psi_d - blocks.g_ext
        )
    ) / max(float(np.linalg.norm(blocks.g_ext)), 1e-300)
    return make_solution(blocks, u, uhat_ext, result.X, result.report, p=p, phat=phat)
