"""First-order optimality system assembled in full, and its direct solve.

This is the reference path: a sparse symmetric-indefinite factorization of
the whole saddle-point matrix. It is kept available at any size as a
verification oracle (with a warning above 2e5 unknowns); the production path
is the reduced solver in :mod:`mixdim.optsolver`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import BlockSystem, block_matrix
from .solution import Solution, SolveReport, make_solution

_SIZE_WARN = 200_000


class WellPosednessError(RuntimeError):
    """The saddle-point factorization failed; a structural invariant is broken."""


@dataclass
class KktSystem:
    """Sparse optimality system with unknowns [U, Uhat, PsiD, PsiSigma, -P, -Phat].

    The multiplier blocks of the 1D operator are carried inside the Uhat
    unknowns. The adjoint 1D block is the (symmetric) 1D operator itself; the
    transpose of the 3D operator appears in the first row as usual.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    blocks: BlockSystem
    sizes: tuple[int, int, int, int]

    @property
    def order(self) -> int:
        return self.matrix.shape[0]

    def split(self, x: np.ndarray):
        n, nh, nd, ns = self.sizes
        parts = np.split(x, np.cumsum([n, nh, nd, ns, n])[:5])
        return parts  # U, Uhat_ext, PsiD, PsiSigma, -P, -Phat_ext


def gramian(blocks: BlockSystem) -> sp.csr_matrix:
    """Symmetric positive semi-definite functional matrix on the states."""
    n, nh = blocks.n_u, blocks.n_uhat_ext
    nd, ns = blocks.n_d, blocks.n_sigma
    return block_matrix(
        [
            [blocks.G, None, -blocks.D, None],
            [None, blocks.Ghat_ext, None, -blocks.Shat_ext],
            [-blocks.D.T, None, blocks.M_D, None],
            [None, -blocks.Shat_ext.T, None, blocks.M_Sigma],
        ],
        [n, nh, nd, ns],
        [n, nh, nd, ns],
    )


def constraint_matrix(blocks: BlockSystem) -> sp.csr_matrix:
    n, nh = blocks.n_u, blocks.n_uhat_ext
    nd, ns = blocks.n_d, blocks.n_sigma
    return block_matrix(
        [
            [blocks.A, None, None, -blocks.S_beta],
            [None, blocks.Ahat_ext, -blocks.Dhat_beta_ext, None],
        ],
        [n, nh],
        [n, nh, nd, ns],
    )


def build_kkt(blocks: BlockSystem) -> KktSystem:
    n, nh = blocks.n_u, blocks.n_uhat_ext
    nd, ns = blocks.n_d, blocks.n_sigma
    sizes = [n, nh, nd, ns, n, nh]
    K = block_matrix(
        [
            [blocks.G, None, -blocks.D, None, blocks.A.T, None],
            [None, blocks.Ghat_ext, None, -blocks.Shat_ext, None, blocks.Ahat_ext.T],
            [-blocks.D.T, None, blocks.M_D, None, None, -blocks.Dhat_beta_ext.T],
            [None, -blocks.Shat_ext.T, None, blocks.M_Sigma, -blocks.S_beta.T, None],
            [blocks.A, None, None, -blocks.S_beta, None, None],
            [None, blocks.Ahat_ext, -blocks.Dhat_beta_ext, None, None, None],
        ],
        sizes,
        sizes,
    )
    rhs = np.concatenate(
        [
            -blocks.lift_U,
            -blocks.lift_uhat_ext,
            -blocks.lift_psi_d,
            -blocks.lift_psi_sigma,
            blocks.f,
            blocks.g_ext,
        ]
    )
    return KktSystem(K, rhs, blocks, (n, nh, nd, ns))


def solve_direct(kkt: KktSystem, permc_spec: str = "COLAMD") -> Solution:
    """Factor and solve the full optimality system."""
    if kkt.order > _SIZE_WARN:
        warnings.warn(
            f"direct saddle-point solve with {kkt.order} unknowns; "
            "the reduced iterative solver is recommended at this size",
            stacklevel=2,
        )
    try:
        lu = spla.splu(kkt.matrix.tocsc(), permc_spec=permc_spec)
        x = lu.solve(kkt.rhs)
    except RuntimeError as exc:
        raise WellPosednessError(f"saddle-point factorization failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise WellPosednessError("saddle-point solve produced non-finite values")

    blocks = kkt.blocks
    u, uhat_ext, psi_d, psi_sigma, m_p, m_phat = kkt.split(x)
    res_3d = blocks.A @ u - blocks.S_beta @ psi_sigma - blocks.f
    res_1d = blocks.Ahat_ext @ uhat_ext - blocks.Dhat_beta_ext @ psi_d - blocks.g_ext
    report = SolveReport(
        method="opt_direct",
        converged=True,
        constraint_residual_3d=float(np.linalg.norm(res_3d))
        / max(float(np.linalg.norm(blocks.f)), 1e-300),
        constraint_residual_1d=float(np.linalg.norm(res_1d))
        / max(float(np.linalg.norm(blocks.g_ext)), 1e-300),
    )
    return make_solution(
        blocks,
        u,
        uhat_ext,
        np.concatenate([psi_d, psi_sigma]),
        report,
        p=-m_p,
        phat=-m_phat,
    )


def evaluate_functional(
    blocks: BlockSystem,
    u: np.ndarray,
    uhat: np.ndarray,
    psi_d: np.ndarray,
    psi_sigma: np.ndarray,
) -> float:
    """Squared interface mismatch 0.5 * (|U - PsiD|^2 + |Uhat - PsiSigma|^2).

    Accepts the free 1D vector with or without trailing junction multipliers.
    """
    uh = uhat[: blocks.n_uhat]
    quad = 0.5 * (
        u @ (blocks.G @ u)
        + uh @ (blocks.Ghat @ uh)
        + psi_d @ (blocks.M_D @ psi_d)
        + psi_sigma @ (blocks.M_Sigma @ psi_sigma)
    )
    quad -= u @ (blocks.D @ psi_d) + uh @ (blocks.Shat @ psi_sigma)
    lin = (
        u @ blocks.lift_U
        + uh @ blocks.lift_Uhat
        + psi_d @ blocks.lift_psi_d
        + psi_sigma @ blocks.lift_psi_sigma
    )
    return float(quad + lin + blocks.lift_const)
