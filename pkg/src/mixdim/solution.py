"""Solution containers shared by the direct, iterative and coupled solvers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SolveReport:
    method: str
    iterations: int = 0
    converged: bool = True
    residuals: list[tuple[float, float]] = field(default_factory=list)
    norm: str = "euclidean"
    constraint_residual_3d: float = 0.0
    constraint_residual_1d: float = 0.0
    message: str = ""

    def write_residual_csv(self, path) -> None:
        with open(path, "w") as fp:
            fp.write("iter,residual,relative_residual\n")
            for k, (absres, relres) in enumerate(self.residuals):
                fp.write(f"{k},{absres:.17g},{relres:.17g}\n")


@dataclass
class Solution:
    """State, interface and adjoint variables of one solve.

    ``U`` holds the free 3D DOFs and ``U_full`` the complete vertex field
    including Dirichlet values; per-segment arrays include endpoint values.
    """

    U: np.ndarray
    U_full: np.ndarray
    Uhat: list[np.ndarray]
    PsiD: list[np.ndarray]
    PsiSigma: list[np.ndarray]
    X: np.ndarray
    multipliers: np.ndarray
    P: np.ndarray | None
    Phat: np.ndarray | None
    report: SolveReport


def make_solution(
    blocks,
    u_free: np.ndarray,
    uhat_ext: np.ndarray,
    x: np.ndarray,
    report: SolveReport,
    p: np.ndarray | None = None,
    phat: np.ndarray | None = None,
) -> Solution:
    psi_d_vec, psi_sigma_vec = (
        blocks.split_x(x) if len(x) else (np.zeros(blocks.n_d), np.zeros(blocks.n_sigma))
    )
    return Solution(
        U=u_free,
        U_full=blocks.dof3d.expand(u_free),
        Uhat=blocks.uhat.per_segment(uhat_ext[: blocks.n_uhat]),
        PsiD=blocks.psi_d.per_segment(psi_d_vec) if len(x) else [],
        PsiSigma=blocks.psi_sigma.per_segment(psi_sigma_vec) if len(x) else [],
        X=x,
        multipliers=uhat_ext[blocks.n_uhat :],
        P=p,
        Phat=phat,
        report=report,
    )
