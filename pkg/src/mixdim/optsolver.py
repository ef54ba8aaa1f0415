"""Matrix-free reduced solver: gradient system and preconditioned CG.

Eliminating the states from the optimality system leaves a symmetric positive
definite system in the interface variables alone. Its operator is never
assembled: one application costs four local solves (two forward, then two
adjoint) against factorizations of the 3D and 1D operators computed once.
The forward pair is independent and so is the adjoint pair, as are the
per-segment preconditioner solves; everything here is deterministic and
single-threaded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .assembly import BlockSystem
from .solution import SolveReport


class SolverError(RuntimeError):
    pass


class SpdViolationError(SolverError):
    """A curvature term came out non-positive; the operator is not SPD."""


class _EmptyFactor:
    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return np.zeros(0)


class ReducedOperator:
    """Gradient-system operator, its constant term and offset.

    Holds factorizations of the 3D and (junction-extended) 1D operators plus
    the cached particular solves used to build the constant term. ``apply``
    is linear, symmetric and positive definite on nonzero vectors.
    """

    def __init__(self, blocks: BlockSystem):
        self.blocks = blocks
        self.lu_A = spla.splu(blocks.A.tocsc())
        if blocks.n_uhat_ext > 0:
            self.lu_Ahat = spla.splu(blocks.Ahat_ext.tocsc())
        else:
            self.lu_Ahat = _EmptyFactor()
        self.p_f = self.lu_A.solve(blocks.f)
        self.p_g = self.lu_Ahat.solve(blocks.g_ext)
        self.d = self._build_d()
        self.q = self._build_q()

    @property
    def size(self) -> int:
        return self.blocks.n_d + self.blocks.n_sigma

    def _build_d(self) -> np.ndarray:
        b = self.blocks
        w_hat = self.lu_Ahat.solve(b.Ghat_ext @ self.p_g + b.lift_uhat_ext)
        w = self.lu_A.solve(b.G @ self.p_f + b.lift_U)
        d_d = b.Dhat_beta_ext.T @ w_hat - b.D.T @ self.p_f + b.lift_psi_d
        d_s = b.S_beta.T @ w - b.Shat_ext.T @ self.p_g + b.lift_psi_sigma
        return np.concatenate([d_d, d_s])

    def _build_q(self) -> float:
        b = self.blocks
        return float(
            self.p_f @ (b.G @ self.p_f)
            + self.p_g @ (b.Ghat_ext @ self.p_g)
            + 2.0 * self.p_f @ b.lift_U
            + 2.0 * self.p_g @ b.lift_uhat_ext
            + 2.0 * b.lift_const
        )

    def apply(self, dx: np.ndarray) -> np.ndarray:
        """Operator application through four local solves."""
        b = self.blocks
        d_psi_d, d_psi_sigma = b.split_x(dx)
        du = self.lu_A.solve(b.S_beta @ d_psi_sigma)
        duhat = self.lu_Ahat.solve(b.Dhat_beta_ext @ d_psi_d)
        dp = self.lu_A.solve(b.G @ du - b.D @ d_psi_d)
        dphat = self.lu_Ahat.solve(b.Ghat_ext @ duhat - b.Shat_ext @ d_psi_sigma)
        out_d = b.Dhat_beta_ext.T @ dphat - b.D.T @ du + b.M_D @ d_psi_d
        out_s = b.S_beta.T @ dp - b.Shat_ext.T @ duhat + b.M_Sigma @ d_psi_sigma
        return np.concatenate([out_d, out_s])

    def functional(self, x: np.ndarray) -> float:
        """Value of the reduced quadratic functional at x."""
        return 0.5 * float(x @ self.apply(x) + 2.0 * self.d @ x + self.q)

    def recover(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """States satisfying the constraints for the given interface values."""
        b = self.blocks
        psi_d, psi_sigma = b.split_x(x)
        u = self.lu_A.solve(b.S_beta @ psi_sigma + b.f)
        uhat = self.lu_Ahat.solve(b.Dhat_beta_ext @ psi_d + b.g_ext)
        return u, uhat

    def adjoints(
        self, u: np.ndarray, uhat_ext: np.ndarray, psi_d: np.ndarray, psi_sigma: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        b = self.blocks
        p = self.lu_A.solve(b.G @ u - b.D @ psi_d + b.lift_U)
        phat = self.lu_Ahat.solve(
            b.Ghat_ext @ uhat_ext - b.Shat_ext @ psi_sigma + b.lift_uhat_ext
        )
        return p, phat


class SegmentPreconditioner:
    """Block-diagonal preconditioner built from single-segment factors.

    The top-left block reproduces, segment by segment, the first diagonal
    block of the reduced operator with the junction coupling dropped; the
    bottom-right block keeps only the interface mass. Each block is factored
    densely once (per-segment sizes are small) and applied exactly.
    """

    def __init__(self, blocks: BlockSystem):
        self.blocks = blocks
        self._top = []
        self._bottom = []
        for i in range(len(blocks.network.segments)):
            di = blocks.psi_d.seg_slice(i)
            si = blocks.psi_sigma.seg_slice(i)
            md = blocks.M_D[di, di].toarray()
            gi = blocks.uhat.seg_free_global(i)
            if len(gi):
                ai = blocks.Ahat_sharp[gi][:, gi].toarray()
                dbi = blocks.Dhat_beta[gi][:, di].toarray()
                ghi = blocks.Ghat[gi][:, gi].toarray()
                try:
                    y = sla.solve(ai, dbi, assume_a="sym")
                except sla.LinAlgError as exc:
                    raise SolverError(
                        f"singular single-segment operator for segment {i}"
                    ) from exc
                top = y.T @ ghi @ y + md
            else:
                top = md
            try:
                self._top.append(sla.cho_factor(top))
                self._bottom.append(sla.cho_factor(blocks.M_Sigma[si, si].toarray()))
            except sla.LinAlgError as exc:
                raise SolverError(
                    f"preconditioner block for segment {i} is not positive definite"
                ) from exc

    def solve(self, r: np.ndarray) -> np.ndarray:
        b = self.blocks
        z = np.empty_like(r)
        r_d, r_s = b.split_x(r)
        z_d, z_s = b.split_x(z)
        for i in range(len(b.network.segments)):
            di = b.psi_d.seg_slice(i)
            si = b.psi_sigma.seg_slice(i)
            z_d[di] = sla.cho_solve(self._top[i], r_d[di])
            z_s[si] = sla.cho_solve(self._bottom[i], r_s[si])
        return z


@dataclass
class PcgResult:
    X: np.ndarray
    report: SolveReport
    states: list[np.ndarray] | None = None
    residual_states: list[np.ndarray] | None = None


def pcg(
    op,
    precond=None,
    tol: float = 1e-6,
    max_iter: int | None = None,
    x0: np.ndarray | None = None,
    record_states: bool = False,
) -> PcgResult:
    """Preconditioned conjugate gradients on the reduced gradient system.

    Stops when ||r_k|| / ||d|| <= tol in the Euclidean norm (the residual is
    the gradient, so this is a relative gradient test). Returns a
    non-convergence report carrying the last state when ``max_iter`` is
    exceeded; raises :class:`SpdViolationError` if a curvature or
    preconditioner product comes out non-positive.
    """
    if max_iter is None:
        max_iter = 10 * op.size
    d = op.d
    nd = float(np.linalg.norm(d))
    method = "opt_pcg" if precond is not None else "opt_cg"
    if nd == 0.0:
        report = SolveReport(method=method, iterations=0, converged=True,
                             residuals=[(0.0, 0.0)])
        x = np.zeros(op.size) if x0 is None else np.asarray(x0, dtype=float).copy()
        return PcgResult(x, report, [x.copy()] if record_states else None)

    x = np.zeros(op.size) if x0 is None else np.asarray(x0, dtype=float).copy()
    r = op.apply(x) + d
    z = precond.solve(r) if precond is not None else r.copy()
    dx = -z
    rz = float(r @ z)
    k = 0
    res = float(np.linalg.norm(r))
    history = [(res, res / nd)]
    states = [x.copy()] if record_states else None
    residual_states = [r.copy()] if record_states else None

    while res / nd > tol and k < max_iter:
        if rz <= 0.0:
            raise SpdViolationError(
                f"preconditioned product r'z = {rz:.3e} <= 0 at iteration {k}"
            )
        mdx = op.apply(dx)
        curv = float(dx @ mdx)
        if curv <= 0.0:
            raise SpdViolationError(
                f"curvature dX' M dX = {curv:.3e} <= 0 at iteration {k}"
            )
        zeta = rz / curv
        x = x + zeta * dx
        r = r + zeta * mdx
        z = precond.solve(r) if precond is not None else r.copy()
        rz_next = float(r @ z)
        beta = rz_next / rz
        dx = -z + beta * dx
        rz = rz_next
        k += 1
        res = float(np.linalg.norm(r))
        history.append((res, res / nd))
        if record_states:
            states.append(x.copy())
            residual_states.append(r.copy())

    converged = res / nd <= tol
    report = SolveReport(
        method=method,
        iterations=k,
        converged=converged,
        residuals=history,
        message="" if converged else f"no convergence within {max_iter} iterations",
    )
    return PcgResult(x, report, states, residual_states)
