"""Error indicators, convergence-rate fitting and condition-number studies."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import BlockSystem
from .problems import ExactSolution, TestProblem
from .quadrature import tet_rule
from .solution import Solution
from .trace import composite_rule

_DENSE_LIMIT = 5000
_CHUNK = 4096


@dataclass
class ErrorReport:
    """Relative errors of one solve; H1 indicators include the L2 part."""

    e_l2: float
    e_h1: float
    ehat_l2: float
    ehat_h1: float
    epsi_d: float
    epsi_sigma: float
    params: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        row = dict(self.params)
        row.update(
            E_L2=self.e_l2,
            E_H1=self.e_h1,
            Ehat_L2=self.ehat_l2,
            Ehat_H1=self.ehat_h1,
            Epsi_D=self.epsi_d,
            Epsi_Sigma=self.epsi_sigma,
        )
        return row

    def indicators(self) -> dict:
        return {
            "E_L2": self.e_l2,
            "E_H1": self.e_h1,
            "Ehat_L2": self.ehat_l2,
            "Ehat_H1": self.ehat_h1,
            "Epsi_D": self.epsi_d,
            "Epsi_Sigma": self.epsi_sigma,
        }


def _rel(num: float, den: float) -> float:
    num, den = float(np.sqrt(num)), float(np.sqrt(den))
    return num / den if den > 0 else num


def compute_errors(
    solution: Solution,
    exact: ExactSolution,
    blocks: BlockSystem,
    quad_degree: int = 8,
) -> ErrorReport:
    """All six relative error indicators.

    3D integrals use a tetrahedron rule of the requested degree (the default
    integrates the quartic manufactured field exactly, so refining the rule
    only moves the indicators at rounding level); 1D integrals use the
    composite 3-point Gauss rule on each partition.
    """
    mesh = blocks.mesh
    u_full = solution.U_full

    bary, wq = tet_rule(quad_degree)
    v = mesh.vertices[mesh.tets]
    edges = np.swapaxes(v[:, 1:] - v[:, :1], 1, 2)
    vol = np.abs(np.linalg.det(edges)) / 6.0
    inv = np.linalg.inv(edges)
    grads = np.empty((mesh.num_tets, 4, 3))
    grads[:, 1:, :] = inv
    grads[:, 0, :] = -inv.sum(axis=1)

    num_l2 = den_l2 = num_g = den_g = 0.0
    for start in range(0, mesh.num_tets, _CHUNK):
        sl = slice(start, min(start + _CHUNK, mesh.num_tets))
        pts = np.einsum("qi,tid->tqd", bary, v[sl])
        flat = pts.reshape(-1, 3)
        ue = np.asarray(exact.u(flat), dtype=float).reshape(pts.shape[:2])
        uh = u_full[mesh.tets[sl]] @ bary.T
        wv = vol[sl][:, None] * wq[None, :]
        num_l2 += float(np.sum(wv * (ue - uh) ** 2))
        den_l2 += float(np.sum(wv * ue**2))
        ge = np.asarray(exact.grad_u(flat), dtype=float).reshape(*pts.shape[:2], 3)
        gh = np.einsum("ti,tid->td", u_full[mesh.tets[sl]], grads[sl])
        gd = ge - gh[:, None, :]
        num_g += float(np.sum(wv * np.sum(gd**2, axis=2)))
        den_g += float(np.sum(wv * np.sum(ge**2, axis=2)))

    e_l2 = _rel(num_l2, den_l2)
    e_h1 = _rel(num_l2 + num_g, den_l2 + den_g)

    nh_l2 = dh_l2 = nh_g = dh_g = 0.0
    npd = dpd = nps = dps = 0.0
    for i in range(len(blocks.network.segments)):
        part = blocks.uhat.partitions[i]
        rule = composite_rule(part.nodes)
        ue = np.asarray(exact.uhat(i, rule.points), dtype=float)
        uh = part.interpolate(solution.Uhat[i], rule.points)
        nh_l2 += float(np.sum(rule.weights * (ue - uh) ** 2))
        dh_l2 += float(np.sum(rule.weights * ue**2))
        de = np.asarray(exact.uhat_ds(i, rule.points), dtype=float)
        dofs, dvals = part.hat_basis_deriv(rule.points)
        dh = np.sum(solution.Uhat[i][dofs] * dvals, axis=1)
        nh_g += float(np.sum(rule.weights * (de - dh) ** 2))
        dh_g += float(np.sum(rule.weights * de**2))

        part_d = blocks.psi_d.partitions[i]
        rule = composite_rule(part_d.nodes)
        te = np.asarray(exact.trace_u(i, rule.points), dtype=float)
        ph = part_d.interpolate(solution.PsiD[i], rule.points)
        npd += float(np.sum(rule.weights * (te - ph) ** 2))
        dpd += float(np.sum(rule.weights * te**2))

        part_s = blocks.psi_sigma.partitions[i]
        rule = composite_rule(part_s.nodes)
        ue = np.asarray(exact.uhat(i, rule.points), dtype=float)
        ph = part_s.interpolate(solution.PsiSigma[i], rule.points)
        nps += float(np.sum(rule.weights * (ue - ph) ** 2))
        dps += float(np.sum(rule.weights * ue**2))

    params = {
        "h": blocks.mesh.h,
        "N": blocks.n_u,
        "Nhat": blocks.n_uhat,
        "N_D": blocks.n_d,
        "N_Sigma": blocks.n_sigma,
    }
    return ErrorReport(
        e_l2=e_l2,
        e_h1=e_h1,
        ehat_l2=_rel(nh_l2, dh_l2),
        ehat_h1=_rel(nh_l2 + nh_g, dh_l2 + dh_g),
        epsi_d=_rel(npd, dpd),
        epsi_sigma=_rel(nps, dps),
        params=params,
    )


def fit_slope(h: np.ndarray, errors: np.ndarray) -> float:
    """Least-squares slope of log(error) against log(h)."""
    h = np.asarray(h, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(h) < 2:
        raise ValueError("at least two mesh sizes are required to fit a slope")
    return float(np.polyfit(np.log(h), np.log(errors), 1)[0])


CSV_HEADER = "h,N,Nhat,E_L2,E_H1,Ehat_L2,Ehat_H1,Epsi_D,Epsi_Sigma"


@dataclass
class StudyResult:
    reports: list[ErrorReport]
    slopes: dict[str, float]

    def write_csv(self, path) -> None:
        with open(path, "w") as fp:
            fp.write(CSV_HEADER + "\n")
            for r in self.reports:
                p = r.params
                fp.write(
                    f"{p['h']:.17g},{p['N']},{p['Nhat']},"
                    f"{r.e_l2:.17g},{r.e_h1:.17g},{r.ehat_l2:.17g},"
                    f"{r.ehat_h1:.17g},{r.epsi_d:.17g},{r.epsi_sigma:.17g}\n"
                )

    def write_slopes(self, path) -> None:
        with open(path, "w") as fp:
            fp.write("indicator,slope\n")
            for key in sorted(self.slopes):
                fp.write(f"{key},{self.slopes[key]:.17g}\n")


def convergence_study(
    problem: TestProblem,
    n_values,
    deltas=None,
    solver: str = "opt_pcg",
    tol: float = 1e-10,
    quad_degree: int = 8,
) -> StudyResult:
    """Solve on a mesh sequence and fit per-indicator convergence slopes."""
    from . import driver

    if len(n_values) < 2:
        raise ValueError("a convergence study needs at least two meshes")
    if problem.exact is None:
        raise ValueError("convergence study requires a problem with an exact solution")
    reports = []
    for n in n_values:
        disc = driver.discretize(problem, n, deltas)
        sol = driver.solve_problem(disc, method=solver, tol=tol)
        reports.append(compute_errors(sol, problem.exact, disc.blocks, quad_degree))
    hs = np.array([r.params["h"] for r in reports])
    slopes = {
        key: fit_slope(hs, np.array([r.indicators()[key] for r in reports]))
        for key in reports[0].indicators()
    }
    return StudyResult(reports, slopes)


# ---------------------------------------------------------------------------
# Conditioning
# ---------------------------------------------------------------------------


@dataclass
class CondEstimate:
    value: float
    lambda_min: float
    lambda_max: float
    converged: bool
    achieved_tol: float


def condition_number(operator, method: str = "dense_svd", tol: float = 1e-6):
    """Spectral condition number.

    ``dense_svd`` (matrices up to order 5000) returns sigma_max / sigma_min
    from a full SVD, which is well defined for indefinite saddle-point
    matrices. ``power_iteration`` treats the input as an SPD operator (a
    matrix or an object with ``apply``/``size``) and estimates both extreme
    eigenvalues iteratively; it returns a :class:`CondEstimate`.
    """
    if method == "dense_svd":
        mat = operator.toarray() if sp.issparse(operator) else np.asarray(operator)
        if mat.shape[0] != mat.shape[1]:
            raise ValueError("condition number needs a square matrix")
        if mat.shape[0] > _DENSE_LIMIT:
            raise ValueError(
                f"dense SVD limited to order {_DENSE_LIMIT}; "
                "use method='power_iteration'"
            )
        s = np.linalg.svd(mat, compute_uv=False)
        return float(s[0] / s[-1])
    if method == "power_iteration":
        return _spd_condition(operator, tol)
    raise ValueError("method must be 'dense_svd' or 'power_iteration'")


def _as_matvec(operator):
    if sp.issparse(operator):
        return (lambda x: operator @ x), operator.shape[0]
    if hasattr(operator, "apply"):
        return operator.apply, operator.size
    mat = np.asarray(operator)
    return (lambda x: mat @ x), mat.shape[0]


def _spd_condition(operator, tol: float, max_iter: int = 2000) -> CondEstimate:
    matvec, n = _as_matvec(operator)
    rng = np.random.default_rng(1234)

    def power(apply_fn):
        v = rng.standard_normal(n)
        v /= np.linalg.norm(v)
        lam = 0.0
        achieved = np.inf
        for _ in range(max_iter):
            w = apply_fn(v)
            nw = np.linalg.norm(w)
            if nw == 0.0:
                return 0.0, 0.0, True
            lam_new = float(v @ w)
            achieved = abs(lam_new - lam) / max(abs(lam_new), 1e-300)
            v = w / nw
            lam = lam_new
            if achieved <= tol:
                return lam, achieved, True
        return lam, achieved, False

    lam_max, ach_max, ok_max = power(matvec)

    import scipy.sparse.linalg as spla

    lin = spla.LinearOperator((n, n), matvec=matvec)

    def inv_apply(v):
        x, info = spla.cg(lin, v, rtol=1e-12, atol=0.0, maxiter=50 * n)
        if info != 0:
            raise RuntimeError("inner CG for the inverse power iteration failed")
        return x

    inv_lam, ach_min, ok_min = power(inv_apply)
    lam_min = 1.0 / inv_lam if inv_lam != 0 else np.inf
    return CondEstimate(
        value=float(lam_max / lam_min),
        lambda_min=float(lam_min),
        lambda_max=float(lam_max),
        converged=ok_max and ok_min,
        achieved_tol=float(max(ach_max, ach_min)),
    )


def dense_reduced_matrix(op) -> np.ndarray:
    """Materialize the reduced operator by applying it to identity columns."""
    n = op.size
    M = np.empty((n, n))
    eye = np.eye(n)
    for k in range(n):
        M[:, k] = op.apply(eye[:, k])
    return M
