"""Independent reference computations for the tests.

Everything here deliberately avoids the library's tracing/quadrature paths:
point location is brute force over tets, line integrals are dense composite
trapezoid sums, and the reduced matrix is materialized from its closed-form
definition with dense inverses.
"""

import numpy as np


def barycentric(verts4, pts):
    """Barycentric coordinates of points w.r.t. one tetrahedron."""
    T = (verts4[1:] - verts4[0]).T
    lam = np.linalg.solve(T, (np.atleast_2d(pts) - verts4[0]).T).T
    return np.column_stack([1.0 - lam.sum(axis=1), lam])


def locate_lowest(mesh, pts, tol=1e-9):
    """Lowest-index containing tet per point, by exhaustive search."""
    pts = np.atleast_2d(pts)
    owner = np.full(len(pts), -1, dtype=int)
    bary = np.zeros((len(pts), 4))
    for t in range(mesh.num_tets):
        lam = barycentric(mesh.vertices[mesh.tets[t]], pts)
        hit = (owner < 0) & np.all(lam >= -tol, axis=1)
        owner[hit] = t
        bary[hit] = lam[hit]
    return owner, bary


def _trapezoid_weights(n_pts, step):
    w = np.full(n_pts, step)
    w[0] = w[-1] = 0.5 * step
    return w


def hat_matrix(nodes, s):
    """Dense (len(s), len(nodes)) matrix of hat-function values."""
    out = np.empty((len(s), len(nodes)))
    for j in range(len(nodes)):
        e = np.zeros(len(nodes))
        e[j] = 1.0
        out[:, j] = np.interp(s, nodes, e)
    return out


def p1_trace_matrix(mesh, seg, s):
    """Dense (len(s), nv) matrix of 3D P1 basis values along the segment."""
    pts = seg.point(s)
    owner, bary = locate_lowest(mesh, pts)
    assert np.all(owner >= 0), "oracle sample point escaped the mesh"
    out = np.zeros((len(s), mesh.num_vertices))
    rows = np.repeat(np.arange(len(s)), 4)
    cols = mesh.tets[owner].ravel()
    np.add.at(out, (rows, cols), bary.ravel())
    return out


def line_matrix_oracle(mesh, seg, rows_kind, cols_kind, weight_fn=None, step=1e-5,
                       nodes_rows=None, nodes_cols=None):
    """Composite trapezoid approximation of one coupling matrix.

    ``rows_kind``/``cols_kind`` are 'trace' or 'hat'; hat factors need their
    node arrays. The weight is an arclength callback (default 1).
    """
    n_pts = int(round(seg.length / step)) + 1
    s = np.linspace(0.0, seg.length, n_pts)
    w = _trapezoid_weights(n_pts, seg.length / (n_pts - 1))
    if weight_fn is not None:
        w = w * weight_fn(s)

    def factor(kind, nodes):
        if kind == "trace":
            return p1_trace_matrix(mesh, seg, s)
        return hat_matrix(nodes, s)

    R = factor(rows_kind, nodes_rows)
    C = factor(cols_kind, nodes_cols)
    return (R * w[:, None]).T @ C


def dense_reduced_from_definition(blocks):
    """Reduced matrix, constant term and offset from their definitions,
    using dense inverses of the 3D and extended 1D operators."""
    A = blocks.A.toarray()
    Ahat = blocks.Ahat_ext.toarray()
    G = blocks.G.toarray()
    Ghat = blocks.Ghat_ext.toarray()
    D = blocks.D.toarray()
    Shat = blocks.Shat_ext.toarray()
    Sb = blocks.S_beta.toarray()
    Db = blocks.Dhat_beta_ext.toarray()
    MD = blocks.M_D.toarray()
    MS = blocks.M_Sigma.toarray()

    Ainv_Sb = np.linalg.solve(A, Sb)
    Ahat_inv_Db = np.linalg.solve(Ahat, Db)
    M11 = Ahat_inv_Db.T @ Ghat @ Ahat_inv_Db + MD
    M22 = Ainv_Sb.T @ G @ Ainv_Sb + MS
    M12 = -D.T @ Ainv_Sb - Db.T @ np.linalg.solve(Ahat, Shat)
    M = np.block([[M11, M12], [M12.T, M22]])

    p_f = np.linalg.solve(A, blocks.f)
    p_g = np.linalg.solve(Ahat, blocks.g_ext)
    d_d = (Db.T @ np.linalg.solve(Ahat, Ghat @ p_g + blocks.lift_uhat_ext)
           - D.T @ p_f + blocks.lift_psi_d)
    d_s = (Sb.T @ np.linalg.solve(A, G @ p_f + blocks.lift_U) - Shat.T @ p_g
           + blocks.lift_psi_sigma)
    d = np.concatenate([d_d, d_s])
    q = float(p_f @ G @ p_f + p_g @ Ghat @ p_g
              + 2 * p_f @ blocks.lift_U + 2 * p_g @ blocks.lift_uhat_ext
              + 2 * blocks.lift_const)
    return M, d, q


class FakeOperator:
    """Duck-typed stand-in for the reduced operator in solver unit tests."""

    def __init__(self, matrix, d):
        self.matrix = np.asarray(matrix, dtype=float)
        self.d = np.asarray(d, dtype=float)

    @property
    def size(self):
        return len(self.d)

    def apply(self, x):
        return self.matrix @ x

    def functional(self, x):
        return 0.5 * float(x @ self.matrix @ x + 2 * self.d @ x)
