"""Built-in problems: a manufactured verification case and seeded synthetic
network cases for cross-validation and solver benchmarking."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geom import (
    Dirichlet,
    SegmentNetwork,
    Segment,
    TetMesh,
    build_box_mesh,
    generate_random_network,
)

BOX = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))


class ManufacturedSolutionError(RuntimeError):
    """A declared exact solution fails its strong-form identities."""


@dataclass
class ExactSolution:
    """Closed-form fields of a manufactured solution.

    3D callbacks take point arrays (k, 3); 1D callbacks take a segment index
    and arclengths. ``flux_div`` is d/ds of (axial conductivity * section
    area * d uhat/ds), and ``trace_u`` the 3D solution sampled on the lateral
    surface as a function of arclength.
    """

    u: Callable[[np.ndarray], np.ndarray]
    grad_u: Callable[[np.ndarray], np.ndarray]
    laplacian_u: Callable[[np.ndarray], np.ndarray]
    uhat: Callable[[int, np.ndarray], np.ndarray]
    uhat_ds: Callable[[int, np.ndarray], np.ndarray]
    flux_div: Callable[[int, np.ndarray], np.ndarray]
    trace_u: Callable[[int, np.ndarray], np.ndarray]


@dataclass
class TestProblem:
    """Mesh recipe, network, coefficients and boundary data of one test case."""

    name: str
    network: SegmentNetwork
    conductivity: float
    source: Callable[[np.ndarray], np.ndarray]
    boundary: dict[str, tuple[str, Callable[[np.ndarray], np.ndarray]]]
    bounds: tuple = BOX
    exact: ExactSolution | None = None

    def build_mesh(self, n: int) -> TetMesh:
        return build_box_mesh(n, *self.bounds)


def tp1() -> TestProblem:
    """Single axial segment in the unit-edge-2 cube with known solution.

    The 3D field is quartic, the 1D field quadratic; lateral faces carry the
    exact Dirichlet data, top and bottom faces the exact flux, and the
    segment endpoints the exact value 1. All data below were derived
    symbolically from the closed forms once and hard-coded.
    """
    radius = 1e-2
    beta = 2.0 * radius / (2.0 + radius**2)
    area = math.pi * radius**2

    seg = Segment(
        id=0,
        a=(0.0, 0.0, -1.0),
        b=(0.0, 0.0, 1.0),
        radius=radius,
        beta=beta,
        conductivity=lambda s: (s - 1.0) ** 2 / 3.0 + 0.5,
        source=3.0,
        bc_a=Dirichlet(1.0),
        bc_b=Dirichlet(1.0),
    )
    network = SegmentNetwork([seg])

    def u(p):
        p = np.atleast_2d(p)
        return 0.5 * (p[:, 0] ** 2 + p[:, 1] ** 2) * (p[:, 2] ** 2 - 1.0) + 1.0

    def grad_u(p):
        p = np.atleast_2d(p)
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        return np.column_stack([(z**2 - 1.0) * x, (z**2 - 1.0) * y, (x**2 + y**2) * z])

    def laplacian_u(p):
        p = np.atleast_2d(p)
        return 2.0 * (p[:, 2] ** 2 - 1.0) + p[:, 0] ** 2 + p[:, 1] ** 2

    def source(p):
        p = np.atleast_2d(p)
        return 2.0 - p[:, 0] ** 2 - p[:, 1] ** 2 - 2.0 * p[:, 2] ** 2

    def top_bottom_flux(p):
        p = np.atleast_2d(p)
        return p[:, 0] ** 2 + p[:, 1] ** 2

    exact = ExactSolution(
        u=u,
        grad_u=grad_u,
        laplacian_u=laplacian_u,
        uhat=lambda i, s: 2.0 - (np.asarray(s, dtype=float) - 1.0) ** 2,
        uhat_ds=lambda i, s: -2.0 * (np.asarray(s, dtype=float) - 1.0),
        flux_div=lambda i, s: -area * (2.0 * (np.asarray(s, dtype=float) - 1.0) ** 2 + 1.0),
        trace_u=lambda i, s: 0.5 * radius**2 * ((np.asarray(s, dtype=float) - 1.0) ** 2 - 1.0)
        + 1.0,
    )
    return TestProblem(
        name="tp1",
        network=network,
        conductivity=1.0,
        source=source,
        boundary={
            "lateral": ("dirichlet", u),
            "top": ("neumann", top_bottom_flux),
            "bottom": ("neumann", top_bottom_flux),
        },
        exact=exact,
    )


def zero_problem() -> TestProblem:
    """All-zero data and solutions; used to exercise the residual gate."""
    seg = Segment(
        id=0, a=(0.0, 0.0, -0.5), b=(0.0, 0.0, 0.5), radius=1e-2, beta=1.0,
        conductivity=1.0, source=0.0, bc_a=Dirichlet(0.0), bc_b=Dirichlet(0.0),
    )
    zeros3 = lambda p: np.zeros(len(np.atleast_2d(p)))
    zeros1 = lambda i, s: np.zeros_like(np.asarray(s, dtype=float))
    exact = ExactSolution(
        u=zeros3,
        grad_u=lambda p: np.zeros((len(np.atleast_2d(p)), 3)),
        laplacian_u=zeros3,
        uhat=zeros1,
        uhat_ds=zeros1,
        flux_div=zeros1,
        trace_u=zeros1,
    )
    return TestProblem(
        name="zero",
        network=SegmentNetwork([seg]),
        conductivity=1.0,
        source=zeros3,
        boundary={
            "lateral": ("dirichlet", zeros3),
            "top": ("dirichlet", zeros3),
            "bottom": ("dirichlet", zeros3),
        },
        exact=exact,
    )


@dataclass
class ResidualReport:
    max_residual_3d: float
    max_residual_1d: float
    max_residual_interface: float

    @property
    def max_residual(self) -> float:
        return max(self.max_residual_3d, self.max_residual_1d, self.max_residual_interface)


def residual_check(
    problem: TestProblem, tol: float = 1e-10, samples: int = 41
) -> ResidualReport:
    """Verify the declared exact solution against the strong equations.

    Checks, on sample grids: the 3D equation, the 1D balance including the
    membrane exchange with the 3D trace, and the membrane flux condition on
    the lateral surface. Raises :class:`ManufacturedSolutionError` above
    ``tol`` (max norm).
    """
    if problem.exact is None:
        raise ValueError(f"problem {problem.name!r} declares no exact solution")
    ex = problem.exact
    lo, hi = np.asarray(problem.bounds[0]), np.asarray(problem.bounds[1])

    xs = [np.linspace(lo[k], hi[k], 11) for k in range(3)]
    grid = np.stack(np.meshgrid(*xs, indexing="ij"), axis=-1).reshape(-1, 3)
    r3 = np.max(
        np.abs(-problem.conductivity * ex.laplacian_u(grid) - problem.source(grid))
    )

    r1 = 0.0
    rint = 0.0
    for i, seg in enumerate(problem.network.segments):
        s = np.linspace(0.0, seg.length, samples)
        uhat = ex.uhat(i, s)
        utrace = ex.trace_u(i, s)
        balance = (
            -ex.flux_div(i, s)
            + seg.beta * seg.perimeter(s) * (uhat - utrace)
            - seg.area(s) * seg.source_at(s)
        )
        r1 = max(r1, float(np.max(np.abs(balance))))

        # Membrane condition on the lateral surface: the 3D flux toward the
        # segment equals beta times the pressure jump, checked on a ring of
        # directions around the axis.
        axis = seg.direction
        ref = np.array([1.0, 0.0, 0.0])
        if abs(np.dot(ref, axis)) > 0.9:
            ref = np.array([0.0, 1.0, 0.0])
        e1 = np.cross(axis, ref)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(axis, e1)
        for theta in np.linspace(0.0, 2.0 * math.pi, 13)[:-1]:
            radial = math.cos(theta) * e1 + math.sin(theta) * e2
            pts = seg.point(s) + seg.radius * radial
            flux_in = -problem.conductivity * (ex.grad_u(pts) @ radial)
            jump = seg.beta * (uhat - utrace)
            rint = max(rint, float(np.max(np.abs(flux_in - jump))))

    report = ResidualReport(float(r3), r1, rint)
    if report.max_residual > tol:
        raise ManufacturedSolutionError(
            f"manufactured solution of {problem.name!r} violates the strong "
            f"equations: max residual {report.max_residual:.3e} > {tol:.1e}"
        )
    return report


def tp2_like(seed: int = 0, count: int = 19) -> TestProblem:
    """Junction-rich seeded network with the dense-exchange coefficient set:
    unit 3D conductivity, no 3D source, axial conductivity 100, line source
    100 and membrane coefficient 5e-2; homogeneous Dirichlet on all faces and
    at face-touching endpoints, natural conditions at interior endpoints.

    The original geometry behind these coefficients is not published, so the
    network is synthetic."""
    network = generate_random_network(
        count,
        box=BOX,
        min_length=0.35,
        seed=seed,
        radius=1e-2,
        beta=5e-2,
        conductivity=100.0,
        source=100.0,
        inlet_value=0.0,
        inlet_count=2,
    )
    zero = lambda p: np.zeros(len(np.atleast_2d(p)))
    return TestProblem(
        name="tp2_like",
        network=network,
        conductivity=1.0,
        source=zero,
        boundary={
            "lateral": ("dirichlet", zero),
            "top": ("dirichlet", zero),
            "bottom": ("dirichlet", zero),
        },
    )


def cgtest_like(seed: int = 0, count: int = 50) -> TestProblem:
    """Seeded vessel-like clusters with the benchmark coefficient set:
    3D conductivity 2e-4, axial conductivity 30, membrane coefficient 1e-2,
    inflow 2e-5 across all faces and inlet values 5e-3 on the bottom face."""
    network = generate_random_network(
        count,
        box=BOX,
        min_length=0.25,
        seed=seed,
        radius=1e-2,
        beta=1e-2,
        conductivity=30.0,
        source=0.0,
        inlet_value=5e-3,
        inlet_count=2,
    )
    zero = lambda p: np.zeros(len(np.atleast_2d(p)))
    influx = lambda p: np.full(len(np.atleast_2d(p)), 2e-5)
    return TestProblem(
        name="cgtest_like",
        network=network,
        conductivity=2e-4,
        source=zero,
        boundary={
            "lateral": ("neumann", influx),
            "top": ("neumann", influx),
            "bottom": ("neumann", influx),
        },
    )


PROBLEMS = {
    "tp1": tp1,
    "tp2_like": tp2_like,
    "cgtest_like": cgtest_like,
}


def get_problem(name: str, seed: int = 0, count: int | None = None) -> TestProblem:
    if name == "tp1":
        return tp1()
    if name == "tp2_like":
        return tp2_like(seed, count or 19)
    if name == "cgtest_like":
        return cgtest_like(seed, count or 50)
    raise ValueError(f"unknown problem {name!r}; available: {sorted(PROBLEMS)}")
