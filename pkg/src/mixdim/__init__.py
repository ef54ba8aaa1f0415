"""Coupled 3D/1D diffusion solver with interface-mismatch minimization.

A 3D diffusion problem on a box exchanges flux with thin embedded segments
through membrane-type conditions. The discrete problem is posed on fully
non-conforming meshes and solved either through the assembled optimality
system, through a matrix-free preconditioned conjugate-gradient iteration on
the reduced interface system, or through a monolithic coupled formulation
used for cross-validation.
"""

from .analysis import (
    CondEstimate,
    ErrorReport,
    StudyResult,
    compute_errors,
    condition_number,
    convergence_study,
    fit_slope,
)
from .assembly import (
    AssemblyError,
    BlockSystem,
    assemble_A,
    assemble_Ahat,
    assemble_B,
    assemble_coupling,
    assemble_rhs,
    assemble_system,
    dump_matrix,
)
from .driver import Deltas, Discretization, discretize, solve_problem
from .geom import (
    Dirichlet,
    GeometryError,
    Junction,
    JunctionBC,
    MeshFormatError,
    MeshValidationError,
    NeumannZero,
    Segment,
    SegmentNetwork,
    TetMesh,
    build_box_mesh,
    generate_random_network,
    load_mesh,
    load_network,
    save_mesh,
    save_network,
    split_at_junctions,
)
from .kkt import KktSystem, WellPosednessError, build_kkt, evaluate_functional, solve_direct
from .monolithic import CompareReport, compare_solutions, exchange_balance, solve_coupled
from .optsolver import (
    PcgResult,
    ReducedOperator,
    SegmentPreconditioner,
    SolverError,
    SpdViolationError,
    pcg,
)
from .problems import (
    ExactSolution,
    ManufacturedSolutionError,
    TestProblem,
    cgtest_like,
    get_problem,
    residual_check,
    tp1,
    tp2_like,
)
from .solution import Solution, SolveReport
from .trace import (
    Partition1D,
    TraceDecomposition,
    build_partition,
    composite_rule,
    locate_points,
    trace_segment,
)

__version__ = "0.1.0"
