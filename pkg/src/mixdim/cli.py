"""Configuration-driven command line: solve, studies and exports.

Configuration is plain INI (one section per concern) and every option can be
overridden by a flag. Artifacts are deterministic: identical configuration
and seed reproduce byte-identical files.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import __version__, analysis, driver, problems
from .analysis import condition_number, dense_reduced_matrix
from .geom import load_mesh, load_network
from .kkt import build_kkt
from .monolithic import compare_solutions
from .optsolver import ReducedOperator, SegmentPreconditioner, pcg
from .problems import TestProblem, get_problem
from .vtkio import write_vtk_1d, write_vtk_3d

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3


@dataclass
class RunConfig:
    problem: str = "tp1"
    mesh_file: str = ""
    network_file: str = ""
    conductivity3d: float = 1.0
    source3d: float = 0.0
    n: int = 4
    delta_uhat: float = 1.0
    delta_d: float = 0.5
    delta_sigma: float = 0.5
    solver: str = "opt_pcg"
    tol: float = 1e-6
    max_iter: int = 0
    preconditioner: bool = True
    out: str = "out"
    seed: int = 0
    count: int = 0
    boundary: str = "dirichlet:0"

    def validate(self) -> None:
        for name in ("delta_uhat", "delta_d", "delta_sigma"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0.0 < self.tol < 1.0):
            raise ValueError("tol must lie in (0, 1)")
        if self.solver not in ("opt_pcg", "opt_direct", "coupled"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    def deltas(self) -> driver.Deltas:
        return driver.Deltas(self.delta_uhat, self.delta_d, self.delta_sigma)

    def out_dir(self) -> str:
        root = os.environ.get("MIXDIM_OUTPUT_ROOT", "")
        return os.path.join(root, self.out) if root else self.out


_SECTION_OF = {
    "problem": "problem", "mesh_file": "problem", "network_file": "problem",
    "conductivity3d": "problem", "source3d": "problem", "seed": "problem",
    "count": "problem", "boundary": "problem",
    "n": "mesh",
    "delta_uhat": "partitions", "delta_d": "partitions", "delta_sigma": "partitions",
    "solver": "solver", "tol": "solver", "max_iter": "solver",
    "preconditioner": "solver",
    "out": "output",
}


def load_config(path: str) -> RunConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ValueError(f"cannot read config file {path!r}")
    cfg = RunConfig()
    for f in fields(RunConfig):
        section = _SECTION_OF.get(f.name, "problem")
        key = f.name if f.name != "problem" else "name"
        if parser.has_option(section, key):
            raw = parser.get(section, key)
            if f.type == "bool":
                setattr(cfg, f.name, raw.strip().lower() in ("1", "true", "yes", "on"))
            elif f.type == "int":
                setattr(cfg, f.name, int(raw))
            elif f.type == "float":
                setattr(cfg, f.name, float(raw))
            else:
                setattr(cfg, f.name, raw.strip())
    return cfg


def _build_problem(cfg: RunConfig) -> TestProblem:
    if cfg.mesh_file or cfg.network_file:
        if not (cfg.mesh_file and cfg.network_file):
            raise ValueError("custom problems need both mesh_file and network_file")
        network = load_network(cfg.network_file)
        kind, _, value = cfg.boundary.partition(":")
        val = float(value or 0.0)
        if kind not in ("dirichlet", "neumann"):
            raise ValueError("boundary must be 'dirichlet:<value>' or 'neumann:<value>'")
        data = lambda p: np.full(len(np.atleast_2d(p)), val)
        source = lambda p, c=cfg.source3d: np.full(len(np.atleast_2d(p)), c)
        mesh = load_mesh(cfg.mesh_file)
        prob = TestProblem(
            name="custom",
            network=network,
            conductivity=cfg.conductivity3d,
            source=source,
            boundary={tag: (kind, data) for tag in ("lateral", "top", "bottom", "other")},
            bounds=tuple(map(tuple, mesh.bounding_box())),
        )
        prob.build_mesh = lambda n, _m=mesh: _m  # type: ignore[method-assign]
        return prob
    return get_problem(cfg.problem, seed=cfg.seed, count=cfg.count or None)


def _parse_n_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _write_manifest(path, cfg: RunConfig, disc, sol=None) -> None:
    lines = [f"mixdim_version={__version__}"]
    lines.append(f"numpy_version={np.__version__}")
    import scipy

    lines.append(f"scipy_version={scipy.__version__}")
    for f in fields(RunConfig):
        lines.append(f"{f.name}={getattr(cfg, f.name)}")
    b = disc.blocks
    lines.append(f"h={b.mesh.h:.17g}")
    lines.append(f"N={b.n_u}")
    lines.append(f"Nhat={b.n_uhat}")
    lines.append(f"N_mult={b.n_mult}")
    lines.append(f"N_D={b.n_d}")
    lines.append(f"N_Sigma={b.n_sigma}")
    lines.append(
        "crossing_counts=" + ",".join(str(c) for c in disc.crossing_counts)
    )
    if sol is not None:
        lines.append(f"solver_iterations={sol.report.iterations}")
        lines.append(f"converged={sol.report.converged}")
        lines.append(f"constraint_residual_3d={sol.report.constraint_residual_3d:.17g}")
        lines.append(f"constraint_residual_1d={sol.report.constraint_residual_1d:.17g}")
    with open(path, "w") as fp:
        fp.write("\n".join(lines) + "\n")


def cmd_solve(cfg: RunConfig) -> int:
    prob = _build_problem(cfg)
    disc = driver.discretize(
        prob, cfg.n, cfg.deltas(), with_b=(cfg.solver == "coupled")
    )
    sol = driver.solve_problem(
        disc,
        method=cfg.solver,
        tol=cfg.tol,
        max_iter=cfg.max_iter or None,
        preconditioner=cfg.preconditioner,
    )
    out = cfg.out_dir()
    os.makedirs(out, exist_ok=True)
    write_vtk_3d(os.path.join(out, "solution_3d.vtk"), disc.blocks, sol)
    write_vtk_1d(os.path.join(out, "solution_1d.vtk"), disc.blocks, sol)
    sol.report.write_residual_csv(os.path.join(out, "residuals.csv"))
    if prob.exact is not None and sol.X.size:
        rep = analysis.compute_errors(sol, prob.exact, disc.blocks)
        analysis.StudyResult([rep], {}).write_csv(os.path.join(out, "errors.csv"))
    _write_manifest(os.path.join(out, "manifest.txt"), cfg, disc, sol)
    if not sol.report.converged:
        print(f"solver did not converge: {sol.report.message}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    print(f"solved {prob.name}: n={cfg.n} iterations={sol.report.iterations} -> {out}")
    return EXIT_OK


def cmd_convergence(cfg: RunConfig, n_list: list[int]) -> int:
    prob = _build_problem(cfg)
    study = analysis.convergence_study(
        prob, n_list, cfg.deltas(), solver=cfg.solver, tol=cfg.tol
    )
    out = cfg.out_dir()
    os.makedirs(out, exist_ok=True)
    study.write_csv(os.path.join(out, "errors.csv"))
    study.write_slopes(os.path.join(out, "slopes.csv"))
    for key in sorted(study.slopes):
        print(f"{key}: slope {study.slopes[key]:.3f}")
    return EXIT_OK


def cmd_condition(cfg: RunConfig) -> int:
    prob = _build_problem(cfg)
    disc = driver.discretize(prob, cfg.n, cfg.deltas())
    kkt = build_kkt(disc.blocks)
    cond_k = condition_number(kkt.matrix)
    cond_m = condition_number(dense_reduced_matrix(ReducedOperator(disc.blocks)))
    out = cfg.out_dir()
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "condition.csv"), "w") as fp:
        fp.write("matrix,order,cond\n")
        fp.write(f"kkt,{kkt.order},{cond_k:.17g}\n")
        fp.write(f"reduced,{disc.blocks.n_d + disc.blocks.n_sigma},{cond_m:.17g}\n")
    print(f"cond(KKT) = {cond_k:.6e} (order {kkt.order}, dense SVD)")
    print(f"cond(reduced) = {cond_m:.6e} (order {disc.blocks.n_d + disc.blocks.n_sigma}, dense SVD)")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, param: str, values: list[float], metric: str) -> int:
    if not values:
        raise ValueError("sweep needs a non-empty value grid")
    if param not in ("delta_uhat", "delta_d", "delta_sigma"):
        raise ValueError("sweep parameter must be one of delta_uhat/delta_d/delta_sigma")
    prob = _build_problem(cfg)
    rows = []
    for v in values:
        setattr(cfg, param, v)
        cfg.validate()
        disc = driver.discretize(prob, cfg.n, cfg.deltas())
        if metric == "cond":
            cond_k = condition_number(build_kkt(disc.blocks).matrix)
            cond_m = condition_number(dense_reduced_matrix(ReducedOperator(disc.blocks)))
            rows.append((v, cond_k, cond_m))
        else:
            op = ReducedOperator(disc.blocks)
            pre = SegmentPreconditioner(disc.blocks) if cfg.preconditioner else None
            res = pcg(op, precond=pre, tol=cfg.tol, max_iter=cfg.max_iter or None)
            rows.append((v, res.report.iterations, float(res.report.converged)))
    out = cfg.out_dir()
    os.makedirs(out, exist_ok=True)
    headers = {"cond": "value,cond_kkt,cond_reduced", "iterations": "value,iterations,converged"}
    with open(os.path.join(out, "sweep.csv"), "w") as fp:
        fp.write(headers[metric] + "\n")
        for row in rows:
            fp.write(",".join(f"{x:.17g}" if isinstance(x, float) else str(x) for x in row) + "\n")
    for row in rows:
        print(f"{param}={row[0]}: {row[1]:.6e} {row[2]:.6e}" if metric == "cond"
              else f"{param}={row[0]}: iterations={row[1]}")
    return EXIT_OK


def cmd_compare(cfg: RunConfig) -> int:
    prob = _build_problem(cfg)
    disc = driver.discretize(prob, cfg.n, cfg.deltas(), with_b=True)
    sol_opt = driver.solve_problem(disc, method="opt_pcg", tol=cfg.tol,
                                   preconditioner=cfg.preconditioner)
    sol_cpl = driver.solve_problem(disc, method="coupled")
    rep = compare_solutions(sol_opt, sol_cpl, disc.blocks)
    out = cfg.out_dir()
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "compare.csv"), "w") as fp:
        fp.write("segment,uhat_rel_l2,uhat_rel_linf\n")
        for i, (l2, linf) in enumerate(zip(rep.uhat_l2, rep.uhat_linf)):
            fp.write(f"{i},{l2:.17g},{linf:.17g}\n")
        fp.write(f"global_u,{rep.u_l2:.17g},\n")
        for z, v in sorted(rep.plane_l2.items()):
            fp.write(f"plane_z={z:.17g},{v:.17g},\n")
    print(f"max per-segment 1D relative L2 difference: {rep.max_uhat_l2:.6e}")
    print(f"3D relative L2 difference: {rep.u_l2:.6e}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixdim",
        description="Coupled 3D/1D diffusion solver on non-conforming meshes",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default="", help="INI configuration file")
        p.add_argument("--problem", help="built-in problem name")
        p.add_argument("--mesh-file", dest="mesh_file")
        p.add_argument("--network-file", dest="network_file")
        p.add_argument("--n", type=int, help="mesh subdivisions per axis")
        p.add_argument("--delta-uhat", dest="delta_uhat", type=float)
        p.add_argument("--delta-d", dest="delta_d", type=float)
        p.add_argument("--delta-sigma", dest="delta_sigma", type=float)
        p.add_argument("--solver", choices=("opt_pcg", "opt_direct", "coupled"))
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iter", dest="max_iter", type=int)
        p.add_argument("--no-precond", dest="preconditioner", action="store_false",
                       default=None)
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        p.add_argument("--count", type=int)

    p_solve = sub.add_parser("solve", help="solve one configuration")
    add_common(p_solve)

    p_conv = sub.add_parser("convergence", help="mesh-refinement study")
    add_common(p_conv)
    p_conv.add_argument("--n-list", dest="n_list", help="comma-separated mesh sizes")

    p_cond = sub.add_parser("condition", help="condition numbers of both systems")
    add_common(p_cond)

    p_sweep = sub.add_parser("sweep", help="parameter sweep")
    add_common(p_sweep)
    p_sweep.add_argument("--param", default="delta_d")
    p_sweep.add_argument("--values", default="0.5")
    p_sweep.add_argument("--metric", choices=("cond", "iterations"), default="cond")

    p_cmp = sub.add_parser("compare", help="optimization vs coupled solutions")
    add_common(p_cmp)
    return parser


def _config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    for f in fields(RunConfig):
        if hasattr(args, f.name) and getattr(args, f.name) is not None:
            setattr(cfg, f.name, getattr(args, f.name))
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "convergence":
            n_list = _parse_n_list(args.n_list or str(cfg.n))
            return cmd_convergence(cfg, n_list)
        if args.command == "condition":
            return cmd_condition(cfg)
        if args.command == "sweep":
            values = [float(x) for x in args.values.split(",") if x.strip()]
            return cmd_sweep(cfg, args.param, values, args.metric)
        if args.command == "compare":
            return cmd_compare(cfg)
        raise ValueError(f"unknown command {args.command!r}")
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
