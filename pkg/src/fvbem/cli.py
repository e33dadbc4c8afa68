"""Batch experiment runner: assemble, solve and post-process a refinement
sequence, emitting a convergence table, an exterior field dump, and the
matching figures.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 violated
post-solve invariant.
"""

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import coupling, plots, postprocess
from .mesh import build_dual_mesh, mesh_hierarchy
from .model import (ConfigError, GammaConditionError, ModelError,
                    builtin_problem, load_problem_config, select_beta,
                    validate_gamma)

LEVEL_CAP = 8
BUILTINS = ("mexican_hat", "tanh_convection", "lshape_practical")


class InvariantViolation(RuntimeError):
    pass


@dataclass
class RunConfig:
    problem: str = None            # built-in name
    config_path: str = None        # or user problem file
    levels: int = 5
    upwind: str = None             # None = problem default
    stabilize: str = "auto"        # auto | on | off
    grid: tuple = (120, 120)
    out_table: str = None
    out_field: str = None
    threads: int = 1
    seed: int = 0
    figures: bool = True

    def validate(self):
        if (self.problem is None) == (self.config_path is None):
            raise ConfigError("exactly one of --problem / --config is required")
        if not 1 <= self.levels <= LEVEL_CAP:
            raise ConfigError(f"levels must be in 1..{LEVEL_CAP}")
        if self.stabilize not in ("auto", "on", "off"):
            raise ConfigError(f"unknown stabilize mode {self.stabilize!r}")
        if self.upwind not in (None, "none", "full", "steered"):
            raise ConfigError(f"unknown upwind choice {self.upwind!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


def run(config: RunConfig):
    """Execute one experiment; returns (report, finest solution, system)."""
    config.validate()
    if config.problem is not None:
        if config.problem not in BUILTINS:
            raise ConfigError(
                f"unknown problem {config.problem!r}; choose from {BUILTINS}")
        spec = builtin_problem(config.problem)
    else:
        spec = load_problem_config(config.config_path)
    upwind = spec.upwind if config.upwind is None else config.upwind

    meshes = mesh_hierarchy(spec.domain, config.levels)
    validate_gamma(spec, meshes[0])
    _convection_warning(spec, meshes[0], upwind)

    rng = np.random.default_rng(config.seed)
    report = postprocess.ErrorReport(problem=spec.name,
                                     has_ainf=spec.radiation_variant == "ainf")
    solution = system = None
    for mesh in meshes:
        dual = build_dual_mesh(mesh)
        beta = {"on": 1, "off": 0}.get(config.stabilize)
        if beta is None:
            beta = select_beta(spec, mesh)
        system = coupling.assemble_coupled(mesh, dual, spec, beta, upwind)
        solution = coupling.solve(system)
        _post_solve_checks(solution, system, rng)

        rec = postprocess.LevelRecord(N=mesh.n_triangles, h=mesh.h_max)
        if spec.exact is not None:
            rec.e_h1 = postprocess.error_h1_semi(solution.u, spec.exact, mesh)
            rec.e_l2 = postprocess.error_l2(solution.u, spec.exact, mesh)
            rec.e_v = postprocess.error_vnorm(solution.phi, spec.exact.eval_phi,
                                              system.loop)
        rec.max_u = postprocess.max_abs(solution.u)
        if solution.ainf is not None:
            rec.ainf = solution.ainf
        report.add(rec)
        print(_level_line(rec, solution), flush=True)

    return report, solution, system


def _level_line(rec, solution):
    parts = [f"N={rec.N:>8d}", f"h={rec.h:.5f}"]
    if np.isfinite(rec.e_h1):
        parts += [f"e_H1={rec.e_h1:.6e}", f"e_L2={rec.e_l2:.6e}",
                  f"e_V={rec.e_v:.6e}"]
    parts.append(f"max|u|={rec.max_u:.6g}")
    if np.isfinite(rec.ainf):
        parts.append(f"ainf={rec.ainf:.6g}")
    parts.append(f"resid={solution.diagnostics.residual_norm:.2e}")
    return "  ".join(parts)


def _convection_warning(spec, mesh, upwind):
    if upwind != "none":
        return
    from .fvm import build_upwind_scheme
    dual = build_dual_mesh(mesh)
    scheme = build_upwind_scheme(mesh, dual, spec, "full")
    pe = np.abs(scheme.peclet).max()
    if pe > 2.0:
        print(f"warning: convection-dominated problem (max interface Peclet "
              f"{pe:.3g}) run without upwinding; expect an unstable solution, "
              "max-norm metrics are reported per level", file=sys.stderr)


def _post_solve_checks(solution, system, rng):
    defect = coupling.check_P_identity(solution, system)
    if defect > 1e-9 * (1.0 + abs(system.g_u0)):
        raise InvariantViolation(f"P-identity defect {defect:.3e}")
    rows = rng.integers(0, system.n_nodes, size=3)
    balance = coupling.box_balance_residual(solution, system, rows=rows)
    scale = 1.0 + np.abs(system.rhs).max()
    if np.abs(balance).max() > 1e-8 * scale:
        raise InvariantViolation(
            f"box balance defect {np.abs(balance).max():.3e} in rows {rows}")
    if system.has_ainf:
        zero_mean = abs(system.loop.lengths @ solution.phi)
        if zero_mean > 1e-10 * max(np.linalg.norm(solution.phi), 1e-300):
            raise InvariantViolation(f"<1, phi> = {zero_mean:.3e} not zero")


def _default_paths(config, spec_name):
    stem = spec_name
    table = config.out_table or f"{stem}_table.csv"
    fieldp = config.out_field or f"{stem}_field.csv"
    return Path(table), Path(fieldp)


def _emit(config, report, solution, system):
    table_path, field_path = _default_paths(config, report.problem)
    table_path.parent.mkdir(parents=True, exist_ok=True)
    field_path.parent.mkdir(parents=True, exist_ok=True)
    postprocess.write_report_csv(report, str(table_path))
    samples = postprocess.eval_exterior_grid(solution, system, grid=config.grid)
    postprocess.write_field_csv(samples, str(field_path))
    print(f"table   -> {table_path}")
    print(f"field   -> {field_path}")
    if config.figures:
        conv_png = table_path.with_suffix(".png")
        field_png = field_path.with_suffix(".png")
        plots.save_convergence_figure(report, conv_png)
        plots.save_field_figure(samples, system.mesh, solution.u, field_png,
                                title=report.problem)
        print(f"figures -> {conv_png}, {field_png}")


def _parse_grid(text):
    try:
        nx, ny = text.lower().split("x")
        grid = (int(nx), int(ny))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"grid must look like 120x120: {exc}")
    if grid[0] < 2 or grid[1] < 2:
        raise argparse.ArgumentTypeError("grid must be at least 2x2")
    return grid


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fvbem",
        description="coupled interior finite volume / exterior boundary "
                    "element solver and convergence-study runner")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run a refinement study for one problem")
    p.add_argument("--problem", choices=BUILTINS, help="built-in problem name")
    p.add_argument("--config", dest="config_path", help="user problem file")
    p.add_argument("--levels", type=int, default=5,
                   help=f"number of mesh levels, 1..{LEVEL_CAP} (default 5)")
    p.add_argument("--upwind", choices=("none", "full", "steered"),
                   help="override the problem's convection scheme")
    p.add_argument("--stabilize", choices=("auto", "on", "off"), default="auto",
                   help="rank-one stabilization (auto = from the gamma test)")
    p.add_argument("--grid", type=_parse_grid, default=(120, 120),
                   metavar="NxM", help="exterior sampling grid (default 120x120)")
    p.add_argument("--out-table", help="convergence table path (CSV)")
    p.add_argument("--out-field", help="field dump path (CSV)")
    p.add_argument("--threads", type=int, default=1,
                   help="reserved; assembly runs single-threaded")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for the randomized spot checks")
    p.add_argument("--no-figures", dest="figures", action="store_false",
                   help="skip rendering the PNG figures")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    config = RunConfig(
        problem=args.problem, config_path=args.config_path, levels=args.levels,
        upwind=args.upwind, stabilize=args.stabilize, grid=args.grid,
        out_table=args.out_table, out_field=args.out_field,
        threads=args.threads, seed=args.seed, figures=args.figures)
    try:
        report, solution, system = run(config)
        _emit(config, report, solution, system)
    except (InvariantViolation, GammaConditionError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 4
    except (ConfigError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except coupling.SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
