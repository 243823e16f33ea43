import click
import logging
import os.path
import typing
from dataclasses import replace

from aesfem.discretization import PdeSpec
from aesfem.harness import (
    ConvergenceStudy,
    MeshSource,
    Method,
    SolverConfig,
    SweepPoint,
    quality_sweep,
    run_case,
)
from aesfem.mesh import generate_structured_mesh, mesh_quality, select_degradation_targets
from aesfem.mesh_io import load_mesh, read_node_header, write_mesh
from aesfem.problems import SOLUTION_IDS, analytic_solution
from aesfem.report_utilities import FORMATS, append_frame, append_reports, convergence_frame, sweep_frame
from aesfem.wls import WlsConfig

DEFAULT_SWEEP_FRACTIONS = "0,0.9,0.99,0.999,0.9999,0.99999"

method_option = click.option(
    "-m",
    "--method",
    help="Discretization; 'aesfem' picks the variant from --load-mode.",
    type=click.Choice(["fem", "aesfem", "aesfem1", "aesfem2", "gfd"], case_sensitive=False),
    default="aesfem"
)
methods_option = click.option(
    "-m",
    "--method",
    "methods",
    help="Discretization to run, may be repeated.",
    type=click.Choice(["fem", "aesfem1", "aesfem2", "gfd"], case_sensitive=False),
    multiple=True
)
pde_option = click.option(
    "--pde",
    help="Poisson or convection-diffusion with c = (1, ..., 1).",
    type=click.Choice(["poisson", "convdiff"], case_sensitive=False),
    default="poisson"
)
solution_option = click.option(
    "--solution",
    help="Analytic solution used for the Dirichlet data, the source term and the errors.",
    type=click.Choice(list(SOLUTION_IDS), case_sensitive=False),
    default="u1"
)
dim_option = click.option(
    "--dim",
    help="Dimension of generated meshes.",
    type=click.Choice(["2", "3"]),
    default="2"
)
mesh_option = click.option(
    "--mesh",
    "mesh_paths",
    help="Basename of a .node/.ele pair, may be repeated where a series is expected.",
    multiple=True
)
size_option = click.option(
    "-n",
    "--n",
    "sizes",
    help="Nodes per side of a generated structured mesh, may be repeated.",
    type=int,
    multiple=True
)
out_option = click.option(
    "-o",
    "--out",
    help="Report file; rows are appended as runs finish.",
    default=None
)
format_option = click.option(
    "-f",
    "--format",
    help="The format of the report.",
    type=click.Choice(list(FORMATS), case_sensitive=False),
    default="csv"
)
reorient_option = click.option(
    "--reorient",
    help="Fix negatively oriented elements instead of rejecting the mesh.",
    is_flag=True,
    default=False
)


def wls_options(func):
    for option in reversed([
        click.option("--degree", help="Degree of the WLS polynomial basis.", type=int, default=2),
        click.option("--weight-eps", help="Safeguard in the WLS row weights.", type=float, default=0.01),
        click.option("--rank-eps", help="Condition threshold for the numerical rank.", type=float, default=1e-4),
        click.option("--max-ring", help="Largest stencil ring before a truncated rank is accepted.",
                     type=float, default=3.5),
    ]):
        func = option(func)
    return func


def solver_options(func):
    for option in reversed([
        click.option("--solver", help="Krylov solver.", type=click.Choice(["auto", "cg", "gmres"]), default="auto"),
        click.option("--precond", help="Preconditioner.",
                     type=click.Choice(["auto", "ilu", "ic", "gs", "none"]), default="auto"),
        click.option("--tol", help="Relative residual tolerance.", type=float, default=None),
        click.option("--droptol", help="Drop tolerance of ILU and IC.", type=float, default=None),
        click.option("--restart", help="GMRES restart length; full GMRES when omitted.", type=int, default=None),
        click.option("--max-iter", help="Iteration limit.", type=int, default=None),
        click.option("--condest", help="Estimate the 1-norm condition number.", is_flag=True, default=False),
    ]):
        func = option(func)
    return func


def assembly_options(func):
    for option in reversed([
        click.option("--exact-load", help="Integrate the exact source with a degree-5 rule.",
                     is_flag=True, default=False),
        click.option("--workers", help="Threads used for row assembly.", type=int, default=1),
    ]):
        func = option(func)
    return func


def _solver_config(dim: int, sweep: bool, options: dict) -> SolverConfig:
    config = SolverConfig.for_experiment(dim, sweep)
    overrides = {
        "solver": options["solver"],
        "preconditioner": options["precond"] if options["precond"] != "auto" else config.preconditioner,
        "restart": options["restart"],
        "max_iter": options["max_iter"],
        "condest": options["condest"] or config.condest,
    }
    if options["tol"] is not None:
        overrides["tol"] = options["tol"]
    if options["droptol"] is not None:
        overrides["droptol"] = options["droptol"]
    return replace(config, **overrides)


def _wls_config(options: dict) -> WlsConfig:
    return WlsConfig(options["degree"], options["weight_eps"], options["rank_eps"], options["max_ring"])


def _method(name: str, load_mode: str) -> Method:
    if name.lower() == "aesfem":
        name = f"aesfem{load_mode}"
    return Method.string_to_enum(name)


def _sources(mesh_paths: typing.Sequence[str], sizes: typing.Sequence[int], dim: int,
             reorient: bool) -> list[MeshSource]:
    if mesh_paths and sizes:
        raise ValueError("Give either --mesh or --n, not both")
    if mesh_paths:
        return [MeshSource.from_files(f"{p}.node", f"{p}.ele", reorient) for p in mesh_paths]
    if sizes:
        return [MeshSource.from_structured(n, dim) for n in sizes]
    raise ValueError("A mesh is required, give --mesh BASENAME or --n SIZE")


def _mesh_dim(sources: list[MeshSource], dim: int) -> int:
    first = sources[0]
    if first.node_path is None:
        return dim
    return read_node_header(first.node_path)[1]


@click.group()
@click.option(
    "-v",
    "--verbosity",
    help="Logging level.",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    default="INFO"
)
def main(verbosity: str):
    logging.basicConfig(format="%(levelname)s %(asctime)s %(message)s", level=getattr(logging, verbosity.upper()))


@main.command("solve")
@method_option
@pde_option
@solution_option
@dim_option
@mesh_option
@size_option
@reorient_option
@click.option("--load-mode", help="AES-FEM load interpolation: 1 hat, 2 GLP.", type=click.Choice(["1", "2"]),
              default="1")
@wls_options
@solver_options
@assembly_options
@out_option
@format_option
def solve(method: str, pde: str, solution: str, dim: str, mesh_paths: tuple, sizes: tuple, reorient: bool,
          load_mode: str, out: typing.Optional[str], format: str, **options):
    """Solve one problem with one method and report errors, iterations and timings."""
    try:
        sources = _sources(mesh_paths[:1], sizes[:1], int(dim), reorient)
        mesh_dim = _mesh_dim(sources, int(dim))
        problem = analytic_solution(solution, mesh_dim, PdeSpec.from_name(pde, mesh_dim))
        report = run_case(_method(method, load_mode), sources[0], problem,
                          _solver_config(mesh_dim, False, options), _wls_config(options),
                          options["exact_load"], options["workers"])
        if out is not None:
            append_reports(out, [report], format)
    except (ValueError, OSError) as e:
        raise click.ClickException(str(e))
    click.echo(f"{report.method.value}: L2 error {report.l2_error:.6e}, Linf error {report.linf_error:.6e}, "
               f"{report.iterations} iterations, converged {report.converged}")


@main.command("convergence")
@methods_option
@pde_option
@solution_option
@dim_option
@mesh_option
@size_option
@reorient_option
@wls_options
@solver_options
@assembly_options
@out_option
@format_option
def convergence(methods: tuple, pde: str, solution: str, dim: str, mesh_paths: tuple, sizes: tuple, reorient: bool,
                out: typing.Optional[str], format: str, **options):
    """Run a mesh series, coarsest first, and report per-level errors and average rates."""
    try:
        sources = _sources(mesh_paths, sizes, int(dim), reorient)
        if len(sources) < 2:
            raise ValueError("A convergence study needs at least two meshes")
        mesh_dim = _mesh_dim(sources, int(dim))
        problem = analytic_solution(solution, mesh_dim, PdeSpec.from_name(pde, mesh_dim))
        solver_config = _solver_config(mesh_dim, False, options)
        for name in methods or ("fem", "aesfem1", "aesfem2", "gfd"):
            method = Method.string_to_enum(name)
            reports = [run_case(method, source, problem, solver_config, _wls_config(options),
                                options["exact_load"], options["workers"]) for source in sources]
            study = ConvergenceStudy(method, mesh_dim, reports)
            if out is not None:
                append_frame(out, convergence_frame(study), format)
            click.echo(f"{method.value}: L2 rate {study.l2_rate:.3f}, Linf rate {study.linf_rate:.3f}")
    except (ValueError, OSError) as e:
        raise click.ClickException(str(e))


@main.command("quality-sweep")
@methods_option
@pde_option
@solution_option
@dim_option
@click.option("--mesh", "mesh_path", help="Basename of the base .node/.ele pair.", default=None)
@click.option("-n", "--n", "size", help="Nodes per side of a structured base mesh, 33 when no --mesh is given.",
              type=int, default=None)
@reorient_option
@click.option("--fractions", help="Comma separated, strictly increasing degradation fractions in [0, 1).",
              default=DEFAULT_SWEEP_FRACTIONS)
@click.option("--target", "target_ids", help="Element to degrade, may be repeated; chosen automatically when omitted.",
              type=int, multiple=True)
@click.option("--max-targets", "target_limit", help="Maximum number of automatically chosen elements.", type=int,
              default=None)
@wls_options
@solver_options
@out_option
@format_option
def sweep(methods: tuple, pde: str, solution: str, dim: str, mesh_path: typing.Optional[str],
          size: typing.Optional[int], reorient: bool, fractions: str, target_ids: tuple,
          target_limit: typing.Optional[int], out: typing.Optional[str], format: str, **options):
    """Degrade a base mesh step by step and record conditioning, iterations and errors."""
    try:
        if mesh_path is not None and size is not None:
            raise ValueError("Give either --mesh or --n, not both")
        if mesh_path is not None:
            mesh = load_mesh(f"{mesh_path}.node", f"{mesh_path}.ele", reorient=reorient)
        else:
            mesh = generate_structured_mesh(size or 33, int(dim))
        mesh_dim = mesh.dim
        values = [float(v) for v in fractions.split(",") if v.strip()]
        targets = list(target_ids) or select_degradation_targets(mesh, target_limit)
        if not targets:
            raise ValueError("No element of the mesh can be degraded, give --target ID")
        logging.info(f"Degrading {len(targets)} elements of a {mesh.n_nodes}-node mesh")
        problem = analytic_solution(solution, mesh_dim, PdeSpec.from_name(pde, mesh_dim))

        def record(point: SweepPoint):
            if out is not None:
                append_frame(out, sweep_frame([point]), format)
            for method, report in point.reports.items():
                click.echo(f"fraction {point.fraction}: cot(min angle) {point.cot_min_angle:.3e}, {method.value} "
                           f"condest {report.condest:.3e}, {report.iterations} iterations, L2 {report.l2_error:.3e}")

        quality_sweep(mesh, targets, values, [Method.string_to_enum(m) for m in methods or ("fem", "aesfem1",
                                                                                              "aesfem2", "gfd")],
                      problem, _solver_config(mesh_dim, True, options), _wls_config(options), on_point=record)
    except (ValueError, OSError) as e:
        raise click.ClickException(str(e))


@main.command("gen-mesh")
@dim_option
@size_option
@click.option("-o", "--out", help="Directory the .node/.ele pairs are written to.", default="meshes")
def gen_mesh(dim: str, sizes: tuple, out: str):
    """Write structured meshes of the unit square or cube."""
    if not sizes:
        raise click.ClickException("Give at least one --n")
    try:
        for n in sizes:
            mesh = generate_structured_mesh(n, int(dim))
            node_path, ele_path = write_mesh(mesh, os.path.join(out, f"mesh{dim}d_{n}"))
            click.echo(f"{node_path} {ele_path}")
    except (ValueError, OSError) as e:
        raise click.ClickException(str(e))


@main.command("mesh-info")
@click.option("--mesh", "mesh_path", help="Basename of a .node/.ele pair.", required=True)
@reorient_option
def mesh_info(mesh_path: str, reorient: bool):
    """Print node and element counts, boundary size and element quality."""
    try:
        mesh = load_mesh(f"{mesh_path}.node", f"{mesh_path}.ele", reorient=reorient)
    except (ValueError, OSError) as e:
        raise click.ClickException(str(e))
    quality = mesh_quality(mesh)
    click.echo(f"dim {mesh.dim}, nodes {mesh.n_nodes}, elements {mesh.n_elems}, "
               f"boundary nodes {len(mesh.boundary_nodes())}")
    click.echo(f"min angle {quality.min_angle:.4f} deg, max angle {quality.max_angle:.4f} deg, "
               f"cot(min angle) {quality.cot_min_angle:.4e}, max aspect ratio {quality.max_aspect_ratio:.4e}")


if __name__ == "__main__":
    main()
