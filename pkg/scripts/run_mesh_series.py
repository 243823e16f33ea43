import click
import logging

from aesfem.discretization import PdeSpec
from aesfem.harness import MeshSource, Method, SolverConfig, run_convergence
from aesfem.problems import SOLUTION_IDS, analytic_solution
from aesfem.report_utilities import append_frame, convergence_frame

DEFAULT_SIZES = {2: (16, 32, 64, 128), 3: (8, 16, 32)}


@click.command()
@click.option(
    "--dim",
    help="Dimension of the structured mesh series.",
    type=click.Choice(["2", "3"]),
    default="2"
)
@click.option(
    "-n",
    "--n",
    "sizes",
    help="Nodes per side of each level, coarsest first. Defaults to 16..128 in 2D and 8..32 in 3D.",
    type=int,
    multiple=True
)
@click.option(
    "-o",
    "--out",
    help="CSV file the per-level rows are appended to.",
    default="mesh_series.csv"
)
@click.option(
    "--workers",
    help="Threads used for row assembly.",
    type=int,
    default=1
)
def main(dim: str, sizes: tuple, out: str, workers: int):
    """Run every PDE, solution and method over one structured mesh series."""
    logging.basicConfig(format="%(levelname)s %(asctime)s %(message)s", level=logging.INFO)
    mesh_dim = int(dim)
    sources = [MeshSource.from_structured(n, mesh_dim) for n in (sizes or DEFAULT_SIZES[mesh_dim])]
    solver_config = SolverConfig.for_experiment(mesh_dim)
    for pde in ("poisson", "convdiff"):
        for solution in SOLUTION_IDS:
            problem = analytic_solution(solution, mesh_dim, PdeSpec.from_name(pde, mesh_dim))
            for method in Method:
                study = run_convergence(method, sources, problem, solver_config, workers=workers)
                append_frame(out, convergence_frame(study))
                print(f"{pde} {solution} {method.value}: L2 rate {study.l2_rate:.3f}, "
                      f"Linf rate {study.linf_rate:.3f}")


if __name__ == "__main__":
    main()
