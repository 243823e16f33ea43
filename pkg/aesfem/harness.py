import logging
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from aesfem.discretization import (
    LinearSystem,
    LoadMode,
    PdeKind,
    assemble_aes_fem,
    assemble_gfd,
    assemble_linear_fem,
)
from aesfem.linalg import (
    FactorizationError,
    PreconditionerKind,
    SolveReport,
    cg,
    condest_1norm,
    gmres,
    make_preconditioner,
)
from aesfem.mesh import MeshGeometryError, MeshTopology, degrade_mesh, generate_structured_mesh, mesh_quality
from aesfem.mesh_io import load_mesh
from aesfem.problems import ProblemCase
from aesfem.quadrature import QuadraturePurpose, quadrature_rule
from aesfem.wls import WlsConfig


class Method(Enum):
    FEM = "fem"
    AES_FEM_1 = "aesfem1"
    AES_FEM_2 = "aesfem2"
    GFD = "gfd"

    @staticmethod
    def string_to_enum(raw_string: str) -> "Method":
        normalized = raw_string.lower().replace("-", "").replace("_", "")
        for method in Method:
            if method.value == normalized:
                return method
        raise ValueError(f"No Method found for {raw_string}")


@dataclass(frozen=True)
class SolverConfig:
    solver: str = "auto"
    preconditioner: str = "auto"
    tol: float = 1e-8
    droptol: float = 1e-3
    max_iter: Optional[int] = None
    restart: Optional[int] = None
    condest: bool = False
    condest_direct_limit: int = 20000

    @classmethod
    def for_experiment(cls, dim: int, sweep: bool = False) -> "SolverConfig":
        """Solver settings used for the accuracy runs and quality sweeps in 2D and 3D."""
        if dim == 3 and sweep:
            return cls(preconditioner="gs", tol=1e-5, condest=True)
        if dim == 3:
            return cls(preconditioner="ilu", droptol=1e-1)
        return cls(condest=sweep)

    def resolve(self, method: Method, pde: PdeKind) -> tuple[str, PreconditionerKind]:
        """Solver and preconditioner for a method and PDE.

        CG is only paired with a symmetric preconditioner (IC or none); ``auto``
        falls back to GMRES otherwise and an explicit CG request is rejected.
        """
        if self.solver not in ("auto", "cg", "gmres"):
            raise ValueError(f"Unknown solver {self.solver}, expected auto, cg or gmres")
        kind = None if self.preconditioner == "auto" else PreconditionerKind.string_to_enum(self.preconditioner)
        symmetric_kinds = (None, PreconditionerKind.IC, PreconditionerKind.NONE)
        solver = self.solver
        if solver == "auto":
            symmetric = method == Method.FEM and pde == PdeKind.POISSON
            solver = "cg" if symmetric and kind in symmetric_kinds else "gmres"
        elif solver == "cg" and kind not in symmetric_kinds:
            raise ValueError(f"CG needs a symmetric preconditioner, got {self.preconditioner}")
        if kind is None:
            kind = PreconditionerKind.IC if solver == "cg" else PreconditionerKind.ILU
        return solver, kind


@dataclass(frozen=True)
class MeshSource:
    """Where the mesh of a run comes from; loading it is timed as initialization."""
    node_path: Optional[str] = None
    ele_path: Optional[str] = None
    structured: Optional[tuple[int, int]] = None
    mesh: Optional[MeshTopology] = field(default=None, repr=False)
    reorient: bool = False

    @classmethod
    def from_files(cls, node_path: str, ele_path: str, reorient: bool = False) -> "MeshSource":
        return cls(node_path=node_path, ele_path=ele_path, reorient=reorient)

    @classmethod
    def from_structured(cls, n: int, dim: int) -> "MeshSource":
        return cls(structured=(n, dim))

    @classmethod
    def from_mesh(cls, mesh: MeshTopology) -> "MeshSource":
        return cls(mesh=mesh)

    def load(self) -> MeshTopology:
        if self.mesh is not None:
            return self.mesh
        if self.structured is not None:
            return generate_structured_mesh(*self.structured)
        if self.node_path is None or self.ele_path is None:
            raise ValueError("Mesh source needs a mesh, a structured size or a .node/.ele pair")
        return load_mesh(self.node_path, self.ele_path, reorient=self.reorient)


@dataclass
class RunReport:
    method: Method
    dim: int
    pde: str
    solution: str
    nodes: int
    elements: int
    min_angle_deg: float
    cot_min_angle: float
    l2_error: float
    linf_error: float
    iterations: int
    condest: Optional[float]
    t_init_s: float
    t_assembly_s: float
    t_precond_s: float
    t_solve_s: float
    converged: bool = True
    relative_residual: float = 0.0
    nodal_solution: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def t_total_s(self) -> float:
        return self.t_init_s + self.t_assembly_s + self.t_precond_s + self.t_solve_s

    def to_row(self) -> dict:
        return {
            "method": self.method.value,
            "dim": self.dim,
            "pde": self.pde,
            "solution": self.solution,
            "nodes": self.nodes,
            "elements": self.elements,
            "min_angle_deg": self.min_angle_deg,
            "cot_min_angle": self.cot_min_angle,
            "l2_error": self.l2_error,
            "linf_error": self.linf_error,
            "iterations": self.iterations,
            "condest": self.condest,
            "t_init_s": self.t_init_s,
            "t_assembly_s": self.t_assembly_s,
            "t_precond_s": self.t_precond_s,
            "t_solve_s": self.t_solve_s,
            "t_total_s": self.t_total_s,
        }


def error_norms(mesh: MeshTopology, nodal_solution: np.ndarray, problem: ProblemCase) -> tuple[float, float]:
    """L2 norm of the linearly interpolated nodal error and the max nodal error."""
    error = np.asarray(nodal_solution, dtype=float) - problem.u(mesh.coords)
    linf = float(np.max(np.abs(error))) if len(error) else 0.0
    rule = quadrature_rule(mesh.dim, QuadraturePurpose.LOAD)
    at_points = error[mesh.elems] @ rule.points.T
    l2_squared = np.sum(mesh.measures() * ((at_points ** 2) @ rule.weights))
    return float(np.sqrt(l2_squared)), linf


def convergence_rate(errors: Sequence[float], node_counts: Sequence[int], dim: int) -> float:
    """Average rate between the coarsest and the finest level.

    -log2(e_first / e_last) / log2((N_first / N_last)^(1/dim)); any zero error gives inf.
    """
    if len(errors) < 2 or len(errors) != len(node_counts):
        raise ValueError(f"Need at least two levels with matching node counts, got {len(errors)} errors "
                         f"and {len(node_counts)} node counts")
    if any(e == 0.0 for e in errors):
        return math.inf
    if node_counts[0] == node_counts[-1]:
        raise ValueError("Coarsest and finest level have the same number of nodes")
    spacing = math.log2((node_counts[0] / node_counts[-1]) ** (1.0 / dim))
    return -math.log2(errors[0] / errors[-1]) / spacing


def assemble(method: Method, mesh: MeshTopology, problem: ProblemCase, wls_config: WlsConfig = WlsConfig(),
             exact_load: bool = False, workers: int = 1) -> LinearSystem:
    if method == Method.FEM:
        return assemble_linear_fem(mesh, problem, exact_load=exact_load)
    if method == Method.GFD:
        return assemble_gfd(mesh, problem, wls_config, workers=workers)
    mode = LoadMode.AES_FEM_1 if method == Method.AES_FEM_1 else LoadMode.AES_FEM_2
    return assemble_aes_fem(mesh, problem, mode, wls_config, exact_load=exact_load, workers=workers)


def solve_system(system: LinearSystem, method: Method, pde: PdeKind,
                 solver_config: SolverConfig) -> tuple[np.ndarray, SolveReport]:
    """Precondition and solve; a breakdown of the preconditioner or of CG gives an unconverged zero solution."""
    solver, kind = solver_config.resolve(method, pde)
    start = time.perf_counter()
    try:
        preconditioner = make_preconditioner(kind, system.matrix, solver_config.droptol)
    except FactorizationError as e:
        logging.warning(f"No {kind.value} preconditioner for the {method.value} system: {e}")
        return np.zeros(system.n_free), SolveReport(0, 1.0, False, t_precond=time.perf_counter() - start)
    t_precond = time.perf_counter() - start
    try:
        if solver == "cg":
            solution, report = cg(system.matrix, system.rhs, preconditioner, solver_config.tol,
                                  solver_config.max_iter)
        else:
            solution, report = gmres(system.matrix, system.rhs, preconditioner, solver_config.tol,
                                     solver_config.max_iter, solver_config.restart)
    except FactorizationError as e:
        logging.warning(f"{solver.upper()} broke down on the {method.value} system: {e}")
        return np.zeros(system.n_free), SolveReport(0, 1.0, False, t_precond=t_precond)
    report.t_precond = t_precond
    logging.info(f"{solver.upper()} with {preconditioner.name}: {report.iterations} iterations, "
                 f"relative residual {report.relative_residual:.3e}, converged {report.converged}")
    return solution, report


def run_case(method: Method, source: MeshSource, problem: ProblemCase, solver_config: SolverConfig = SolverConfig(),
             wls_config: WlsConfig = WlsConfig(), exact_load: bool = False, workers: int = 1) -> RunReport:
    """Load, assemble, precondition and solve one case, timing each stage.

    Non-convergence is recorded in the report rather than raised.
    """
    start = time.perf_counter()
    mesh = source.load()
    if problem.dim != mesh.dim:
        raise ValueError(f"Problem is {problem.dim}D but the mesh is {mesh.dim}D")
    t_init = time.perf_counter() - start

    start = time.perf_counter()
    system = assemble(method, mesh, problem, wls_config, exact_load, workers)
    t_assembly = time.perf_counter() - start

    solution, solve_report = solve_system(system, method, problem.pde.kind, solver_config)
    nodal = system.expand(solution)
    l2, linf = error_norms(mesh, nodal, problem)

    condest = None
    if solver_config.condest:
        condest = condest_1norm(system.matrix, solver_config.condest_direct_limit)

    quality = mesh_quality(mesh)
    report = RunReport(method, mesh.dim, problem.pde.kind.value, problem.solution_id, mesh.n_nodes, mesh.n_elems,
                       quality.min_angle, quality.cot_min_angle, l2, linf, solve_report.iterations,
                       condest, t_init, t_assembly, solve_report.t_precond, solve_report.t_solve,
                       solve_report.converged, solve_report.relative_residual, nodal)
    logging.info(f"{method.value} on {mesh.n_nodes} nodes: L2 {l2:.3e}, Linf {linf:.3e}; times init {t_init:.3f}s, "
                 f"assembly {t_assembly:.3f}s, precond {report.t_precond_s:.3f}s, solve {report.t_solve_s:.3f}s")
    return report


@dataclass
class ConvergenceStudy:
    method: Method
    dim: int
    reports: list[RunReport]

    def _rate(self, errors: list[float]) -> float:
        return convergence_rate(errors, [r.nodes for r in self.reports], self.dim)

    @property
    def l2_rate(self) -> float:
        return self._rate([r.l2_error for r in self.reports])

    @property
    def linf_rate(self) -> float:
        return self._rate([r.linf_error for r in self.reports])


def run_convergence(method: Method, sources: Sequence[MeshSource], problem: ProblemCase,
                    solver_config: SolverConfig = SolverConfig(), wls_config: WlsConfig = WlsConfig(),
                    exact_load: bool = False, workers: int = 1) -> ConvergenceStudy:
    if len(sources) < 2:
        raise ValueError(f"A convergence study needs at least two mesh levels, got {len(sources)}")
    reports = [run_case(method, source, problem, solver_config, wls_config, exact_load, workers) for source in sources]
    study = ConvergenceStudy(method, problem.dim, reports)
    logging.info(f"{method.value} rates: L2 {study.l2_rate:.3f}, Linf {study.linf_rate:.3f}")
    return study


@dataclass
class SweepPoint:
    fraction: float
    cot_min_angle: float
    reports: dict[Method, RunReport]


def quality_sweep(base_mesh: MeshTopology, targets: Sequence[int], fractions: Sequence[float],
                  methods: Sequence[Method], problem: ProblemCase, solver_config: Optional[SolverConfig] = None,
                  wls_config: WlsConfig = WlsConfig(),
                  on_point: Optional[Callable[[SweepPoint], None]] = None) -> list[SweepPoint]:
    """Degrade ``targets`` by each fraction in turn and run every method with condition estimates.

    A degradation that inverts an element ends the sweep with the points gathered so far.
    """
    if any(f < 0.0 or f >= 1.0 for f in fractions):
        raise ValueError(f"Sweep fractions must lie in [0, 1), got {list(fractions)}")
    if any(b <= a for a, b in zip(fractions, fractions[1:])):
        raise ValueError(f"Sweep fractions must be strictly increasing, got {list(fractions)}")
    config = replace(solver_config or SolverConfig.for_experiment(base_mesh.dim, sweep=True), condest=True)
    points: list[SweepPoint] = []
    for fraction in fractions:
        try:
            mesh = degrade_mesh(base_mesh, targets, fraction) if fraction > 0.0 else base_mesh
        except MeshGeometryError as e:
            logging.warning(f"Stopping the quality sweep at fraction {fraction}: {e}")
            break
        cot = mesh_quality(mesh).cot_min_angle
        logging.info(f"Quality sweep fraction {fraction}: cot(min angle) {cot:.3e}")
        source = MeshSource.from_mesh(mesh)
        reports = {method: run_case(method, source, problem, config, wls_config) for method in methods}
        points.append(SweepPoint(fraction, cot, reports))
        if on_point is not None:
            on_point(points[-1])
    return points
