"""
Linear systems for -div(grad u) + c . grad u = f with Dirichlet data on the boundary.

Three discretizations share one system builder: adaptive extended stencil FEM
(hat test functions, GLP trial functions), classical linear FEM and strong-form
generalized finite differences. Rows are owned by free nodes; columns that hit
Dirichlet nodes are folded into the right-hand side when the system is built.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from aesfem.mesh import BOUNDARY, MeshGeometryError, MeshTopology, one_ring_elements
from aesfem.quadrature import QuadraturePurpose, quadrature_rule
from aesfem.wls import (
    WlsConfig,
    diff_wls,
    glp_basis_eval,
    gradient_terms,
    laplacian_terms,
    monomials_eval,
    operator_eval,
    select_stencil,
)

if TYPE_CHECKING:
    from aesfem.problems import ProblemCase


class PdeKind(Enum):
    POISSON = "poisson"
    CONVECTION_DIFFUSION = "convdiff"

    @staticmethod
    def string_to_enum(raw_string: str) -> "PdeKind":
        for kind in PdeKind:
            if kind.value == raw_string.lower():
                return kind
        raise ValueError(f"No PdeKind found for {raw_string}")


@dataclass(frozen=True)
class PdeSpec:
    kind: PdeKind = PdeKind.POISSON
    c: tuple[float, ...] = ()

    def __post_init__(self):
        if not np.all(np.isfinite(self.c)):
            raise ValueError(f"Convection vector must be finite, got {self.c}")

    @classmethod
    def poisson(cls) -> "PdeSpec":
        return cls(PdeKind.POISSON)

    @classmethod
    def convection_diffusion(cls, dim: int, c: Optional[Sequence[float]] = None) -> "PdeSpec":
        velocity = tuple(float(v) for v in (c if c is not None else np.ones(dim)))
        if len(velocity) != dim:
            raise ValueError(f"Convection vector {velocity} does not match dimension {dim}")
        return cls(PdeKind.CONVECTION_DIFFUSION, velocity)

    @classmethod
    def from_name(cls, name: str, dim: int) -> "PdeSpec":
        kind = PdeKind.string_to_enum(name)
        if kind == PdeKind.POISSON:
            return cls.poisson()
        return cls.convection_diffusion(dim)

    @property
    def has_convection(self) -> bool:
        return self.kind == PdeKind.CONVECTION_DIFFUSION and any(v != 0.0 for v in self.c)


class LoadMode(Enum):
    AES_FEM_1 = "1"
    AES_FEM_2 = "2"

    @staticmethod
    def string_to_enum(raw_string: str) -> "LoadMode":
        raw = raw_string.lower().replace("aes-fem", "").replace("aesfem", "").strip(" -_")
        for mode in LoadMode:
            if mode.value == raw:
                return mode
        raise ValueError(f"No LoadMode found for {raw_string}")


@dataclass(frozen=True)
class LinearSystem:
    """System over the free nodes.

    ``boundary_coupling`` keeps the eliminated Dirichlet columns so that full
    rows can be reassembled; ``wls_calls`` counts least-squares derivative solves.
    """
    matrix: sp.csr_matrix
    rhs: np.ndarray
    free_nodes: np.ndarray
    dirichlet_nodes: np.ndarray
    dirichlet_values: np.ndarray
    boundary_coupling: sp.csr_matrix
    wls_calls: int = 0

    @property
    def n_free(self) -> int:
        return len(self.free_nodes)

    @property
    def n_nodes(self) -> int:
        return len(self.free_nodes) + len(self.dirichlet_nodes)

    def free_index(self, node: int) -> int:
        found = np.flatnonzero(self.free_nodes == node)
        if len(found) == 0:
            raise ValueError(f"Node {node} is not a free node of this system")
        return int(found[0])

    def full_rows(self) -> sp.csr_matrix:
        """Rows over all nodes (free and Dirichlet columns) in global numbering."""
        columns = np.concatenate([self.free_nodes, self.dirichlet_nodes])
        stacked = sp.hstack([self.matrix, self.boundary_coupling]).tocsr()
        order = np.argsort(columns)
        return stacked[:, order]

    def expand(self, solution: np.ndarray) -> np.ndarray:
        """Nodal vector with the free solution and the prescribed Dirichlet values."""
        full = np.empty(self.n_nodes)
        full[self.free_nodes] = solution
        full[self.dirichlet_nodes] = self.dirichlet_values
        return full


def apply_dirichlet(rows: sp.csr_matrix, load: np.ndarray, free_nodes: np.ndarray,
                    dirichlet_nodes: np.ndarray, dirichlet_values: np.ndarray,
                    wls_calls: int = 0) -> LinearSystem:
    """Split full rows into the free block and move Dirichlet columns to the rhs.

    ``rows`` is (n_free, n_nodes) in global column numbering; rhs_i -= k_ij g_j
    for every Dirichlet column j.
    """
    rows = rows.tocsc()
    matrix = rows[:, free_nodes].tocsr()
    coupling = rows[:, dirichlet_nodes].tocsr()
    rhs = np.asarray(load, dtype=float) - coupling @ np.asarray(dirichlet_values, dtype=float)
    return LinearSystem(matrix, rhs, free_nodes, dirichlet_nodes, np.asarray(dirichlet_values, dtype=float),
                        coupling, wls_calls)


class SystemBuilder:
    """Accumulates row triplets and load contributions keyed by global node ids.

    Contributions to rows of Dirichlet nodes are discarded. Builders filled by
    different workers over disjoint rows are combined with ``merge``.
    """

    def __init__(self, n_nodes: int, free_nodes: np.ndarray):
        self.n_nodes = n_nodes
        self.free_nodes = np.asarray(free_nodes, dtype=np.int64)
        self.free_index = np.full(n_nodes, BOUNDARY, dtype=np.int64)
        self.free_index[self.free_nodes] = np.arange(len(self.free_nodes))
        self.load = np.zeros(len(self.free_nodes))
        self.wls_calls = 0
        self._rows: list[np.ndarray] = []
        self._cols: list[np.ndarray] = []
        self._values: list[np.ndarray] = []

    def spawn(self) -> "SystemBuilder":
        return SystemBuilder(self.n_nodes, self.free_nodes)

    def add(self, node: int, columns: Sequence[int], values: np.ndarray):
        """Add one row's entries."""
        row = self.free_index[node]
        if row == BOUNDARY:
            return
        columns = np.asarray(columns, dtype=np.int64)
        self._rows.append(np.full(len(columns), row, dtype=np.int64))
        self._cols.append(columns)
        self._values.append(np.asarray(values, dtype=float))

    def add_entries(self, nodes: np.ndarray, columns: np.ndarray, values: np.ndarray):
        rows = self.free_index[np.asarray(nodes, dtype=np.int64)]
        keep = rows != BOUNDARY
        self._rows.append(rows[keep])
        self._cols.append(np.asarray(columns, dtype=np.int64)[keep])
        self._values.append(np.asarray(values, dtype=float)[keep])

    def add_load(self, nodes, values):
        rows = np.atleast_1d(self.free_index[nodes])
        values = np.broadcast_to(np.asarray(values, dtype=float), rows.shape)
        keep = rows != BOUNDARY
        np.add.at(self.load, rows[keep], values[keep])

    def merge(self, other: "SystemBuilder"):
        self._rows.extend(other._rows)
        self._cols.extend(other._cols)
        self._values.extend(other._values)
        self.load += other.load
        self.wls_calls += other.wls_calls

    def build(self, dirichlet_nodes: np.ndarray, dirichlet_values: np.ndarray) -> LinearSystem:
        n_free = len(self.free_nodes)
        rows = np.concatenate(self._rows) if self._rows else np.empty(0, dtype=np.int64)
        cols = np.concatenate(self._cols) if self._cols else np.empty(0, dtype=np.int64)
        values = np.concatenate(self._values) if self._values else np.empty(0)
        # duplicates are summed; explicit zeros stay in the sparsity pattern
        full = sp.coo_matrix((values, (rows, cols)), shape=(n_free, self.n_nodes)).tocsr()
        empty = np.flatnonzero(np.diff(full.indptr) == 0)
        if len(empty):
            raise ValueError(f"Row of free node {self.free_nodes[empty[0]]} has no entries")
        return apply_dirichlet(full, self.load, self.free_nodes, dirichlet_nodes, dirichlet_values,
                               self.wls_calls)


def hat_gradients(coords: np.ndarray, elems: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the linear hat functions, shape (n_elems, dim + 1, dim), and element measures."""
    dim = coords.shape[1]
    origin = coords[elems[:, 0]]
    jacobian = np.stack([coords[elems[:, i]] - origin for i in range(1, dim + 1)], axis=1)
    det = np.linalg.det(jacobian)
    bad = np.flatnonzero(det <= 0)
    if len(bad):
        raise MeshGeometryError(f"Element {bad[0]} is inverted or degenerate (det {det[bad[0]]:.3e})")
    inverse = np.linalg.inv(jacobian)
    grads = np.empty((len(elems), dim + 1, dim))
    grads[:, 1:, :] = np.transpose(inverse, (0, 2, 1))
    grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
    measures = det / (2.0 if dim == 2 else 6.0)
    return grads, measures


def _dirichlet_split(mesh: MeshTopology, dirichlet_nodes: Optional[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    fixed = np.zeros(mesh.n_nodes, dtype=bool)
    if dirichlet_nodes is None:
        fixed |= mesh.boundary_mask
    else:
        fixed[np.asarray(dirichlet_nodes, dtype=np.int64)] = True
    # nodes outside every element carry no equation
    fixed |= mesh.v2hf == BOUNDARY
    return np.flatnonzero(~fixed), np.flatnonzero(fixed)


def _load_rule(dim: int, exact_load: bool):
    purpose = QuadraturePurpose.LOAD_HIGH_ORDER if exact_load else QuadraturePurpose.LOAD
    return quadrature_rule(dim, purpose)


@dataclass
class _AssemblyContext:
    mesh: MeshTopology
    problem: "ProblemCase"
    wls_config: WlsConfig
    mode: LoadMode
    exact_load: bool
    grads: np.ndarray = field(repr=False)
    measures: np.ndarray = field(repr=False)
    nodal_f: np.ndarray = field(repr=False)

    @property
    def velocity(self) -> np.ndarray:
        return np.asarray(self.problem.pde.c, dtype=float)


def _aes_fem_rows(context: _AssemblyContext, nodes: np.ndarray, builder: SystemBuilder) -> SystemBuilder:
    mesh = context.mesh
    dim = mesh.dim
    convection = context.problem.pde.has_convection
    velocity = context.velocity
    directions = gradient_terms(dim)
    convection_rule = quadrature_rule(dim, QuadraturePurpose.LOAD)
    load_rule = _load_rule(dim, context.exact_load)

    for node in nodes:
        node = int(node)
        stencil, gvm = select_stencil(mesh, node, context.wls_config)
        center = mesh.coords[node]
        row = np.zeros(stencil.size)
        load = 0.0
        for elem in one_ring_elements(mesh, node):
            element_nodes = mesh.elems[elem]
            vertices = mesh.coords[element_nodes]
            local = int(np.flatnonzero(element_nodes == node)[0])
            measure = context.measures[elem]

            centroid = vertices.mean(axis=0) - center
            functionals = [monomials_eval(centroid, gvm.basis, d) for d in directions]
            if convection:
                points = convection_rule.points @ vertices - center
                advective = sum(c * monomials_eval(points, gvm.basis, d) for c, d in zip(velocity, directions))
                functionals.extend(advective)
            weights = diff_wls(gvm, np.column_stack(functionals))
            builder.wls_calls += 1
            row += measure * (weights[:, :dim] @ context.grads[elem, local])
            if convection:
                test = convection_rule.weights * convection_rule.points[:, local]
                row += measure * (weights[:, dim:] @ test)

            if context.exact_load:
                f_points = context.problem.f(load_rule.points @ vertices)
            elif context.mode == LoadMode.AES_FEM_1:
                f_points = load_rule.points @ context.nodal_f[element_nodes]
            else:
                basis_values = glp_basis_eval(gvm, load_rule.points @ vertices - center)
                builder.wls_calls += 1
                f_points = basis_values.T @ context.nodal_f[stencil.nodes]
            load += measure * float(np.dot(load_rule.weights * load_rule.points[:, local], f_points))

        builder.add(node, stencil.nodes, row)
        builder.add_load(node, load)
    return builder


def _gfd_rows(context: _AssemblyContext, nodes: np.ndarray, builder: SystemBuilder) -> SystemBuilder:
    mesh = context.mesh
    dim = mesh.dim
    terms = [(-coef, order) for coef, order in laplacian_terms(dim)]
    if context.problem.pde.has_convection:
        terms.extend(zip(context.velocity, gradient_terms(dim)))
    origin = np.zeros(dim)
    for node in nodes:
        node = int(node)
        stencil, gvm = select_stencil(mesh, node, context.wls_config)
        weights = diff_wls(gvm, operator_eval(origin, gvm.basis, terms))
        builder.wls_calls += 1
        builder.add(node, stencil.nodes, weights)
        builder.add_load(node, context.nodal_f[node])
    return builder


def _assemble_rows(row_function, context: _AssemblyContext, free_nodes: np.ndarray, workers: int) -> SystemBuilder:
    builder = SystemBuilder(context.mesh.n_nodes, free_nodes)
    if workers <= 1 or len(free_nodes) < 2 * workers:
        return row_function(context, free_nodes, builder)
    chunks = np.array_split(free_nodes, workers * 4)
    with ThreadPoolExecutor(max_workers=workers) as executor:
        partials = executor.map(lambda chunk: row_function(context, chunk, builder.spawn()), chunks)
        for partial in partials:
            builder.merge(partial)
    return builder


def _context(mesh: MeshTopology, problem: "ProblemCase", wls_config: WlsConfig, mode: LoadMode,
             exact_load: bool) -> _AssemblyContext:
    if problem.dim != mesh.dim:
        raise ValueError(f"Problem is {problem.dim}D but the mesh is {mesh.dim}D")
    grads, measures = hat_gradients(mesh.coords, mesh.elems)
    return _AssemblyContext(mesh, problem, wls_config, mode, exact_load, grads, measures,
                            problem.f(mesh.coords))


def assemble_aes_fem(mesh: MeshTopology, problem: "ProblemCase", mode: LoadMode = LoadMode.AES_FEM_1,
                     wls_config: WlsConfig = WlsConfig(), dirichlet_nodes: Optional[Sequence[int]] = None,
                     exact_load: bool = False, workers: int = 1) -> LinearSystem:
    """Hat test functions against GLP trial functions on adaptive stencils.

    Entries are +int grad(psi_i) . grad(phi_j) (plus int psi_i c . grad(phi_j)),
    so the Poisson system discretizes -laplace(u) = f. The stiffness matrix does
    not depend on ``mode``; only the load interpolation does.
    """
    context = _context(mesh, problem, wls_config, mode, exact_load)
    free_nodes, fixed = _dirichlet_split(mesh, dirichlet_nodes)
    builder = _assemble_rows(_aes_fem_rows, context, free_nodes, workers)
    system = builder.build(fixed, problem.dirichlet_values(mesh.coords[fixed]))
    logging.info(f"Assembled AES-FEM {mode.value} system: {system.n_free} unknowns, "
                 f"{system.matrix.nnz} nonzeros, {system.wls_calls} WLS solves")
    return system


def assemble_gfd(mesh: MeshTopology, problem: "ProblemCase", wls_config: WlsConfig = WlsConfig(),
                 dirichlet_nodes: Optional[Sequence[int]] = None, workers: int = 1) -> LinearSystem:
    """Strong-form collocation of -laplace(u) + c . grad(u) at every free node."""
    context = _context(mesh, problem, wls_config, LoadMode.AES_FEM_1, False)
    free_nodes, fixed = _dirichlet_split(mesh, dirichlet_nodes)
    builder = _assemble_rows(_gfd_rows, context, free_nodes, workers)
    system = builder.build(fixed, problem.dirichlet_values(mesh.coords[fixed]))
    logging.info(f"Assembled GFD system: {system.n_free} unknowns, {system.matrix.nnz} nonzeros")
    return system


def assemble_linear_fem(mesh: MeshTopology, problem: "ProblemCase",
                        dirichlet_nodes: Optional[Sequence[int]] = None,
                        exact_load: bool = False) -> LinearSystem:
    """Galerkin linear FEM, assembled for all elements at once.

    The load integrates the hat interpolant of nodal f, or f itself at the
    points of the high-order rule when ``exact_load`` is set.
    """
    if problem.dim != mesh.dim:
        raise ValueError(f"Problem is {problem.dim}D but the mesh is {mesh.dim}D")
    dim = mesh.dim
    elems = mesh.elems
    grads, measures = hat_gradients(mesh.coords, elems)
    local = np.einsum("e,eid,ejd->eij", measures, grads, grads)
    if problem.pde.has_convection:
        # int psi_i dV = measure / (dim + 1)
        advective = grads @ np.asarray(problem.pde.c, dtype=float)
        local += (measures / (dim + 1))[:, np.newaxis, np.newaxis] * advective[:, np.newaxis, :]

    rule = _load_rule(dim, exact_load)
    if exact_load:
        points = rule.physical_points(mesh.coords[elems])
        f_points = problem.f(points.reshape(-1, dim)).reshape(len(elems), -1)
    else:
        f_points = np.einsum("qv,ev->eq", rule.points, problem.f(mesh.coords)[elems])
    element_load = measures[:, np.newaxis] * np.einsum("q,qi,eq->ei", rule.weights, rule.points, f_points)

    free_nodes, fixed = _dirichlet_split(mesh, dirichlet_nodes)
    builder = SystemBuilder(mesh.n_nodes, free_nodes)
    n_verts = dim + 1
    builder.add_entries(np.repeat(elems, n_verts, axis=1).ravel(), np.tile(elems, (1, n_verts)).ravel(),
                        local.ravel())
    builder.add_load(elems.ravel(), element_load.ravel())
    system = builder.build(fixed, problem.dirichlet_values(mesh.coords[fixed]))
    logging.info(f"Assembled linear FEM system: {system.n_free} unknowns, {system.matrix.nnz} nonzeros")
    return system
