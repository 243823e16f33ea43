"""
Weighted least squares stencils and generalized Lagrange polynomial (GLP) basis functions.

A stencil's generalized Vandermonde matrix holds the Taylor terms u^j v^k / (j! k!)
of every stencil point relative to the center. It is row-weighted, column-scaled
and factored once by QR with column pivoting, keeping the constant column in
front; derivative weights and basis-function values then come from cheap
triangular solves against that factor.
"""
import functools
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import get_lapack_funcs, solve_triangular
from scipy.special import factorial, perm

from aesfem.mesh import MeshTopology, RingSize, ring_neighborhood

DEFAULT_WEIGHT_EPS = 0.01
DEFAULT_RANK_EPS = 1e-4
DEFAULT_MAX_RING = 3.5


class DegenerateStencilError(ValueError):
    pass


@dataclass(frozen=True)
class WlsConfig:
    degree: int = 2
    weight_eps: float = DEFAULT_WEIGHT_EPS
    rank_eps: float = DEFAULT_RANK_EPS
    max_ring: float = DEFAULT_MAX_RING


@dataclass(frozen=True)
class MonomialBasis:
    dim: int
    degree: int
    exponents: np.ndarray

    @property
    def n_terms(self) -> int:
        return len(self.exponents)


@functools.lru_cache(maxsize=None)
def monomial_basis(dim: int, degree: int) -> MonomialBasis:
    """Graded monomials, constant first.

    Within each degree the terms are ordered by descending powers of x, then
    of y, so the quadratic 3D basis reads 1, x, y, z, x^2, xy, xz, y^2, yz, z^2.
    """
    if dim not in (2, 3):
        raise ValueError(f"Unsupported dimension {dim}, expected 2 or 3")
    if degree < 1:
        raise ValueError(f"Polynomial degree must be at least 1, got {degree}")
    exponents = []
    for p in range(degree + 1):
        for i in range(p, -1, -1):
            if dim == 2:
                exponents.append((i, p - i))
            else:
                exponents.extend((i, j, p - i - j) for j in range(p - i, -1, -1))
    array = np.array(exponents, dtype=np.int64)
    array.setflags(write=False)
    return MonomialBasis(dim, degree, array)


@dataclass(frozen=True)
class TaylorScaling:
    factors: np.ndarray

    @classmethod
    def for_basis(cls, basis: MonomialBasis) -> "TaylorScaling":
        return cls(1.0 / np.prod(factorial(basis.exponents), axis=1))


def monomials_eval(x, basis: MonomialBasis, derivative: Optional[Sequence[int]] = None) -> np.ndarray:
    """Evaluate (a derivative of) every monomial at ``x``.

    ``x`` is one point of shape (dim,) or a batch of shape (k, dim); the result
    has shape (n_terms,) or (k, n_terms). Derivatives of higher order than a
    term's degree give zero.
    """
    points = np.asarray(x, dtype=float)
    if derivative is None:
        derivative = (0,) * basis.dim
    order = np.asarray(derivative, dtype=np.int64)
    coefficients = np.prod(perm(basis.exponents, order), axis=1)
    powers = np.maximum(basis.exponents - order, 0)
    values = np.prod(points[..., np.newaxis, :] ** powers, axis=-1)
    return values * coefficients


def laplacian_terms(dim: int) -> list[tuple[float, tuple[int, ...]]]:
    return [(1.0, tuple(2 if i == j else 0 for j in range(dim))) for i in range(dim)]


def gradient_terms(dim: int) -> list[tuple[int, ...]]:
    return [tuple(1 if i == j else 0 for j in range(dim)) for i in range(dim)]


def operator_eval(x, basis: MonomialBasis, terms: Sequence[tuple[float, Sequence[int]]]) -> np.ndarray:
    """Linear combination of monomial derivatives, e.g. the coefficients of a PDE operator."""
    return sum(coef * monomials_eval(x, basis, order) for coef, order in terms)


@dataclass(frozen=True)
class LocalStencil:
    center: int
    nodes: np.ndarray
    local_coords: np.ndarray
    row_weights: np.ndarray
    radius: float

    @property
    def size(self) -> int:
        return len(self.nodes)


def compute_row_weights(local_coords: np.ndarray, epsilon: float = DEFAULT_WEIGHT_EPS) -> tuple[np.ndarray, float]:
    """Row weights (|u_i| / h + epsilon)^-1 and the stencil radius h."""
    norms = np.linalg.norm(np.asarray(local_coords, dtype=float), axis=1)
    radius = float(norms.max()) if len(norms) else 0.0
    if radius == 0.0:
        raise DegenerateStencilError("All stencil points coincide, the stencil radius is zero")
    return 1.0 / (norms / radius + epsilon), radius


def make_stencil(coords: np.ndarray, nodes: Sequence[int], epsilon: float = DEFAULT_WEIGHT_EPS) -> LocalStencil:
    """Local stencil from global coordinates; ``nodes[0]`` is the center."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if len(nodes) == 0:
        raise DegenerateStencilError("Stencil has no points")
    local = coords[nodes] - coords[nodes[0]]
    try:
        weights, radius = compute_row_weights(local, epsilon)
    except DegenerateStencilError:
        raise DegenerateStencilError(f"Stencil of node {nodes[0]} has zero radius")
    return LocalStencil(int(nodes[0]), nodes, local, weights, radius)


@dataclass(frozen=True)
class GvmFactor:
    weights: np.ndarray
    scales: np.ndarray
    q: np.ndarray
    r: np.ndarray
    perm: np.ndarray
    rank: int
    basis: MonomialBasis
    scaling: TaylorScaling

    @property
    def full_rank(self) -> bool:
        return self.rank == self.basis.n_terms


def pinned_qrcp(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Householder QR with column pivoting that never moves the first column.

    Returns the thin Q (m x k), upper-triangular R (k x n) with a nonnegative
    diagonal and the column permutation, k = min(m, n).
    """
    a = np.array(matrix, dtype=float)
    m, n = a.shape
    k = min(m, n)
    q = np.eye(m)
    order = np.arange(n)
    for j in range(k):
        if j > 0:
            pivot = j + int(np.argmax(np.linalg.norm(a[j:, j:], axis=0)))
            if pivot != j:
                a[:, [j, pivot]] = a[:, [pivot, j]]
                order[[j, pivot]] = order[[pivot, j]]
        x = a[j:, j]
        norm_x = np.linalg.norm(x)
        if norm_x == 0.0:
            continue
        v = x.copy()
        v[0] += np.copysign(norm_x, x[0])
        v /= np.linalg.norm(v)
        a[j:, :] -= 2.0 * np.outer(v, v @ a[j:, :])
        q[:, j:] -= 2.0 * np.outer(q[:, j:] @ v, v)
    r = np.triu(a[:k, :])
    # nonnegative diagonal of R
    signs = np.where(np.diagonal(r) < 0.0, -1.0, 1.0)
    return q[:, :k] * signs, r * signs[:, np.newaxis], order


def estimate_rank(r: np.ndarray, epsilon: float = DEFAULT_RANK_EPS) -> int:
    """Largest i with estimated cond_1(R[:i, :i]) <= 1/epsilon.

    Uses LAPACK's triangular 1-norm condition estimator; the exact condition of
    leading blocks of a triangular matrix never decreases, so the scan stops at
    the first failure.
    """
    r = np.asarray(r, dtype=float)
    trcon, = get_lapack_funcs(("trcon",), (r,))
    rank = 0
    for i in range(1, min(r.shape) + 1):
        if r[i - 1, i - 1] == 0.0:
            break
        rcond, info = trcon(np.asfortranarray(r[:i, :i]), norm="1", uplo="U", diag="N")
        if info != 0 or rcond < epsilon:
            break
        rank = i
    return rank


def build_gvm(stencil: LocalStencil, degree: int = 2, epsilon: float = DEFAULT_RANK_EPS) -> GvmFactor:
    if stencil.size == 0:
        raise DegenerateStencilError("Stencil has no points")
    dim = stencil.local_coords.shape[1]
    basis = monomial_basis(dim, degree)
    scaling = TaylorScaling.for_basis(basis)
    vandermonde = monomials_eval(stencil.local_coords, basis) * scaling.factors
    weighted = stencil.row_weights[:, np.newaxis] * vandermonde
    column_norms = np.linalg.norm(weighted, axis=0)
    scales = 1.0 / np.where(column_norms > 0, column_norms, 1.0)
    q, r, order = pinned_qrcp(weighted * scales)
    rank = estimate_rank(r, epsilon)
    return GvmFactor(stencil.row_weights, scales, q, r, order, rank, basis, scaling)


def diff_wls(gvm: GvmFactor, a: np.ndarray) -> np.ndarray:
    """Weights d with d . g approximating the functional encoded by ``a``.

    ``a`` holds raw monomial values or derivatives at a point, shape (n_terms,)
    or (n_terms, k) for k functionals at once.
    """
    a = np.asarray(a, dtype=float)
    column = (gvm.scales * gvm.scaling.factors).reshape((-1,) + (1,) * (a.ndim - 1))
    kept = gvm.perm[:gvm.rank]
    b = (column * a)[kept]
    y = solve_triangular(gvm.r[:gvm.rank, :gvm.rank], b, trans="T", lower=False)
    weights = gvm.weights.reshape((-1,) + (1,) * (a.ndim - 1))
    return weights * (gvm.q[:, :gvm.rank] @ y)


def glp_basis_eval(gvm: GvmFactor, x, derivative: Optional[Sequence[int]] = None) -> np.ndarray:
    """Values (or a derivative) of all GLP basis functions at local point(s) ``x``.

    One point gives shape (m,), a batch of k points gives (m, k).
    """
    a = monomials_eval(x, gvm.basis, derivative)
    return diff_wls(gvm, a.T)


def fit_coefficients(gvm: GvmFactor, values: np.ndarray) -> np.ndarray:
    """Taylor coefficients (derivatives at the stencil center) fitted to stencil values.

    Terms beyond the numerical rank come out as zero.
    """
    b = gvm.q[:, :gvm.rank].T @ (gvm.weights * np.asarray(values, dtype=float))
    scaled = np.zeros(gvm.basis.n_terms)
    scaled[gvm.perm[:gvm.rank]] = solve_triangular(gvm.r[:gvm.rank, :gvm.rank], b, lower=False)
    return gvm.scales * scaled


def select_stencil(mesh: MeshTopology, node: int, config: WlsConfig = WlsConfig()) -> tuple[LocalStencil, GvmFactor]:
    """Adaptive stencil: grow from the 1-ring by half (2D) or third (3D) rings until full rank.

    Past ``config.max_ring`` the last factor is accepted with its truncated rank.
    """
    n_terms = monomial_basis(mesh.dim, config.degree).n_terms
    ring = RingSize(1)
    while True:
        nodes = ring_neighborhood(mesh, node, ring)
        stencil = make_stencil(mesh.coords, nodes, config.weight_eps)
        gvm = build_gvm(stencil, config.degree, config.rank_eps)
        if gvm.rank == n_terms:
            if ring != RingSize(1):
                logging.debug(f"Node {node} needed ring {float(ring):.3g} ({stencil.size} points)")
            return stencil, gvm
        grown = ring.grow(mesh.dim)
        if float(grown) > config.max_ring + 1e-9:
            if gvm.rank == 0:
                raise DegenerateStencilError(f"Node {node}: stencil has rank 0 at ring {float(ring):.3g}")
            logging.warning(f"Node {node}: accepting rank {gvm.rank} of {n_terms} at ring {float(ring):.3g}")
            return stencil, gvm
        ring = grown
