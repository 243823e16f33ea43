import functools
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import roots_jacobi

TET_ALPHA = 0.5854101966249685
TET_BETA = 0.1381966011250105


class QuadraturePurpose(Enum):
    STIFFNESS = "stiffness"
    LOAD = "load"
    LOAD_HIGH_ORDER = "load_high_order"


@dataclass(frozen=True)
class QuadratureRule:
    """Points in barycentric coordinates; weights are fractions of the element measure."""
    points: np.ndarray
    weights: np.ndarray
    degree: int

    def physical_points(self, vertices: np.ndarray) -> np.ndarray:
        """Quadrature points of elements with vertices of shape (n_elems, dim + 1, dim)."""
        return np.einsum("qv,evd->eqd", self.points, vertices)


def _collapsed_rule(dim: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Conical-product Gauss-Jacobi rule on the reference simplex, exact to degree 2n - 1."""
    axes = []
    for axis in range(dim):
        alpha = dim - 1 - axis
        t, w = roots_jacobi(n, alpha, 0.0)
        axes.append(((t + 1.0) / 2.0, w / 2.0 ** (alpha + 1)))
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    weights = np.prod(np.meshgrid(*[a[1] for a in axes], indexing="ij"), axis=0).ravel()
    collapsed = [g.ravel() for g in grids]
    cartesian = []
    remaining = np.ones_like(collapsed[0])
    for c in collapsed:
        cartesian.append(c * remaining)
        remaining = remaining * (1.0 - c)
    lam = np.stack(cartesian, axis=1)
    barycentric = np.column_stack([1.0 - lam.sum(axis=1), lam])
    reference_measure = 0.5 if dim == 2 else 1.0 / 6.0
    return barycentric, weights / reference_measure


@functools.lru_cache(maxsize=None)
def quadrature_rule(dim: int, purpose: QuadraturePurpose) -> QuadratureRule:
    if dim not in (2, 3):
        raise ValueError(f"Unsupported dimension {dim}, expected 2 or 3")
    if purpose == QuadraturePurpose.STIFFNESS:
        points = np.full((1, dim + 1), 1.0 / (dim + 1))
        return QuadratureRule(points, np.ones(1), 1)
    if purpose == QuadraturePurpose.LOAD:
        if dim == 2:
            # edge midpoints
            points = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
            return QuadratureRule(points, np.full(3, 1.0 / 3.0), 2)
        points = np.full((4, 4), TET_BETA)
        np.fill_diagonal(points, TET_ALPHA)
        return QuadratureRule(points, np.full(4, 0.25), 2)
    points, weights = _collapsed_rule(dim, 3)
    return QuadratureRule(points, weights, 5)
