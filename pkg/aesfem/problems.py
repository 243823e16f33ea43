from dataclasses import dataclass
from typing import Callable

import numpy as np

from aesfem.discretization import PdeKind, PdeSpec

SOLUTION_IDS = ("u1", "u2", "u3")

PointFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ProblemCase:
    """Manufactured problem: exact solution u, its gradient and Laplacian, and the PDE.

    All callables take points of shape (k, dim). Dirichlet data is u itself.
    """
    dim: int
    pde: PdeSpec
    solution_id: str
    u: PointFunction
    grad: PointFunction
    laplacian: PointFunction

    def f(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        source = -self.laplacian(points)
        if self.pde.kind == PdeKind.CONVECTION_DIFFUSION:
            source = source + self.grad(points) @ np.asarray(self.pde.c, dtype=float)
        return source

    def dirichlet_values(self, points: np.ndarray) -> np.ndarray:
        return self.u(np.atleast_2d(points))


# Each solution is a product of one-dimensional factors; entries are
# (value, first derivative, second derivative) per axis.
def _polynomial_factor(axis: int, dim: int):
    return (lambda t: 4.0 * t * (1.0 - t),
            lambda t: 4.0 * (1.0 - 2.0 * t),
            lambda t: np.full_like(t, -8.0))


def _cosine_factor(axis: int, dim: int):
    return (lambda t: np.cos(np.pi * t),
            lambda t: -np.pi * np.sin(np.pi * t),
            lambda t: -np.pi ** 2 * np.cos(np.pi * t))


def _hyperbolic_factor(axis: int, dim: int):
    if axis == 0:
        norm = np.sinh(np.pi)
        return (lambda t: np.sinh(np.pi * t) / norm,
                lambda t: np.pi * np.cosh(np.pi * t) / norm,
                lambda t: np.pi ** 2 * np.sinh(np.pi * t) / norm)
    norm = np.cosh(np.pi)
    return (lambda t: np.cosh(np.pi * t) / norm,
            lambda t: np.pi * np.sinh(np.pi * t) / norm,
            lambda t: np.pi ** 2 * np.cosh(np.pi * t) / norm)


FACTORS = {
    "u1": _polynomial_factor,
    "u2": _cosine_factor,
    "u3": _hyperbolic_factor,
}


def analytic_solution(solution_id: str, dim: int, pde: PdeSpec = PdeSpec()) -> ProblemCase:
    """The benchmark solutions on the unit square/cube.

    u1 = 16x(1-x)y(1-y) (64 ... z(1-z) in 3D), u2 = prod cos(pi x_i),
    u3 = sinh(pi x) prod cosh(pi x_i) normalized to 1 at the far corner.
    """
    if solution_id not in FACTORS:
        raise ValueError(f"Unknown solution {solution_id}, expected one of {SOLUTION_IDS}")
    if dim not in (2, 3):
        raise ValueError(f"Unsupported dimension {dim}, expected 2 or 3")
    factors = [FACTORS[solution_id](axis, dim) for axis in range(dim)]

    def table(points: np.ndarray, derivative: int) -> np.ndarray:
        return np.stack([factors[i][derivative](points[:, i]) for i in range(dim)], axis=1)

    def u(points: np.ndarray) -> np.ndarray:
        return np.prod(table(np.atleast_2d(points), 0), axis=1)

    def grad(points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        values, first = table(points, 0), table(points, 1)
        columns = []
        for i in range(dim):
            others = np.prod(np.delete(values, i, axis=1), axis=1)
            columns.append(first[:, i] * others)
        return np.stack(columns, axis=1)

    def laplacian(points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        values, second = table(points, 0), table(points, 2)
        total = np.zeros(len(points))
        for i in range(dim):
            total += second[:, i] * np.prod(np.delete(values, i, axis=1), axis=1)
        return total

    return ProblemCase(dim, pde, solution_id, u, grad, laplacian)


def polynomial_problem(dim: int, pde: PdeSpec, coefficients: dict, solution_id: str = "poly") -> ProblemCase:
    """Problem with a polynomial exact solution.

    ``coefficients`` maps exponent tuples to coefficients, e.g. {(2, 0): 1.0} for x^2.
    """
    terms = [(np.asarray(e, dtype=np.int64), float(c)) for e, c in coefficients.items()]
    for exponents, _ in terms:
        if len(exponents) != dim:
            raise ValueError(f"Exponent tuple {tuple(exponents)} does not match dimension {dim}")

    def monomial(points, exponents):
        return np.prod(points ** exponents, axis=1)

    def u(points):
        points = np.atleast_2d(points)
        return sum((c * monomial(points, e) for e, c in terms), np.zeros(len(points)))

    def grad(points):
        points = np.atleast_2d(points)
        result = np.zeros_like(points, dtype=float)
        for e, c in terms:
            for i in range(dim):
                if e[i] > 0:
                    lowered = e.copy()
                    lowered[i] -= 1
                    result[:, i] += c * e[i] * monomial(points, lowered)
        return result

    def laplacian(points):
        points = np.atleast_2d(points)
        result = np.zeros(len(points))
        for e, c in terms:
            for i in range(dim):
                if e[i] > 1:
                    lowered = e.copy()
                    lowered[i] -= 2
                    result += c * e[i] * (e[i] - 1) * monomial(points, lowered)
        return result

    return ProblemCase(dim, pde, solution_id, u, grad, laplacian)
