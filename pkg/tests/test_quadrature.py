import numpy as np
import pytest

from aesfem.quadrature import QuadraturePurpose, QuadratureRule, quadrature_rule

TRIANGLE = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
TETRAHEDRON = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def integrate(rule: QuadratureRule, vertices: np.ndarray, func) -> float:
    edges = vertices[1:] - vertices[0]
    measure = abs(np.linalg.det(edges)) / (2.0 if vertices.shape[1] == 2 else 6.0)
    return measure * float(np.dot(rule.weights, func(rule.points @ vertices)))


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("purpose", list(QuadraturePurpose))
def test_rules_are_normalized(dim: int, purpose: QuadraturePurpose):
    rule = quadrature_rule(dim, purpose)
    assert rule.weights.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(rule.points.sum(axis=1), 1.0)
    assert np.all(rule.points >= 0.0)
    vertices = TRIANGLE if dim == 2 else TETRAHEDRON
    assert integrate(rule, vertices, lambda p: np.ones(len(p))) == pytest.approx(0.5 if dim == 2 else 1.0 / 6.0)


def test_triangle_load_rule():
    rule = quadrature_rule(2, QuadraturePurpose.LOAD)
    assert len(rule.weights) == 3
    assert integrate(rule, TRIANGLE, lambda p: p[:, 0] * p[:, 1]) == pytest.approx(1.0 / 24.0)
    assert integrate(rule, TRIANGLE, lambda p: p[:, 0] ** 2) == pytest.approx(1.0 / 12.0)


def test_tetrahedron_rules():
    centroid = quadrature_rule(3, QuadraturePurpose.STIFFNESS)
    assert integrate(centroid, TETRAHEDRON, lambda p: p[:, 0]) == pytest.approx(1.0 / 24.0)
    load = quadrature_rule(3, QuadraturePurpose.LOAD)
    assert len(load.weights) == 4
    assert integrate(load, TETRAHEDRON, lambda p: p[:, 0] ** 2) == pytest.approx(1.0 / 60.0)
    assert integrate(load, TETRAHEDRON, lambda p: p[:, 1] * p[:, 2]) == pytest.approx(1.0 / 120.0)


def test_high_order_rules():
    rule = quadrature_rule(2, QuadraturePurpose.LOAD_HIGH_ORDER)
    assert rule.degree == 5
    # int x^a y^b = a! b! / (a + b + 2)!
    assert integrate(rule, TRIANGLE, lambda p: p[:, 0] ** 2 * p[:, 1] ** 3) == pytest.approx(1.0 / 420.0)
    rule = quadrature_rule(3, QuadraturePurpose.LOAD_HIGH_ORDER)
    assert integrate(rule, TETRAHEDRON, lambda p: p[:, 0] ** 3 * p[:, 1] * p[:, 2]) == pytest.approx(
        6.0 / 40320.0)


def test_physical_points():
    rule = quadrature_rule(2, QuadraturePurpose.LOAD)
    points = rule.physical_points(np.stack([TRIANGLE, TRIANGLE + 1.0]))
    assert points.shape == (2, 3, 2)
    np.testing.assert_allclose(points[0], [[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])
    np.testing.assert_allclose(points[1], points[0] + 1.0)


def test_unsupported_dimension():
    with pytest.raises(ValueError):
        quadrature_rule(1, QuadraturePurpose.LOAD)
