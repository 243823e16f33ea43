from fractions import Fraction

import numpy as np
import pytest

from aesfem.mesh import (
    BOUNDARY,
    HalfFacetId,
    MeshGeometryError,
    MeshTopology,
    NonManifoldError,
    RingSize,
    build_ahf,
    degrade_mesh,
    generate_structured_mesh,
    mesh_quality,
    one_ring_elements,
    ring_neighborhood,
    select_degradation_targets,
)


@pytest.fixture
def square() -> MeshTopology:
    coords = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
    return MeshTopology.from_arrays(coords, [[0, 1, 2], [0, 2, 3]])


@pytest.fixture
def mesh_2d() -> MeshTopology:
    return generate_structured_mesh(5, 2)


@pytest.fixture
def mesh_3d() -> MeshTopology:
    return generate_structured_mesh(4, 3)


def test_sibling_half_facets(square: MeshTopology):
    assert square.sibling(HalfFacetId(0, 2)) == HalfFacetId(1, 0)
    assert square.sibling(HalfFacetId(1, 0)) == HalfFacetId(0, 2)
    assert square.sibling(HalfFacetId(0, 0)) is None
    assert np.count_nonzero(square.sibhfs == BOUNDARY) == 4
    assert sorted(square.boundary_nodes().tolist()) == [0, 1, 2, 3]


def test_sibling_involution(mesh_3d: MeshTopology):
    n_facets = mesh_3d.dim + 1
    for encoded in mesh_3d.sibhfs.ravel():
        if encoded == BOUNDARY:
            continue
        hf = HalfFacetId(*divmod(int(encoded), n_facets))
        back = mesh_3d.sibling(hf)
        assert back is not None
        assert mesh_3d.sibling(back) == hf
        assert sorted(mesh_3d.facet_nodes(hf).tolist()) == sorted(mesh_3d.facet_nodes(back).tolist())


def test_v2hf_prefers_boundary(mesh_2d: MeshTopology):
    n_facets = mesh_2d.dim + 1
    for node in mesh_2d.boundary_nodes():
        elem, lf = divmod(int(mesh_2d.v2hf[node]), n_facets)
        assert mesh_2d.sibhfs[elem, lf] == BOUNDARY
        assert node in mesh_2d.facet_nodes(HalfFacetId(elem, lf))


def test_non_manifold_edge():
    elems = np.array([[0, 1, 2], [1, 0, 3], [0, 1, 4]])
    with pytest.raises(NonManifoldError):
        build_ahf(elems)


def test_negative_orientation_rejected():
    with pytest.raises(MeshGeometryError):
        MeshTopology.from_arrays([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 2, 1]])


def test_structured_counts(mesh_2d: MeshTopology, mesh_3d: MeshTopology):
    assert mesh_2d.n_nodes == 25
    assert mesh_2d.n_elems == 2 * 4 * 4
    assert len(mesh_2d.boundary_nodes()) == 16
    np.testing.assert_allclose(mesh_2d.measures().sum(), 1.0)
    assert mesh_3d.n_nodes == 64
    assert mesh_3d.n_elems == 6 * 27
    assert len(mesh_3d.boundary_nodes()) == 64 - 8
    assert np.all(mesh_3d.measures() > 0)
    np.testing.assert_allclose(mesh_3d.measures().sum(), 1.0)


def test_structured_node_numbering(mesh_2d: MeshTopology):
    np.testing.assert_allclose(mesh_2d.coords[2 + 3 * 5], [0.5, 0.75])


def test_one_ring_elements(mesh_2d: MeshTopology, mesh_3d: MeshTopology):
    ring = one_ring_elements(mesh_2d, 12)
    assert len(ring) == 6
    assert ring == sorted(ring)
    assert all(12 in mesh_2d.elems[e] for e in ring)
    assert len(one_ring_elements(mesh_3d, 1 + 4 + 16)) == 24
    with pytest.raises(ValueError):
        one_ring_elements(mesh_2d, 25)


def test_ring_neighborhood(mesh_2d: MeshTopology):
    one = ring_neighborhood(mesh_2d, 12, RingSize(1))
    assert one[0] == 12
    assert one[1:] == sorted(one[1:])
    assert sorted(one) == [6, 7, 11, 12, 13, 17, 18]
    assert len(ring_neighborhood(mesh_2d, 12, RingSize(1, Fraction(1, 2)))) == 13
    assert len(ring_neighborhood(mesh_2d, 12, RingSize(2))) == 19


def test_ring_neighborhood_3d(mesh_3d: MeshTopology):
    center = 1 + 4 + 16
    one = ring_neighborhood(mesh_3d, center, RingSize(1))
    assert len(one) == 15
    third = ring_neighborhood(mesh_3d, center, RingSize(1, Fraction(1, 3)))
    two_thirds = ring_neighborhood(mesh_3d, center, RingSize(1, Fraction(2, 3)))
    two = ring_neighborhood(mesh_3d, center, RingSize(2))
    assert set(one) <= set(third) <= set(two_thirds) <= set(two)


def test_ring_size():
    assert RingSize(1).grow(2) == RingSize(1, Fraction(1, 2))
    assert RingSize(1, Fraction(1, 2)).grow(2) == RingSize(2)
    assert RingSize(1, Fraction(2, 3)).grow(3) == RingSize(2)
    assert float(RingSize(3, Fraction(1, 2))) == 3.5
    RingSize(2, Fraction(1, 3)).validate(3)
    with pytest.raises(ValueError):
        RingSize(1, Fraction(1, 2)).validate(3)
    with pytest.raises(ValueError):
        RingSize(0, Fraction(1, 2)).validate(2)


def test_structured_quality(mesh_2d: MeshTopology):
    quality = mesh_quality(mesh_2d)
    assert quality.min_angle == pytest.approx(45.0)
    assert quality.max_angle == pytest.approx(90.0)
    assert quality.cot_min_angle == pytest.approx(1.0)
    assert quality.max_aspect_ratio == pytest.approx(np.sqrt(2.0))


def test_degradation_targets_are_independent(mesh_2d: MeshTopology):
    targets = select_degradation_targets(mesh_2d)
    assert len(targets) > 0
    rings = []
    for elem in targets:
        moved = mesh_2d.elems[elem, -1]
        assert not mesh_2d.boundary_mask[moved]
        rings.append(set(mesh_2d.elems[one_ring_elements(mesh_2d, moved)].ravel().tolist()))
    for i in range(len(rings)):
        for j in range(i + 1, len(rings)):
            assert not rings[i] & rings[j]
    assert len(select_degradation_targets(mesh_2d, limit=1)) == 1


def test_degrade_halves_distance(mesh_2d: MeshTopology):
    target = select_degradation_targets(mesh_2d, limit=1)[0]
    moved = mesh_2d.elems[target, -1]
    a, b = mesh_2d.coords[mesh_2d.elems[target, :-1]]

    def distance(p):
        edge = b - a
        return abs(edge[0] * (p - a)[1] - edge[1] * (p - a)[0]) / np.linalg.norm(edge)

    degraded = degrade_mesh(mesh_2d, [target], 0.5)
    assert distance(degraded.coords[moved]) == pytest.approx(0.5 * distance(mesh_2d.coords[moved]))
    assert np.all(degraded.elems == mesh_2d.elems)
    assert mesh_quality(degraded).cot_min_angle > mesh_quality(mesh_2d).cot_min_angle


def test_degrade_makes_slivers(mesh_2d: MeshTopology, mesh_3d: MeshTopology):
    targets = select_degradation_targets(mesh_2d)
    degraded = degrade_mesh(mesh_2d, targets, 0.99999)
    assert np.all(degraded.measures() > 0)
    assert mesh_quality(degraded).cot_min_angle > 1e4

    targets = select_degradation_targets(mesh_3d)
    assert len(targets) > 0
    degraded = degrade_mesh(mesh_3d, targets, 0.9)
    assert np.all(degraded.measures() > 0)
    assert mesh_quality(degraded).min_angle < mesh_quality(mesh_3d).min_angle


def test_degradation_keeps_nodes_apart():
    mesh = generate_structured_mesh(6, 3)
    h = 1.0 / 5.0
    targets = select_degradation_targets(mesh)
    assert targets
    degraded = degrade_mesh(mesh, targets, 0.99999)
    assert mesh_quality(degraded).cot_min_angle > 1e3
    for elem in targets:
        moved = mesh.elems[elem, -1]
        others = np.delete(degraded.coords, moved, axis=0)
        assert np.linalg.norm(others - degraded.coords[moved], axis=1).min() > 0.25 * h


def test_degrade_rejects_bad_fraction(mesh_2d: MeshTopology):
    with pytest.raises(ValueError):
        degrade_mesh(mesh_2d, [0], 1.0)
    with pytest.raises(ValueError):
        degrade_mesh(mesh_2d, [mesh_2d.n_elems], 0.5)
