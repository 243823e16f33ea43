import numpy as np
import pytest
import scipy.sparse as sp

from aesfem.discretization import (
    LoadMode,
    PdeSpec,
    SystemBuilder,
    apply_dirichlet,
    assemble_aes_fem,
    assemble_gfd,
    assemble_linear_fem,
    hat_gradients,
)
from aesfem.mesh import MeshGeometryError, MeshTopology, generate_structured_mesh, mesh_quality, one_ring_elements
from aesfem.problems import analytic_solution, polynomial_problem

QUADRATIC = {(0, 0): 1.0, (1, 0): 1.0, (0, 1): -1.0, (2, 0): 1.0, (1, 1): 1.0, (0, 2): 2.0}


@pytest.fixture
def quadratic_poisson():
    return polynomial_problem(2, PdeSpec.poisson(), QUADRATIC)


@pytest.fixture
def quadratic_convdiff():
    return polynomial_problem(2, PdeSpec.convection_diffusion(2, (1.0, -0.5)), QUADRATIC)


def _residual(system, problem, mesh: MeshTopology) -> np.ndarray:
    exact = problem.u(mesh.coords)
    return system.matrix @ exact[system.free_nodes] - system.rhs


def test_hat_gradients():
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    grads, measures = hat_gradients(coords, np.array([[0, 1, 2]]))
    np.testing.assert_allclose(grads[0], [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(measures, [0.5])
    with pytest.raises(MeshGeometryError):
        hat_gradients(coords, np.array([[0, 2, 1]]))


def test_fem_five_point_stencil(structured_mesh: MeshTopology):
    system = assemble_linear_fem(structured_mesh, polynomial_problem(2, PdeSpec(), {}))
    assert system.n_free == 9
    row = system.full_rows()[system.free_index(12)].toarray().ravel()
    assert row[12] == pytest.approx(4.0)
    np.testing.assert_allclose(row[[7, 11, 13, 17]], -1.0)
    np.testing.assert_allclose(np.delete(row, [7, 11, 12, 13, 17]), 0.0, atol=1e-14)
    np.testing.assert_allclose(system.rhs, 0.0)


def test_fem_is_symmetric(sliver_mesh: MeshTopology, quadratic_poisson):
    assert mesh_quality(sliver_mesh).min_angle < 1.0
    matrix = assemble_linear_fem(sliver_mesh, quadratic_poisson).matrix
    assert abs(matrix - matrix.T).max() <= 1e-12 * abs(matrix).max()


def test_row_sums_vanish(sliver_mesh: MeshTopology, quadratic_convdiff):
    for system in (assemble_linear_fem(sliver_mesh, quadratic_convdiff),
                   assemble_aes_fem(sliver_mesh, quadratic_convdiff),
                   assemble_gfd(sliver_mesh, quadratic_convdiff)):
        sums = np.asarray(system.full_rows().sum(axis=1)).ravel()
        np.testing.assert_allclose(sums, 0.0, atol=1e-9)


def test_quadratic_consistency(sliver_mesh: MeshTopology, quadratic_poisson, quadratic_convdiff):
    for problem in (quadratic_poisson, quadratic_convdiff):
        for system in (assemble_aes_fem(sliver_mesh, problem, LoadMode.AES_FEM_1),
                       assemble_aes_fem(sliver_mesh, problem, LoadMode.AES_FEM_2),
                       assemble_gfd(sliver_mesh, problem)):
            np.testing.assert_allclose(_residual(system, problem, sliver_mesh), 0.0, atol=1e-8)


def test_load_modes_share_the_stiffness_matrix(sliver_mesh: MeshTopology):
    problem = analytic_solution("u1", 2, PdeSpec.convection_diffusion(2))
    first = assemble_aes_fem(sliver_mesh, problem, LoadMode.AES_FEM_1).matrix
    second = assemble_aes_fem(sliver_mesh, problem, LoadMode.AES_FEM_2).matrix
    np.testing.assert_array_equal(first.indptr, second.indptr)
    np.testing.assert_array_equal(first.indices, second.indices)
    np.testing.assert_array_equal(first.data, second.data)


def test_one_ring_sparsity_matches_fem():
    mesh = generate_structured_mesh(6, 2)
    problem = analytic_solution("u2", 2)
    fem = assemble_linear_fem(mesh, problem).matrix
    aes = assemble_aes_fem(mesh, problem).matrix
    assert aes.nnz == fem.nnz
    np.testing.assert_array_equal(aes.indptr, fem.indptr)


def test_wls_call_counts(structured_mesh: MeshTopology):
    problem = analytic_solution("u1", 2)
    first = assemble_aes_fem(structured_mesh, problem, LoadMode.AES_FEM_1)
    incident = sum(len(one_ring_elements(structured_mesh, int(v))) for v in first.free_nodes)
    assert first.wls_calls == incident
    assert assemble_aes_fem(structured_mesh, problem, LoadMode.AES_FEM_2).wls_calls == 2 * incident
    gfd = assemble_gfd(structured_mesh, problem)
    assert gfd.wls_calls == gfd.n_free


def test_gfd_row_is_negative_laplacian(structured_mesh: MeshTopology):
    system = assemble_gfd(structured_mesh, analytic_solution("u1", 2))
    rows = system.full_rows()
    x = structured_mesh.coords[:, 0]
    np.testing.assert_allclose(rows @ (x * x), -2.0, atol=1e-10)
    np.testing.assert_allclose(rows @ x, 0.0, atol=1e-10)


def test_parallel_assembly_matches_serial():
    mesh = generate_structured_mesh(8, 2)
    problem = analytic_solution("u3", 2, PdeSpec.convection_diffusion(2))
    serial = assemble_aes_fem(mesh, problem, LoadMode.AES_FEM_2)
    parallel = assemble_aes_fem(mesh, problem, LoadMode.AES_FEM_2, workers=2)
    np.testing.assert_array_equal(serial.matrix.toarray(), parallel.matrix.toarray())
    np.testing.assert_array_equal(serial.rhs, parallel.rhs)
    assert serial.wls_calls == parallel.wls_calls


def test_homogeneous_dirichlet(structured_mesh: MeshTopology):
    system = assemble_aes_fem(structured_mesh, analytic_solution("u1", 2))
    assert system.n_nodes == 25
    assert len(system.dirichlet_nodes) == 16
    np.testing.assert_array_equal(system.dirichlet_values, 0.0)
    full = system.expand(np.arange(system.n_free, dtype=float))
    assert full[12] == system.free_index(12)
    assert full[0] == 0.0


def test_single_unknown(structured_mesh: MeshTopology):
    problem = polynomial_problem(2, PdeSpec(), {(0, 0): 1.0, (1, 0): 1.0, (0, 1): 2.0})
    fixed = [v for v in range(structured_mesh.n_nodes) if v != 12]
    for system in (assemble_linear_fem(structured_mesh, problem, dirichlet_nodes=fixed),
                   assemble_aes_fem(structured_mesh, problem, dirichlet_nodes=fixed)):
        assert system.matrix.shape == (1, 1)
        assert system.rhs[0] / system.matrix[0, 0] == pytest.approx(2.5)


def test_exact_load_agrees_for_constant_source(sliver_mesh: MeshTopology, quadratic_poisson):
    interpolated = assemble_linear_fem(sliver_mesh, quadratic_poisson)
    exact = assemble_linear_fem(sliver_mesh, quadratic_poisson, exact_load=True)
    np.testing.assert_allclose(interpolated.rhs, exact.rhs, rtol=1e-12, atol=1e-12)
    aes = assemble_aes_fem(sliver_mesh, quadratic_poisson, exact_load=True)
    assert aes.wls_calls == assemble_aes_fem(sliver_mesh, quadratic_poisson).wls_calls


def test_system_builder():
    builder = SystemBuilder(3, np.array([0, 1]))
    builder.add(0, [0, 1, 2], [2.0, -1.0, -1.0])
    builder.add(2, [2], [5.0])
    builder.add_load(0, 1.0)
    with pytest.raises(ValueError, match="no entries"):
        builder.build(np.array([2]), np.array([3.0]))
    builder.add(1, [1], [1.0])
    system = builder.build(np.array([2]), np.array([3.0]))
    np.testing.assert_allclose(system.matrix.toarray(), [[2.0, -1.0], [0.0, 1.0]])
    np.testing.assert_allclose(system.rhs, [1.0 + 3.0, 0.0])


def test_load_mode_names():
    assert LoadMode.string_to_enum("2") == LoadMode.AES_FEM_2
    assert LoadMode.string_to_enum("aes-fem-1") == LoadMode.AES_FEM_1
    assert LoadMode.string_to_enum("AESFEM2") == LoadMode.AES_FEM_2
    with pytest.raises(ValueError):
        LoadMode.string_to_enum("3")


def test_dimension_mismatch(structured_mesh: MeshTopology):
    with pytest.raises(ValueError):
        assemble_linear_fem(structured_mesh, analytic_solution("u1", 3))
    with pytest.raises(ValueError):
        assemble_gfd(structured_mesh, analytic_solution("u1", 3))


def test_apply_dirichlet_moves_columns_to_rhs():
    rows = sp.csr_matrix(np.array([[-1.0, 2.0, -1.0, 0.0], [0.0, -1.0, 2.0, -1.0]]))
    system = apply_dirichlet(rows, np.array([1.0, 0.0]), np.array([1, 2]), np.array([0, 3]), np.array([2.0, -1.0]))
    np.testing.assert_allclose(system.matrix.toarray(), [[2.0, -1.0], [-1.0, 2.0]])
    np.testing.assert_allclose(system.rhs, [3.0, -1.0])
    np.testing.assert_allclose(system.full_rows().toarray(), rows.toarray())
    np.testing.assert_allclose(system.expand(np.array([5.0, 6.0])), [2.0, 5.0, 6.0, -1.0])
