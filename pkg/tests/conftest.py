import numpy as np
import pytest

from aesfem.mesh import MeshTopology, degrade_mesh, generate_structured_mesh, select_degradation_targets


def perturbed_grid(n: int, dim: int, amplitude: float = 0.15, seed: int = 2024) -> MeshTopology:
    """Structured mesh with interior nodes moved by up to ``amplitude`` times the spacing."""
    mesh = generate_structured_mesh(n, dim)
    h = 1.0 / (n - 1)
    rng = np.random.default_rng(seed)
    coords = np.array(mesh.coords)
    interior = ~mesh.boundary_mask
    coords[interior] += rng.uniform(-amplitude * h, amplitude * h, size=(int(interior.sum()), dim))
    return mesh.with_coords(coords)


@pytest.fixture
def structured_mesh() -> MeshTopology:
    return generate_structured_mesh(5, 2)


@pytest.fixture
def sliver_mesh() -> MeshTopology:
    """Perturbed 12 x 12 grid with one element squashed almost flat."""
    perturbed = perturbed_grid(12, 2)
    targets = select_degradation_targets(perturbed, limit=1)
    return degrade_mesh(perturbed, targets, 0.999)
