import os.path

import numpy as np
import pytest

from aesfem.mesh import MeshGeometryError, generate_structured_mesh
from aesfem.mesh_io import MeshFormatError, load_mesh, read_node_header, write_mesh


@pytest.fixture
def mesh_dir(tmp_path) -> str:
    return str(tmp_path)


def _write(directory: str, name: str, text: str) -> str:
    path = os.path.join(directory, name)
    with open(path, "w") as f:
        f.write(text)
    return path


@pytest.fixture
def zero_based_pair(mesh_dir: str) -> tuple[str, str]:
    node_path = _write(mesh_dir, "square.node", """# unit square
4 2 1 1
0 0.0 0.0 7.5 1
1 1.0 0.0 7.5 1
2 1.0 1.0 7.5 1   # corner
3 0.0 1.0 7.5 1
""")
    ele_path = _write(mesh_dir, "square.ele", """2 3 0
0 0 1 2

1 0 2 3
""")
    return node_path, ele_path


def test_load_zero_based(zero_based_pair: tuple[str, str]):
    mesh = load_mesh(*zero_based_pair)
    assert mesh.dim == 2
    assert mesh.n_nodes == 4
    assert mesh.elems.tolist() == [[0, 1, 2], [0, 2, 3]]
    np.testing.assert_allclose(mesh.coords[2], [1.0, 1.0])
    assert read_node_header(zero_based_pair[0]) == (4, 2)


def test_write_then_load(mesh_dir: str):
    mesh = generate_structured_mesh(3, 3)
    node_path, ele_path = write_mesh(mesh, os.path.join(mesh_dir, "cube", "mesh3d_3"))
    with open(ele_path) as f:
        assert f.readline().split()[:2] == ["48", "4"]
        assert f.readline().split()[0] == "1"
    loaded = load_mesh(node_path, ele_path)
    np.testing.assert_array_equal(loaded.elems, mesh.elems)
    np.testing.assert_array_equal(loaded.coords, mesh.coords)
    np.testing.assert_array_equal(loaded.sibhfs, mesh.sibhfs)


def test_negative_orientation(mesh_dir: str):
    node_path = _write(mesh_dir, "tri.node", "3 2\n1 0 0\n2 1 0\n3 0 1\n")
    ele_path = _write(mesh_dir, "tri.ele", "1 3\n1 1 3 2\n")
    with pytest.raises(MeshGeometryError):
        load_mesh(node_path, ele_path)
    mesh = load_mesh(node_path, ele_path, reorient=True)
    assert mesh.measures()[0] == pytest.approx(0.5)


def test_node_count_mismatch(mesh_dir: str):
    node_path = _write(mesh_dir, "short.node", "4 2\n1 0 0\n2 1 0\n3 0 1\n")
    ele_path = _write(mesh_dir, "short.ele", "1 3\n1 1 2 3\n")
    with pytest.raises(MeshFormatError, match="declares 4 nodes"):
        load_mesh(node_path, ele_path)


def test_element_out_of_range(mesh_dir: str):
    node_path = _write(mesh_dir, "range.node", "3 2\n1 0 0\n2 1 0\n3 0 1\n")
    ele_path = _write(mesh_dir, "range.ele", "1 3\n1 1 2 4\n")
    with pytest.raises(MeshFormatError, match="out of range"):
        load_mesh(node_path, ele_path)


def test_nodes_per_element_mismatch(mesh_dir: str):
    node_path = _write(mesh_dir, "wrong.node", "3 2\n1 0 0\n2 1 0\n3 0 1\n")
    ele_path = _write(mesh_dir, "wrong.ele", "1 4\n1 1 2 3 3\n")
    with pytest.raises(MeshFormatError, match="3 nodes per element"):
        load_mesh(node_path, ele_path)


def test_bad_header(mesh_dir: str):
    node_path = _write(mesh_dir, "bad.node", "three 2\n")
    with pytest.raises(MeshFormatError):
        read_node_header(node_path)
    empty = _write(mesh_dir, "empty.node", "# nothing\n")
    with pytest.raises(MeshFormatError, match="empty"):
        read_node_header(empty)
    with pytest.raises(OSError):
        read_node_header(os.path.join(mesh_dir, "missing.node"))
