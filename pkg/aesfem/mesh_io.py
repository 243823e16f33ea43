import logging
import os.path
from typing import Iterator

import numpy as np

from aesfem.mesh import MeshTopology, element_measures


class MeshFormatError(ValueError):
    pass


def _data_lines(path: str) -> Iterator[tuple[int, list[str]]]:
    """Yield (line number, fields) for every non-empty line, with # comments removed."""
    with open(path, "r") as f:
        for number, line in enumerate(f, start=1):
            fields = line.split("#", 1)[0].split()
            if fields:
                yield number, fields


def _parse_header(path: str, lines: Iterator[tuple[int, list[str]]], min_fields: int) -> list[int]:
    try:
        number, fields = next(lines)
    except StopIteration:
        raise MeshFormatError(f"{path}: file is empty")
    if len(fields) < min_fields:
        raise MeshFormatError(f"{path}:{number}: header needs {min_fields} fields, got {len(fields)}")
    try:
        return [int(v) for v in fields]
    except ValueError:
        raise MeshFormatError(f"{path}:{number}: header fields must be integers, got {fields}")


def read_node_header(path: str) -> tuple[int, int]:
    """Number of points and dimension declared by a .node file."""
    header = _parse_header(path, _data_lines(path), 2)
    if header[1] not in (2, 3):
        raise MeshFormatError(f"{path}:1: unsupported dimension {header[1]}")
    return header[0], header[1]


def _read_nodes(path: str) -> tuple[np.ndarray, int]:
    lines = _data_lines(path)
    header = _parse_header(path, lines, 2)
    n_points, dim = header[0], header[1]
    if dim not in (2, 3):
        raise MeshFormatError(f"{path}:1: unsupported dimension {dim}")
    coords = np.empty((n_points, dim))
    base = None
    for row in range(n_points):
        try:
            number, fields = next(lines)
        except StopIteration:
            raise MeshFormatError(f"{path}: header declares {n_points} nodes but only {row} are present")
        if len(fields) < dim + 1:
            raise MeshFormatError(f"{path}:{number}: expected an index and {dim} coordinates")
        try:
            index = int(fields[0])
            coords[row] = [float(v) for v in fields[1:dim + 1]]
        except ValueError:
            raise MeshFormatError(f"{path}:{number}: could not parse node row {fields}")
        if base is None:
            if index not in (0, 1):
                raise MeshFormatError(f"{path}:{number}: first node index must be 0 or 1, got {index}")
            base = index
        if index != base + row:
            raise MeshFormatError(f"{path}:{number}: expected node index {base + row}, got {index}")
    return coords, base if base is not None else 0


def _read_elements(path: str, dim: int, n_nodes: int, base: int) -> np.ndarray:
    lines = _data_lines(path)
    header = _parse_header(path, lines, 2)
    n_elems, per_elem = header[0], header[1]
    if per_elem != dim + 1:
        raise MeshFormatError(f"{path}:1: expected {dim + 1} nodes per element for a {dim}D mesh, got {per_elem}")
    elems = np.empty((n_elems, per_elem), dtype=np.int64)
    for row in range(n_elems):
        try:
            number, fields = next(lines)
        except StopIteration:
            raise MeshFormatError(f"{path}: header declares {n_elems} elements but only {row} are present")
        try:
            index = int(fields[0])
            nodes = [int(v) for v in fields[1:per_elem + 1]]
        except ValueError:
            raise MeshFormatError(f"{path}:{number}: could not parse element row {fields}")
        if len(nodes) != per_elem:
            raise MeshFormatError(f"{path}:{number}: expected {per_elem} node ids")
        if index != base + row:
            raise MeshFormatError(
                f"{path}:{number}: element index {index} does not follow the {base}-based node numbering")
        for node in nodes:
            if node < base or node >= base + n_nodes:
                raise MeshFormatError(f"{path}:{number}: node id {node} is out of range")
        elems[row] = nodes
    return elems - base


def load_mesh(node_path: str, ele_path: str, reorient: bool = False) -> MeshTopology:
    """Read a Triangle/TetGen .node/.ele pair.

    Attributes and boundary markers are ignored. Negatively oriented elements
    are rejected unless ``reorient`` is set.
    """
    coords, base = _read_nodes(node_path)
    elems = _read_elements(ele_path, coords.shape[1], len(coords), base)
    if reorient:
        negative = element_measures(coords, elems) < 0
        if np.any(negative):
            logging.info(f"Reorienting {int(negative.sum())} negatively oriented elements from {ele_path}")
            elems[negative] = elems[negative][:, [1, 0] + list(range(2, elems.shape[1]))]
    mesh = MeshTopology.from_arrays(coords, elems)
    logging.info(f"Loaded {mesh.dim}D mesh with {mesh.n_nodes} nodes and {mesh.n_elems} elements "
                 f"({base}-based) from {os.path.basename(node_path)}")
    return mesh


def write_mesh(mesh: MeshTopology, basename: str) -> tuple[str, str]:
    """Write ``basename.node`` and ``basename.ele`` with 1-based numbering."""
    node_path = f"{basename}.node"
    ele_path = f"{basename}.ele"
    directory = os.path.dirname(node_path)
    if directory:
        try:
            os.makedirs(name=directory, exist_ok=True)
        except OSError as e:
            raise ValueError(f"Unable to create mesh directory at {directory}, error: {e}")
    with open(node_path, "w") as f:
        f.write(f"{mesh.n_nodes} {mesh.dim} 0 0\n")
        for i, point in enumerate(mesh.coords, start=1):
            f.write(f"{i} " + " ".join(repr(float(v)) for v in point) + "\n")
    with open(ele_path, "w") as f:
        f.write(f"{mesh.n_elems} {mesh.dim + 1} 0\n")
        for i, nodes in enumerate(mesh.elems + 1, start=1):
            f.write(f"{i} " + " ".join(str(int(v)) for v in nodes) + "\n")
    return node_path, ele_path
