import itertools
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Optional, Sequence

import numpy as np

# Sentinel for boundary half-facets in sibhfs and unreferenced nodes in v2hf
BOUNDARY = -1

# Minimum distance, relative to the shortest facet edge, from a degradation
# target's projection to the facet vertices
FOOT_CLEARANCE = 0.25

# Local facets follow the AHF convention; every facet is outward for a
# positively oriented element.
FACETS_2D = np.array([[0, 1], [1, 2], [2, 0]])
FACETS_3D = np.array([[0, 2, 1], [0, 1, 3], [1, 2, 3], [2, 0, 3]])

LEGAL_FRACTIONS = {
    2: (Fraction(0), Fraction(1, 2)),
    3: (Fraction(0), Fraction(1, 3), Fraction(2, 3)),
}


class MeshGeometryError(ValueError):
    pass


class NonManifoldError(ValueError):
    pass


def local_facets(dim: int) -> np.ndarray:
    if dim == 2:
        return FACETS_2D
    if dim == 3:
        return FACETS_3D
    raise ValueError(f"Unsupported mesh dimension {dim}, expected 2 or 3")


class HalfFacetId(NamedTuple):
    element: int
    local_facet: int


@dataclass(frozen=True, order=True)
class RingSize:
    whole: int
    fraction: Fraction = Fraction(0)

    def validate(self, dim: int):
        if self.whole < 1:
            raise ValueError(f"Ring size must have a whole part of at least 1, got {self.whole}")
        if self.fraction not in LEGAL_FRACTIONS[dim]:
            raise ValueError(f"Ring fraction {self.fraction} is not legal for a {dim}D mesh")

    def grow(self, dim: int) -> "RingSize":
        step = Fraction(1, 2) if dim == 2 else Fraction(1, 3)
        total = self.whole + self.fraction + step
        whole = int(total)
        return RingSize(whole, total - whole)

    def __float__(self) -> float:
        return self.whole + float(self.fraction)


def simplex_measures(vertices: np.ndarray) -> np.ndarray:
    """Signed measures of simplices given as vertices of shape (k, dim + 1, dim)."""
    dim = vertices.shape[2]
    edges = vertices[:, 1:, :] - vertices[:, :1, :]
    factorial = 2.0 if dim == 2 else 6.0
    return np.linalg.det(edges) / factorial


def element_measures(coords: np.ndarray, elems: np.ndarray) -> np.ndarray:
    """Signed areas (2D) or volumes (3D) of all elements."""
    return simplex_measures(coords[np.asarray(elems, dtype=np.int64)])


def build_ahf(elems: np.ndarray, n_nodes: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Build sibling half-facets and the vertex to half-facet map.

    Half-facets are encoded as ``element * (dim + 1) + local_facet``.
    """
    elems = np.asarray(elems, dtype=np.int64)
    n_elems, n_verts = elems.shape
    dim = n_verts - 1
    facets = local_facets(dim)
    if n_nodes is None:
        n_nodes = int(elems.max()) + 1 if elems.size else 0

    facet_nodes = elems[:, facets].reshape(-1, dim)
    keys = np.sort(facet_nodes, axis=1)
    order = np.lexsort(keys.T[::-1])
    sorted_keys = keys[order]
    same = np.all(sorted_keys[1:] == sorted_keys[:-1], axis=1)
    triple = same[1:] & same[:-1]
    if np.any(triple):
        bad = sorted_keys[np.argmax(triple)]
        raise NonManifoldError(f"Facet with nodes {bad.tolist()} is shared by more than two elements")

    sibhfs = np.full(n_elems * n_verts, BOUNDARY, dtype=np.int64)
    first = order[:-1][same]
    second = order[1:][same]
    sibhfs[first] = second
    sibhfs[second] = first

    v2hf = np.full(n_nodes, BOUNDARY, dtype=np.int64)
    hf_ids = np.repeat(np.arange(n_elems * n_verts), dim)
    v2hf[facet_nodes.ravel()] = hf_ids
    boundary = np.repeat(sibhfs == BOUNDARY, dim)
    v2hf[facet_nodes.ravel()[boundary]] = hf_ids[boundary]
    return sibhfs.reshape(n_elems, n_verts), v2hf


@dataclass(frozen=True)
class MeshTopology:
    coords: np.ndarray
    elems: np.ndarray
    sibhfs: np.ndarray
    v2hf: np.ndarray
    boundary_mask: np.ndarray = field(repr=False)

    @classmethod
    def from_arrays(cls, coords, elems, check_orientation: bool = True) -> "MeshTopology":
        coords = np.array(coords, dtype=float)
        elems = np.array(elems, dtype=np.int64)
        if coords.ndim != 2 or coords.shape[1] not in (2, 3):
            raise ValueError(f"Coordinates must be an (n, 2) or (n, 3) array, got shape {coords.shape}")
        dim = coords.shape[1]
        if elems.ndim != 2 or elems.shape[1] != dim + 1:
            raise ValueError(f"A {dim}D mesh needs {dim + 1} nodes per element, got shape {elems.shape}")
        if elems.size and (elems.min() < 0 or elems.max() >= len(coords)):
            raise ValueError("Element connectivity references nodes outside the coordinate array")
        if check_orientation:
            measures = element_measures(coords, elems)
            bad = np.flatnonzero(measures <= 0)
            if len(bad):
                raise MeshGeometryError(f"Element {bad[0]} has nonpositive measure {measures[bad[0]]:.3e}")
        sibhfs, v2hf = build_ahf(elems, len(coords))
        n_facets = dim + 1
        boundary_mask = np.zeros(len(coords), dtype=bool)
        on_boundary = np.flatnonzero(sibhfs.ravel() == BOUNDARY)
        facet_table = local_facets(dim)
        for hf in on_boundary:
            boundary_mask[elems[hf // n_facets, facet_table[hf % n_facets]]] = True
        for array in (coords, elems, sibhfs, v2hf, boundary_mask):
            array.setflags(write=False)
        return cls(coords, elems, sibhfs, v2hf, boundary_mask)

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    @property
    def n_nodes(self) -> int:
        return len(self.coords)

    @property
    def n_elems(self) -> int:
        return len(self.elems)

    def sibling(self, hf: HalfFacetId) -> Optional[HalfFacetId]:
        encoded = self.sibhfs[hf.element, hf.local_facet]
        if encoded == BOUNDARY:
            return None
        return HalfFacetId(*divmod(int(encoded), self.dim + 1))

    def facet_nodes(self, hf: HalfFacetId) -> np.ndarray:
        return self.elems[hf.element, local_facets(self.dim)[hf.local_facet]]

    def boundary_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask)

    def measures(self) -> np.ndarray:
        return element_measures(self.coords, self.elems)

    def with_coords(self, coords: np.ndarray) -> "MeshTopology":
        """Same connectivity and adjacency with new coordinates."""
        coords = np.array(coords, dtype=float)
        coords.setflags(write=False)
        return MeshTopology(coords, self.elems, self.sibhfs, self.v2hf, self.boundary_mask)


def one_ring_elements(mesh: MeshTopology, node: int) -> list[int]:
    """Elements incident on ``node``, found by walking sibling half-facets from v2hf."""
    if node < 0 or node >= mesh.n_nodes or mesh.v2hf[node] == BOUNDARY:
        raise ValueError(f"Node {node} is not referenced by any element")
    n_facets = mesh.dim + 1
    facets = local_facets(mesh.dim)
    start = int(mesh.v2hf[node]) // n_facets
    seen = {start}
    stack = [start]
    while stack:
        elem = stack.pop()
        local = int(np.flatnonzero(mesh.elems[elem] == node)[0])
        for lf in range(n_facets):
            if local not in facets[lf]:
                continue
            sibling = mesh.sibhfs[elem, lf]
            if sibling == BOUNDARY:
                continue
            neighbor = int(sibling) // n_facets
            if neighbor not in seen:
                seen.add(neighbor)
                stack.append(neighbor)
    return sorted(seen)


def ring_neighborhood(mesh: MeshTopology, node: int, ring: RingSize) -> list[int]:
    """Stencil nodes for ``node``: the node itself first, then the rest ascending."""
    ring.validate(mesh.dim)
    incident: dict[int, list[int]] = {}

    def elements_of(v: int) -> list[int]:
        if v not in incident:
            incident[v] = one_ring_elements(mesh, v)
        return incident[v]

    members = set(mesh.elems[elements_of(node)].ravel().tolist())
    frontier = set(members)
    for _ in range(ring.whole - 1):
        grown = set(members)
        for v in frontier:
            grown.update(mesh.elems[elements_of(v)].ravel().tolist())
        frontier = grown - members
        members = grown

    if ring.fraction:
        # 1/2 and 2/3 take elements sharing an edge with the ring, 1/3 a face
        needed = 3 if ring.fraction == Fraction(1, 3) else 2
        candidates = set()
        for v in members:
            candidates.update(elements_of(v))
        extra = set()
        for elem in candidates:
            nodes = mesh.elems[elem].tolist()
            if sum(v in members for v in nodes) >= needed:
                extra.update(nodes)
        members |= extra

    members.discard(node)
    return [node] + sorted(members)


def generate_structured_mesh(n: int, dim: int) -> MeshTopology:
    """Uniform simplicial mesh of the unit square or cube with ``n`` nodes per side.

    Squares are split along the same diagonal everywhere; cubes use the
    six-tetrahedron Kuhn split around the main diagonal.
    """
    if n < 2:
        raise ValueError(f"Structured mesh needs at least 2 nodes per side, got {n}")
    if dim not in (2, 3):
        raise ValueError(f"Unsupported mesh dimension {dim}, expected 2 or 3")
    ticks = np.linspace(0.0, 1.0, n)
    grids = np.meshgrid(*([ticks] * dim), indexing="ij")
    # node id = i + j*n (+ k*n*n)
    coords = np.stack([g.transpose().ravel() for g in grids], axis=1)
    strides = n ** np.arange(dim)
    cells = np.stack(np.meshgrid(*([np.arange(n - 1)] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    base = cells @ strides

    if dim == 2:
        p00, p10, p11, p01 = base, base + 1, base + 1 + n, base + n
        elems = np.concatenate([
            np.stack([p11, p00, p10], axis=1),
            np.stack([p00, p11, p01], axis=1),
        ])
    else:
        tets = []
        for perm in itertools.permutations(range(dim)):
            offset = np.zeros(dim, dtype=np.int64)
            path = [base.copy()]
            for axis in perm:
                offset[axis] = 1
                path.append(base + offset @ strides)
            tets.append(np.stack(path, axis=1))
        elems = np.concatenate(tets)
        negative = element_measures(coords, elems) < 0
        elems[negative] = elems[negative][:, [0, 1, 3, 2]]

    return MeshTopology.from_arrays(coords, elems)


@dataclass(frozen=True)
class QualityReport:
    min_angle: float
    max_angle: float
    max_aspect_ratio: float

    @property
    def cot_min_angle(self) -> float:
        return 1.0 / np.tan(np.radians(self.min_angle))


def _element_angles_2d(coords: np.ndarray, elems: np.ndarray) -> np.ndarray:
    pts = coords[elems]
    angles = np.empty((len(elems), 3))
    for i in range(3):
        a = pts[:, (i + 1) % 3] - pts[:, i]
        b = pts[:, (i + 2) % 3] - pts[:, i]
        cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        angles[:, i] = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    return angles


def _face_normals_3d(coords: np.ndarray, elems: np.ndarray) -> np.ndarray:
    """Outward normals (unnormalized) of the face opposite each vertex."""
    pts = coords[elems]
    normals = np.empty((len(elems), 4, 3))
    for k in range(4):
        a, b, c = (pts[:, j] for j in range(4) if j != k)
        normal = np.cross(b - a, c - a)
        inward = np.einsum("ij,ij->i", normal, pts[:, k] - a) > 0
        normal[inward] *= -1
        normals[:, k] = normal
    return normals


def _element_dihedral_angles(coords: np.ndarray, elems: np.ndarray) -> np.ndarray:
    normals = _face_normals_3d(coords, elems)
    lengths = np.linalg.norm(normals, axis=2, keepdims=True)
    unit = normals / np.where(lengths > 0, lengths, 1.0)
    angles = []
    for i, j in itertools.combinations(range(4), 2):
        cos = -np.einsum("ij,ij->i", unit[:, i], unit[:, j])
        angles.append(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
    return np.stack(angles, axis=1)


def _edge_lengths(coords: np.ndarray, elems: np.ndarray) -> np.ndarray:
    pts = coords[elems]
    pairs = itertools.combinations(range(elems.shape[1]), 2)
    return np.stack([np.linalg.norm(pts[:, i] - pts[:, j], axis=1) for i, j in pairs], axis=1)


def mesh_quality(mesh: MeshTopology) -> QualityReport:
    coords, elems = mesh.coords, mesh.elems
    lengths = _edge_lengths(coords, elems)
    measures = mesh.measures()
    degenerate = measures <= 0
    if mesh.dim == 2:
        angles = _element_angles_2d(coords, elems)
        with np.errstate(divide="ignore"):
            aspect = lengths.max(axis=1) / lengths.min(axis=1)
    else:
        angles = _element_dihedral_angles(coords, elems)
        face_areas = np.linalg.norm(_face_normals_3d(coords, elems), axis=2) / 2.0
        with np.errstate(divide="ignore", invalid="ignore"):
            min_height = 3.0 * np.abs(measures) / face_areas.max(axis=1)
            aspect = lengths.max(axis=1) / min_height
    aspect = np.where(degenerate, np.inf, aspect)
    return QualityReport(float(angles.min()), float(angles.max()), float(aspect.max()))


def _facet_projection(p: np.ndarray, opposite: np.ndarray) -> np.ndarray:
    """Orthogonal projection of ``p`` onto the line (2D) or plane (3D) through ``opposite``."""
    if len(opposite) == 2:
        tangent = opposite[1] - opposite[0]
        tangent = tangent / np.linalg.norm(tangent)
        return opposite[0] + np.dot(p - opposite[0], tangent) * tangent
    normal = np.cross(opposite[1] - opposite[0], opposite[2] - opposite[0])
    normal = normal / np.linalg.norm(normal)
    return p - np.dot(p - opposite[0], normal) * normal


def _collapse_keeps_orientation(mesh: MeshTopology, elem: int, ring: list[int]) -> bool:
    """Whether every other element around the moved node stays non-inverted with the node on the facet plane.

    Measures are affine in the moved node, so this holds for every fraction below 1.
    """
    nodes = mesh.elems[elem]
    moved = nodes[-1]
    others = [e for e in ring if e != elem]
    vertices = mesh.coords[mesh.elems[others]]
    before = simplex_measures(vertices)
    vertices[mesh.elems[others] == moved] = _facet_projection(mesh.coords[moved], mesh.coords[nodes[:-1]])
    after = simplex_measures(vertices)
    return bool(np.all(after >= -1e-10 * before))


def _foot_clears_facet(mesh: MeshTopology, elem: int) -> bool:
    nodes = mesh.elems[elem]
    facet = mesh.coords[nodes[:-1]]
    foot = _facet_projection(mesh.coords[nodes[-1]], facet)
    edges = [np.linalg.norm(facet[i] - facet[j]) for i in range(len(facet)) for j in range(i)]
    clearance = np.linalg.norm(facet - foot, axis=1).min()
    return bool(clearance > FOOT_CLEARANCE * min(edges))


def select_degradation_targets(mesh: MeshTopology, limit: Optional[int] = None) -> list[int]:
    """Elements whose last node can be pushed toward the opposite facet independently of the others.

    The moved node is interior, no element around it inverts for any fraction
    below 1, and the 1-rings of moved nodes never share a node. The projection
    of the moved node must also stay clear of the facet's vertices, so the
    element flattens into a sliver instead of merging two nodes.
    """
    blocked = np.zeros(mesh.n_nodes, dtype=bool)
    targets = []
    for elem in range(mesh.n_elems):
        nodes = mesh.elems[elem]
        moved = int(nodes[-1])
        if mesh.boundary_mask[moved] or blocked[nodes].any():
            continue
        ring = one_ring_elements(mesh, moved)
        ring_nodes = mesh.elems[ring]
        if blocked[ring_nodes].any() or not _foot_clears_facet(mesh, elem):
            continue
        if not _collapse_keeps_orientation(mesh, elem, ring):
            continue
        blocked[ring_nodes.ravel()] = True
        targets.append(elem)
        if limit is not None and len(targets) >= limit:
            break
    return targets


def degrade_mesh(mesh: MeshTopology, targets: Sequence[int], fraction: float) -> MeshTopology:
    """Move the highest-local-index node of each target toward its opposite facet.

    The node moves to p + fraction * (q - p) where q is its orthogonal projection
    onto the line (2D) or plane (3D) of the opposite facet.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"Degradation fraction must lie in [0, 1), got {fraction}")
    coords = np.array(mesh.coords)
    for elem in targets:
        if elem < 0 or elem >= mesh.n_elems:
            raise ValueError(f"Target element {elem} is out of range")
        moved = mesh.elems[elem, -1]
        p = coords[moved]
        q = _facet_projection(p, coords[mesh.elems[elem, :-1]])
        coords[moved] = p + fraction * (q - p)

    measures = element_measures(coords, mesh.elems)
    bad = np.flatnonzero(measures <= 0)
    if len(bad):
        raise MeshGeometryError(
            f"Degrading by fraction {fraction} gives element {bad[0]} nonpositive measure {measures[bad[0]]:.3e}")
    logging.debug(f"Degraded {len(targets)} elements by fraction {fraction}")
    return mesh.with_coords(coords)
