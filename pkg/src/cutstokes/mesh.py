"""Structured triangular background meshes and their unfitted views."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np


class Tag(enum.IntEnum):
    INSIDE = 0
    CUT = 1
    OUTSIDE = 2


# Relative size of the shift applied to vertex level-set values that vanish.
GEOM_EPS = 1e-12


@dataclass(frozen=True)
class BackgroundMesh:
    """Conforming triangulation of an axis-aligned box.

    ``faces[f]`` holds the two vertex indices of edge ``f``;
    ``face_elements[f] = (owner, neighbor)`` with ``neighbor == -1`` on the
    box boundary, and ``face_normals[f]`` points from owner to neighbor.
    """

    vertices: np.ndarray
    elements: np.ndarray
    faces: np.ndarray
    face_elements: np.ndarray
    face_normals: np.ndarray
    element_faces: np.ndarray
    h_T: np.ndarray
    h_F: np.ndarray
    bbox: tuple[float, float, float, float]
    n: int

    @property
    def h_max(self) -> float:
        return float(self.h_T.max())

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def areas(self) -> np.ndarray:
        tri = self.vertices[self.elements]
        e1 = tri[:, 1] - tri[:, 0]
        e2 = tri[:, 2] - tri[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def face_lengths(self) -> np.ndarray:
        seg = self.vertices[self.faces]
        return np.linalg.norm(seg[:, 1] - seg[:, 0], axis=1)

    def to_csv(self, directory: str | Path) -> None:
        """Write ``vertices.csv`` and ``elements.csv`` for debugging."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "vertices.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "x", "y"])
            for i, (x, y) in enumerate(self.vertices):
                w.writerow([i, repr(float(x)), repr(float(y))])
        with open(directory / "elements.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "v0", "v1", "v2"])
            for i, tri in enumerate(self.elements):
                w.writerow([i, *map(int, tri)])


def build_structured_mesh(bbox, n: int) -> BackgroundMesh:
    """Uniform n x n grid on ``bbox = (xmin, xmax, ymin, ymax)``.

    Each square is split along its lower-left to upper-right diagonal.
    """
    if n < 1:
        raise ValueError(f"need at least one subdivision, got n={n}")
    xmin, xmax, ymin, ymax = map(float, bbox)
    if not (xmax > xmin and ymax > ymin):
        raise ValueError(f"degenerate bounding box {bbox}")

    xs = np.linspace(xmin, xmax, n + 1)
    ys = np.linspace(ymin, ymax, n + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    v00 = (j * (n + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    elements = np.empty((2 * n * n, 3), dtype=np.int64)
    elements[0::2] = lower
    elements[1::2] = upper
    return _finalize(vertices, elements, (xmin, xmax, ymin, ymax), n)


def _finalize(vertices, elements, bbox, n) -> BackgroundMesh:
    ne = len(elements)
    # local edge e is opposite to local vertex e
    local = np.array([[1, 2], [2, 0], [0, 1]])
    edges = elements[:, local].reshape(-1, 2)
    key = np.sort(edges, axis=1)
    uniq, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if counts.max() > 2:
        raise ValueError("non-manifold triangulation")
    nf = len(uniq)
    owner = np.full(nf, -1, dtype=np.int64)
    neighbor = np.full(nf, -1, dtype=np.int64)
    elem_of_edge = np.repeat(np.arange(ne), 3)
    order = np.argsort(inverse, kind="stable")
    sorted_faces = inverse[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_faces[1:] != sorted_faces[:-1]
    owner[sorted_faces[first]] = elem_of_edge[order[first]]
    neighbor[sorted_faces[~first]] = elem_of_edge[order[~first]]

    tri = vertices[elements]
    centroids = tri.mean(axis=1)
    seg = vertices[uniq]
    tangent = seg[:, 1] - seg[:, 0]
    lengths = np.linalg.norm(tangent, axis=1)
    normals = np.column_stack([tangent[:, 1], -tangent[:, 0]]) / lengths[:, None]
    mid = seg.mean(axis=1)
    flip = np.einsum("ij,ij->i", normals, mid - centroids[owner]) < 0
    normals[flip] *= -1.0

    e = tri[:, [1, 2, 0]] - tri
    h_T = np.linalg.norm(e, axis=2).max(axis=1)
    h_F = h_T[owner].copy()
    interior = neighbor >= 0
    h_F[interior] = np.minimum(h_T[owner[interior]], h_T[neighbor[interior]])

    element_faces = inverse.reshape(ne, 3)
    return BackgroundMesh(
        vertices=vertices,
        elements=elements,
        faces=uniq,
        face_elements=np.column_stack([owner, neighbor]),
        face_normals=normals,
        element_faces=element_faces,
        h_T=h_T,
        h_F=h_F,
        bbox=tuple(bbox),
        n=n,
    )


def subdivisions_for(width: float, h: float, measure: str = "diameter") -> int:
    """Fewest subdivisions of a square box with cell diagonal (``diameter``) or
    cell side (``side``) at most ``h``."""
    if h <= 0:
        raise ValueError("mesh size must be positive")
    if measure == "diameter":
        ratio = width * math.sqrt(2.0) / h
    elif measure == "side":
        ratio = width / h
    else:
        raise ValueError(f"unknown mesh measure {measure!r}")
    # the small slack keeps ratios that are integers up to rounding from stepping up
    return max(1, math.ceil(ratio - 1e-9))


@dataclass(frozen=True)
class UnfittedMeshView:
    """Active/cut element sets and face sets of a mesh relative to a level set.

    ``vertex_values`` are the level-set values at the mesh vertices after the
    zero shift; all cut geometry derives from their per-element linear
    interpolant.
    """

    mesh: BackgroundMesh
    vertex_values: np.ndarray
    tags: np.ndarray
    active: np.ndarray
    cut: np.ndarray
    interior_faces: np.ndarray
    ghost_faces: np.ndarray
    active_index: np.ndarray = field(repr=False)

    @property
    def n_active(self) -> int:
        return len(self.active)

    def is_active(self, elems: np.ndarray) -> np.ndarray:
        return self.active_index[elems] >= 0


def classify_and_extract(mesh: BackgroundMesh, phi: Callable[[np.ndarray], np.ndarray]) -> UnfittedMeshView:
    """Classify elements by the signs of the vertex values of ``phi``.

    Vertex values with ``|phi| <= 1e-12 h_max`` are set to ``-1e-12 h_max``:
    elements with all vertices on the zero level count as Inside, and
    elements touching it from outside become Cut with a sliver of that size.
    """
    values = np.asarray(phi(mesh.vertices), dtype=float).copy()
    eps = GEOM_EPS * mesh.h_max
    values[np.abs(values) <= eps] = -eps

    ev = values[mesh.elements]
    neg = (ev < 0).sum(axis=1)
    tags = np.full(mesh.n_elements, Tag.CUT, dtype=np.int8)
    tags[neg == 3] = Tag.INSIDE
    tags[neg == 0] = Tag.OUTSIDE

    active = np.flatnonzero(tags != Tag.OUTSIDE)
    if len(active) == 0:
        raise ValueError("the domain does not intersect the background mesh")
    cut = np.flatnonzero(tags == Tag.CUT)
    active_index = np.full(mesh.n_elements, -1, dtype=np.int64)
    active_index[active] = np.arange(len(active))

    owner, neighbor = mesh.face_elements.T
    both = (neighbor >= 0) & (tags[owner] != Tag.OUTSIDE)
    both[both] &= tags[neighbor[both]] != Tag.OUTSIDE
    interior_faces = np.flatnonzero(both)
    touches_cut = tags[owner] == Tag.CUT
    touches_cut[neighbor >= 0] |= tags[neighbor[neighbor >= 0]] == Tag.CUT
    ghost_faces = np.flatnonzero(both & touches_cut)

    return UnfittedMeshView(
        mesh=mesh,
        vertex_values=values,
        tags=tags,
        active=active,
        cut=cut,
        interior_faces=interior_faces,
        ghost_faces=ghost_faces,
        active_index=active_index,
    )
