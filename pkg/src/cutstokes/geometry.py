"""Level sets and quadrature on cut elements, cut faces, and interfaces.

The geometry seen by the quadrature is the per-element linear interpolant
of the vertex level-set values: ``T ∩ Ω`` becomes a triangle or
quadrilateral and ``Γ ∩ T`` a straight segment.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import roots_jacobi

from .mesh import GEOM_EPS, Tag, UnfittedMeshView


class LevelSet:
    """Signed function, negative inside the physical domain."""

    def __init__(self, func: Callable[[np.ndarray], np.ndarray], kind: str = "custom", **params):
        self._func = func
        self.kind = kind
        self.params = params

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self._func(np.asarray(points, dtype=float))

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"LevelSet({self.kind}{', ' if args else ''}{args})"


def square_levelset(center=(0.5, 0.5), half_width: float = 0.5) -> LevelSet:
    """|x-cx| + |y-cy| + ||x-cx| - |y-cy|| - 2r, i.e. 2 (max-norm distance - r)."""
    cx, cy = map(float, center)
    r = float(half_width)

    def phi(p):
        ax = np.abs(p[..., 0] - cx)
        ay = np.abs(p[..., 1] - cy)
        return ax + ay + np.abs(ax - ay) - 2.0 * r

    kind = "square" if (cx, cy, r) == (0.5, 0.5, 0.5) else "shifted-square"
    return LevelSet(phi, kind, center=(cx, cy), half_width=r)


def circle_levelset(radius: float, center=(0.0, 0.0)) -> LevelSet:
    cx, cy = map(float, center)
    R = float(radius)

    def phi(p):
        return (p[..., 0] - cx) ** 2 + (p[..., 1] - cy) ** 2 - R * R

    return LevelSet(phi, "circle", radius=R, center=(cx, cy))


def line_levelset(normal, offset: float) -> LevelSet:
    """n . x - offset (negative on the side opposite to ``normal``)."""
    nx, ny = map(float, normal)

    def phi(p):
        return nx * p[..., 0] + ny * p[..., 1] - offset

    return LevelSet(phi, "custom", normal=(nx, ny), offset=float(offset))


# --------------------------------------------------------------------------
# reference rules


@lru_cache(maxsize=None)
def gauss_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on [0, 1] exact for polynomials of ``degree``."""
    m = max(1, (degree + 2) // 2)
    x, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss-Jacobi rule on the reference triangle.

    Exact for polynomials of total ``degree``; weights sum to 1/2.
    """
    m = max(1, (degree + 2) // 2)
    s, ws = np.polynomial.legendre.leggauss(m)
    s = 0.5 * (s + 1.0)
    ws = 0.5 * ws
    t, wt = roots_jacobi(m, 1.0, 0.0)
    t = 0.5 * (t + 1.0)
    wt = 0.25 * wt
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt)
    pts = np.column_stack([(S * (1.0 - T)).ravel(), T.ravel()])
    return pts, W.ravel()


# --------------------------------------------------------------------------
# single-entity rules


@dataclass
class QuadRule:
    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray | None = None
    exactness_degree: int = 0

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


def _empty_rule(degree, with_normals=False) -> QuadRule:
    return QuadRule(np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)) if with_normals else None, degree)


def map_triangle_rule(tri: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    ref_pts, ref_w = triangle_rule(degree)
    a, b, c = tri
    e1, e2 = b - a, c - a
    det = abs(e1[0] * e2[1] - e1[1] * e2[0])
    return a + np.outer(ref_pts[:, 0], e1) + np.outer(ref_pts[:, 1], e2), ref_w * det


def map_segment_rule(a: np.ndarray, b: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    t, w = gauss_rule(degree)
    return a + np.outer(t, b - a), w * np.linalg.norm(b - a)


def clip_negative(tri: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Polygon {linear interpolant < 0} inside the triangle (ordered vertices)."""
    out = []
    for i in range(3):
        j = (i + 1) % 3
        pi, pj, fi, fj = tri[i], tri[j], vals[i], vals[j]
        if fi < 0:
            out.append(pi)
        if (fi < 0) != (fj < 0):
            t = fi / (fi - fj)
            out.append(pi + t * (pj - pi))
    return np.array(out).reshape(-1, 2)


def triangulate_polygon(poly: np.ndarray) -> list[np.ndarray]:
    """Triangles covering a convex polygon of 3 or 4 vertices."""
    if len(poly) < 3:
        return []
    if len(poly) == 3:
        return [poly]
    if len(poly) != 4:
        raise ValueError(f"unexpected clipped polygon with {len(poly)} vertices")
    d02 = np.linalg.norm(poly[2] - poly[0])
    d13 = np.linalg.norm(poly[3] - poly[1])
    if d02 <= d13:
        return [poly[[0, 1, 2]], poly[[0, 2, 3]]]
    return [poly[[1, 2, 3]], poly[[1, 3, 0]]]


def linear_gradient(tri: np.ndarray, vals: np.ndarray) -> np.ndarray:
    jac = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
    return np.linalg.solve(jac.T, np.array([vals[1] - vals[0], vals[2] - vals[0]]))


def _vertex_values(tri: np.ndarray, phi) -> np.ndarray:
    if callable(phi):
        vals = np.asarray(phi(tri), dtype=float).copy()
    else:
        vals = np.asarray(phi, dtype=float).copy()
    h = np.linalg.norm(tri[[1, 2, 0]] - tri, axis=1).max()
    eps = GEOM_EPS * h
    vals[np.abs(vals) <= eps] = -eps
    return vals


def volume_rule(tri, phi, degree: int) -> QuadRule:
    """Quadrature on ``T ∩ Ω`` for a triangle ``tri`` (3, 2).

    ``phi`` is a level set or the three vertex values.
    """
    tri = np.asarray(tri, dtype=float)
    vals = _vertex_values(tri, phi)
    if np.all(vals < 0):
        pts, w = map_triangle_rule(tri, degree)
        return QuadRule(pts, w, None, degree)
    pieces = triangulate_polygon(clip_negative(tri, vals))
    if not pieces:
        return _empty_rule(degree)
    mapped = [map_triangle_rule(p, degree) for p in pieces]
    return QuadRule(np.vstack([m[0] for m in mapped]), np.concatenate([m[1] for m in mapped]), None, degree)


def interface_segment(tri: np.ndarray, vals: np.ndarray) -> np.ndarray | None:
    pts = []
    for i in range(3):
        j = (i + 1) % 3
        if (vals[i] < 0) != (vals[j] < 0):
            t = vals[i] / (vals[i] - vals[j])
            pts.append(tri[i] + t * (tri[j] - tri[i]))
    if len(pts) != 2:
        return None
    return np.array(pts)


def interface_rule(tri, phi, degree: int) -> QuadRule:
    """Gauss rule on the zero segment of the linear interpolant, with normals."""
    tri = np.asarray(tri, dtype=float)
    vals = _vertex_values(tri, phi)
    seg = interface_segment(tri, vals)
    h = np.linalg.norm(tri[[1, 2, 0]] - tri, axis=1).max()
    if seg is None or np.linalg.norm(seg[1] - seg[0]) < 1e-14 * h:
        return _empty_rule(degree, True)
    pts, w = map_segment_rule(seg[0], seg[1], degree)
    g = linear_gradient(tri, vals)
    n = g / np.linalg.norm(g)
    return QuadRule(pts, w, np.tile(n, (len(w), 1)), degree)


def cut_face_rule(seg, phi, degree: int) -> QuadRule:
    """Gauss rule on the part of face ``seg`` (2, 2) where the interpolant is negative."""
    seg = np.asarray(seg, dtype=float)
    vals = _vertex_values_face(seg, phi)
    a, b = seg
    fa, fb = vals
    if fa < 0 and fb < 0:
        pts, w = map_segment_rule(a, b, degree)
    elif fa >= 0 and fb >= 0:
        return _empty_rule(degree)
    else:
        t = fa / (fa - fb)
        root = a + t * (b - a)
        pts, w = map_segment_rule(a, root, degree) if fa < 0 else map_segment_rule(root, b, degree)
    return QuadRule(pts, w, None, degree)


def _vertex_values_face(seg, phi):
    vals = np.asarray(phi(seg) if callable(phi) else phi, dtype=float).copy()
    eps = GEOM_EPS * np.linalg.norm(seg[1] - seg[0])
    vals[np.abs(vals) <= eps] = -eps
    return vals


def full_face_rule(seg, degree: int) -> QuadRule:
    seg = np.asarray(seg, dtype=float)
    pts, w = map_segment_rule(seg[0], seg[1], degree)
    return QuadRule(pts, w, None, degree)


# --------------------------------------------------------------------------
# batched rules over an unfitted view


@dataclass
class PointSet:
    """Quadrature points of many entities, stored contiguously per entity.

    ``ids[e]`` is the element or face index of entity ``e`` and
    ``ptr[e]:ptr[e+1]`` its slice of points.  For faces, ``elem`` is the
    owner and ``elem2`` the neighbor.
    """

    ids: np.ndarray
    ptr: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    elem: np.ndarray
    elem2: np.ndarray | None = None
    normals: np.ndarray | None = None

    @property
    def n_entities(self) -> int:
        return len(self.ids)

    @property
    def entity(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.ids)), np.diff(self.ptr))

    def reduce(self, arr: np.ndarray) -> np.ndarray:
        """Sum per-point contributions ``arr`` (P, ...) per entity."""
        if len(self.ids) == 0:
            return np.zeros((0,) + arr.shape[1:])
        return np.add.reduceat(arr, self.ptr[:-1], axis=0)


def _pack(ids, chunks_pts, chunks_w, elem_lookup, normals=None, elem2_lookup=None) -> PointSet:
    counts = np.array([len(w) for w in chunks_w], dtype=np.int64)
    keep = counts > 0
    ids = np.asarray(ids, dtype=np.int64)[keep]
    counts = counts[keep]
    ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    if len(ids):
        pts = np.vstack([p for p, k in zip(chunks_pts, keep) if k])
        w = np.concatenate([x for x, k in zip(chunks_w, keep) if k])
    else:
        pts, w = np.zeros((0, 2)), np.zeros(0)
    rep = np.repeat(np.arange(len(ids)), counts)
    elem = elem_lookup(ids)[rep]
    elem2 = None if elem2_lookup is None else elem2_lookup(ids)[rep]
    nrm = None
    if callable(normals):
        nrm = normals(ids)[rep]
    elif normals is not None:
        nrm = np.vstack([x for x, k in zip(normals, keep) if k]) if len(ids) else np.zeros((0, 2))
    return PointSet(ids, ptr, pts, w, elem, elem2, nrm)


def _tile_rule(tris: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    ref_pts, ref_w = triangle_rule(degree)
    a = tris[:, 0]
    e1 = tris[:, 1] - a
    e2 = tris[:, 2] - a
    det = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    pts = a[:, None] + ref_pts[None, :, 0:1] * e1[:, None] + ref_pts[None, :, 1:2] * e2[:, None]
    return pts, det[:, None] * ref_w[None]


def _tile_segments(a: np.ndarray, b: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    t, w = gauss_rule(degree)
    pts = a[:, None] + t[None, :, None] * (b - a)[:, None]
    return pts, np.linalg.norm(b - a, axis=1)[:, None] * w[None]


@dataclass
class CutQuadrature:
    volume: PointSet
    interface: PointSet
    faces: PointSet
    ghost: PointSet
    degrees: tuple[int, int, int]


def build_quadrature(view: UnfittedMeshView, volume_degree: int, face_degree: int, interface_degree: int | None = None) -> CutQuadrature:
    """All rules needed by the assembly: T∩Ω, Γ∩T, F∩Ω (interior), full ghost faces."""
    if interface_degree is None:
        interface_degree = volume_degree
    mesh = view.mesh
    V, E = mesh.vertices, mesh.elements
    vals = view.vertex_values
    identity = lambda ids: ids  # noqa: E731

    # volume: inside elements tiled at once, cut elements clipped one by one
    order = view.active
    inside = order[view.tags[order] == Tag.INSIDE]
    ipts, iw = _tile_rule(V[E[inside]], volume_degree)
    pts_list: dict[int, np.ndarray] = {}
    w_list: dict[int, np.ndarray] = {}
    for e, p, w in zip(inside, ipts, iw):
        pts_list[e] = p
        w_list[e] = w
    ipts_if, iw_if, in_if, ids_if = [], [], [], []
    for e in view.cut:
        tri = V[E[e]]
        ve = vals[E[e]]
        pieces = triangulate_polygon(clip_negative(tri, ve))
        mapped = [map_triangle_rule(p, volume_degree) for p in pieces]
        pts_list[e] = np.vstack([m[0] for m in mapped])
        w_list[e] = np.concatenate([m[1] for m in mapped])
        seg = interface_segment(tri, ve)
        if seg is not None and np.linalg.norm(seg[1] - seg[0]) >= 1e-14 * mesh.h_T[e]:
            p, w = map_segment_rule(seg[0], seg[1], interface_degree)
            g = linear_gradient(tri, ve)
            ids_if.append(e)
            ipts_if.append(p)
            iw_if.append(w)
            in_if.append(np.tile(g / np.linalg.norm(g), (len(w), 1)))
    volume = _pack(order, [pts_list[e] for e in order], [w_list[e] for e in order], identity)
    interface = _pack(ids_if, ipts_if, iw_if, identity, normals=in_if)

    owner = lambda f: mesh.face_elements[f, 0]  # noqa: E731
    neighbor = lambda f: mesh.face_elements[f, 1]  # noqa: E731

    # interior faces restricted to Ω
    fi = view.interior_faces
    fv = vals[mesh.faces[fi]]
    full = np.all(fv < 0, axis=1)
    part = np.any(fv < 0, axis=1) & ~full
    seg = V[mesh.faces[fi]]
    a = seg[:, 0].copy()
    b = seg[:, 1].copy()
    fa, fb = fv[part, 0], fv[part, 1]
    t = fa / (fa - fb)
    root = a[part] + t[:, None] * (b[part] - a[part])
    a_neg = fa < 0
    pa, pb = a[part], b[part]
    pb[a_neg] = root[a_neg]
    pa[~a_neg] = root[~a_neg]
    a[part], b[part] = pa, pb
    use = full | part
    fpts, fw = _tile_segments(a[use], b[use], face_degree)
    face_normal = lambda f: mesh.face_normals[f]  # noqa: E731
    faces = _pack(fi[use], list(fpts), list(fw), owner, face_normal, neighbor)

    gf = view.ghost_faces
    gseg = V[mesh.faces[gf]]
    gpts, gw = _tile_segments(gseg[:, 0], gseg[:, 1], face_degree)
    ghost = _pack(gf, list(gpts), list(gw), owner, face_normal, neighbor)
    return CutQuadrature(volume, interface, faces, ghost, (volume_degree, face_degree, interface_degree))
