"""Triangle meshes, polygonal domains, and per-entity scalar fields."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import sparse


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


class MeshError(Exception):
    pass


@dataclass(frozen=True)
class PolygonDomain:
    """Simple polygon given by its boundary polyline (counter-clockwise)."""

    boundary: np.ndarray  # (n, 2)

    def __post_init__(self):
        pts = np.asarray(self.boundary, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
            raise MeshError("boundary must be an (n, 2) array with n >= 3")
        object.__setattr__(self, "boundary", pts)
        if len(np.unique(pts.round(14), axis=0)) != len(pts):
            raise MeshError("boundary vertices must be distinct")
        if _signed_polygon_area(pts) <= 0.0:
            raise MeshError("boundary must be counter-clockwise")
        if _self_intersects(pts):
            raise MeshError("boundary polygon self-intersects")

    @property
    def diameter(self) -> float:
        pts = self.boundary
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        return float(np.hypot(*(hi - lo)))

    def distance(self, points) -> np.ndarray:
        """Min distance from each point to the boundary polyline.

        Defined for all points in the plane; 0 exactly on the boundary.
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        a = self.boundary
        b = np.roll(a, -1, axis=0)
        ab = b - a  # (m, 2)
        ap = p[:, None, :] - a[None, :, :]  # (n, m, 2)
        denom = np.einsum("mi,mi->m", ab, ab)
        t = np.einsum("nmi,mi->nm", ap, ab) / denom
        t = np.clip(t, 0.0, 1.0)
        closest = a[None, :, :] + t[:, :, None] * ab[None, :, :]
        d = np.linalg.norm(p[:, None, :] - closest, axis=2)
        out = d.min(axis=1)
        return out if np.asarray(points).ndim == 2 else out[0]


def boundary_distance(domain: PolygonDomain, x) -> float | np.ndarray:
    return domain.distance(x)


def unit_square(lo: float = 0.0, hi: float = 1.0) -> PolygonDomain:
    return PolygonDomain(np.array([[lo, lo], [hi, lo], [hi, hi], [lo, hi]], dtype=float))


@dataclass
class Mesh:
    """Conforming triangulation: vertex coordinates and CCW element triples."""

    vertices: np.ndarray  # (nv, 2)
    elements: np.ndarray  # (ne, 3) int
    domain: PolygonDomain
    boundary_vertices: frozenset = field(default=None)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        if self.elements.ndim != 2 or self.elements.shape[1] != 3:
            raise MeshError("elements must be (ne, 3)")
        if self.elements.size and (
            self.elements.min() < 0 or self.elements.max() >= len(self.vertices)
        ):
            raise MeshError("element vertex index out of range")
        self._orient_ccw()
        if self.boundary_vertices is None:
            self.boundary_vertices = frozenset(int(v) for v in self.boundary_edges().ravel())
        else:
            self.boundary_vertices = frozenset(int(v) for v in self.boundary_vertices)

    def _orient_ccw(self):
        p = self.vertices[self.elements]
        cross = _cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        if np.any(cross == 0.0):
            raise MeshError("degenerate (zero-area) element")
        flip = cross < 0.0
        if np.any(flip):
            self.elements = self.elements.copy()
            self.elements[flip] = self.elements[flip][:, [0, 2, 1]]

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_elements(self) -> int:
        return len(self.elements)

    def element_areas(self) -> np.ndarray:
        p = self.vertices[self.elements]
        return 0.5 * _cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    def element_centroids(self) -> np.ndarray:
        return self.vertices[self.elements].mean(axis=1)

    def element_avg_edges(self) -> np.ndarray:
        p = self.vertices[self.elements]
        e0 = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
        e1 = np.linalg.norm(p[:, 2] - p[:, 1], axis=1)
        e2 = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
        return (e0 + e1 + e2) / 3.0

    def edges(self) -> np.ndarray:
        """All element edges as sorted vertex pairs, one row per (element, local edge)."""
        t = self.elements
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.sort(e, axis=1)

    def boundary_edges(self) -> np.ndarray:
        e, counts = np.unique(self.edges(), axis=0, return_counts=True)
        return e[counts == 1]

    def interior_mask(self) -> np.ndarray:
        mask = np.ones(self.num_vertices, dtype=bool)
        mask[list(self.boundary_vertices)] = False
        return mask


@dataclass
class ElementField:
    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.num_elements,):
            raise MeshError("element field length mismatch")
        if not np.all(np.isfinite(self.values)):
            raise MeshError("element field has non-finite values")


@dataclass
class VertexField:
    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.num_vertices,):
            raise MeshError("vertex field length mismatch")
        if not np.all(np.isfinite(self.values)):
            raise MeshError("vertex field has non-finite values")


class ElementGeometry(NamedTuple):
    area: float
    centroid: np.ndarray
    avg_edge: float


def element_geometry(mesh: Mesh, k: int) -> ElementGeometry:
    """Area, centroid and mean edge length of element k."""
    if not 0 <= k < mesh.num_elements:
        raise IndexError(f"element index {k} out of range")
    p = mesh.vertices[mesh.elements[k]]
    area = 0.5 * float(_cross2(p[1] - p[0], p[2] - p[0]))
    if area <= 0.0:
        raise MeshError("degenerate element")
    centroid = p.mean(axis=0)
    avg_edge = (
        np.linalg.norm(p[1] - p[0]) + np.linalg.norm(p[2] - p[1]) + np.linalg.norm(p[0] - p[2])
    ) / 3.0
    return ElementGeometry(area, centroid, float(avg_edge))


def node_to_cell(mesh: Mesh) -> sparse.csr_matrix:
    """0/1 incidence matrix (num_vertices x num_elements)."""
    ne = mesh.num_elements
    rows = mesh.elements.ravel()
    cols = np.repeat(np.arange(ne), 3)
    data = np.ones(3 * ne)
    return sparse.csr_matrix((data, (rows, cols)), shape=(mesh.num_vertices, ne))


def check_mesh(mesh: Mesh) -> None:
    """Raise MeshError on any violated mesh invariant."""
    if mesh.num_elements == 0:
        raise MeshError("empty mesh")
    areas = mesh.element_areas()
    if np.any(areas <= 0.0):
        raise MeshError("non-positive element area")
    t = np.sort(mesh.elements, axis=1)
    if np.any(t[:, 0] == t[:, 1]) or np.any(t[:, 1] == t[:, 2]):
        raise MeshError("duplicate vertex within an element")
    e, counts = np.unique(mesh.edges(), axis=0, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("edge shared by more than two elements")
    # hanging nodes: a vertex lying strictly inside some other element's edge
    _check_no_hanging_nodes(mesh, e)
    bd = set(int(v) for v in e[counts == 1].ravel())
    if not bd <= mesh.boundary_vertices:
        raise MeshError("boundary edge endpoint missing from boundary_vertices")


def _check_no_hanging_nodes(mesh: Mesh, edges: np.ndarray) -> None:
    # A conforming mesh has V - E + F = 1 for a simply connected planar
    # triangulation (F counts triangles only). Hanging nodes break the count.
    v = mesh.num_vertices
    f = mesh.num_elements
    if v - len(edges) + f != 1:
        raise MeshError("mesh is not a conforming simply-connected triangulation")


def fan_triangulation(domain: PolygonDomain) -> Mesh:
    """Fan triangulation of a convex polygon from its first vertex."""
    n = len(domain.boundary)
    elems = [[0, i, i + 1] for i in range(1, n - 1)]
    return Mesh(domain.boundary.copy(), np.array(elems), domain)


def _is_axis_rectangle(domain: PolygonDomain) -> bool:
    b = domain.boundary
    if len(b) != 4:
        return False
    xs, ys = np.unique(b[:, 0]), np.unique(b[:, 1])
    return len(xs) == 2 and len(ys) == 2


def structured_rectangle_mesh(domain: PolygonDomain, nx: int, ny: int) -> Mesh:
    """Uniform triangulation of an axis-aligned rectangle, nx x ny cells."""
    b = domain.boundary
    x0, x1 = b[:, 0].min(), b[:, 0].max()
    y0, y1 = b[:, 1].min(), b[:, 1].max()
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    elems = []
    for j in range(ny):
        for i in range(nx):
            v00 = j * (nx + 1) + i
            v10 = v00 + 1
            v01 = v00 + (nx + 1)
            v11 = v01 + 1
            elems.append([v00, v10, v11])
            elems.append([v00, v11, v01])
    return Mesh(verts, np.array(elems), domain)


def uniform_mesh(domain: PolygonDomain, h: float) -> Mesh:
    """Quasi-uniform mesh with target element size about h.

    Axis-aligned rectangles get a structured grid; other polygons a fan
    triangulation refined globally until every element meets the target.
    """
    from .refine import bisect_refine  # local import to avoid a cycle

    if h <= 0.0:
        raise MeshError("target size must be positive")
    if _is_axis_rectangle(domain):
        b = domain.boundary
        w = b[:, 0].max() - b[:, 0].min()
        ht = b[:, 1].max() - b[:, 1].min()
        nx = max(1, int(np.ceil(w / h)))
        ny = max(1, int(np.ceil(ht / h)))
        return structured_rectangle_mesh(domain, nx, ny)
    mesh = fan_triangulation(domain)
    for _ in range(40):
        bad = np.nonzero(mesh.element_avg_edges() > h)[0]
        if len(bad) == 0:
            break
        mesh, _ = bisect_refine(mesh, set(int(k) for k in bad))
    return mesh


def _signed_polygon_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _self_intersects(pts: np.ndarray) -> bool:
    n = len(pts)
    segs = [(pts[i], pts[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue  # adjacent segments share an endpoint
            if _segments_cross(*segs[i], *segs[j]):
                return True
    return False


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return _cross2(b - a, c - a)

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)
