"""Newest-vertex bisection with conforming closure, and the size-driven
fallback refiner used when no external mesh generator is available."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh, MeshError, VertexField

_CLOSURE_CAP = 200


@dataclass
class Refinement:
    """Ancestry of one refinement pass.

    midpoints maps each new vertex index to the (a, b) coarse-edge endpoints
    whose midpoint it is; children maps refined parents to their two children
    in the output element numbering.
    """

    midpoints: dict = field(default_factory=dict)
    children: dict = field(default_factory=dict)


class _Bisector:
    """Working state for one refinement pass.

    Triangles are stored as (peak, a, b) with refinement edge (a, b); the
    peak of each child is the newly inserted midpoint.
    """

    def __init__(self, mesh: Mesh):
        self.vertices = [tuple(v) for v in mesh.vertices]
        self.tris = {}
        self.edge2tris = {}
        self.alive = {}
        self.origin = {}  # working id -> root parent element index
        avg = mesh.vertices[mesh.elements]
        for k, tri in enumerate(mesh.elements):
            p = avg[k]
            lengths = [
                np.linalg.norm(p[2] - p[1]),  # edge opposite local 0
                np.linalg.norm(p[0] - p[2]),
                np.linalg.norm(p[1] - p[0]),
            ]
            peak = int(np.argmax(lengths))  # longest edge is the refinement edge
            order = [peak, (peak + 1) % 3, (peak + 2) % 3]
            self._add_tri(k, tuple(int(tri[i]) for i in order), root=k)
        self.next_id = len(mesh.elements)
        self.midpoint_of = {}
        self.record = Refinement()

    def _add_tri(self, tid, tri, root):
        self.tris[tid] = tri
        self.alive[tid] = True
        self.origin[tid] = root
        for e in self._edges(tri):
            self.edge2tris.setdefault(e, set()).add(tid)

    def _remove_tri(self, tid):
        self.alive[tid] = False
        for e in self._edges(self.tris[tid]):
            self.edge2tris[e].discard(tid)

    @staticmethod
    def _edges(tri):
        p, a, b = tri
        return (
            (min(p, a), max(p, a)),
            (min(a, b), max(a, b)),
            (min(b, p), max(b, p)),
        )

    def _midpoint(self, a, b):
        key = (min(a, b), max(a, b))
        m = self.midpoint_of.get(key)
        if m is None:
            pa, pb = self.vertices[a], self.vertices[b]
            self.vertices.append(((pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0))
            m = len(self.vertices) - 1
            self.midpoint_of[key] = m
            self.record.midpoints[m] = key
        return m

    def bisect(self, tid, depth=0):
        """Bisect triangle tid across its refinement edge, with closure."""
        if depth > _CLOSURE_CAP:
            raise MeshError("conforming-closure recursion cap exceeded")
        if not self.alive[tid]:
            return
        p, a, b = self.tris[tid]
        ref_edge = (min(a, b), max(a, b))
        neighbor = next((t for t in self.edge2tris[ref_edge] if t != tid), None)
        if neighbor is not None:
            np_, na, nb = self.tris[neighbor]
            if (min(na, nb), max(na, nb)) != ref_edge:
                self.bisect(neighbor, depth + 1)
                neighbor = next((t for t in self.edge2tris[ref_edge] if t != tid), None)
        m = self._midpoint(a, b)
        self._split(tid, m)
        if neighbor is not None and self.alive.get(neighbor, False):
            self._split(neighbor, m)

    def _split(self, tid, m):
        p, a, b = self.tris[tid]
        self._remove_tri(tid)
        root = self.origin[tid]
        c1, c2 = self.next_id, self.next_id + 1
        self.next_id += 2
        self._add_tri(c1, (m, p, a), root)
        self._add_tri(c2, (m, b, p), root)

    def finish(self, mesh: Mesh):
        ids = sorted(t for t, ok in self.alive.items() if ok)
        elems = np.array([self.tris[t] for t in ids], dtype=np.int64)
        verts = np.asarray(self.vertices, dtype=float)
        new = Mesh(verts, elems, mesh.domain)
        pos = {t: i for i, t in enumerate(ids)}
        for t in ids:
            root = self.origin[t]
            if t >= mesh.num_elements or self.origin[t] != t:
                self.record.children.setdefault(root, []).append(pos[t])
        return new, self.record


def bisect_refine(mesh: Mesh, marked) -> tuple[Mesh, Refinement]:
    """Newest-vertex bisection of the marked elements with conforming closure."""
    marked = set(int(k) for k in marked)
    if not marked:
        return mesh, Refinement()
    if marked and (min(marked) < 0 or max(marked) >= mesh.num_elements):
        raise IndexError("marked element index out of range")
    bis = _Bisector(mesh)
    for k in sorted(marked):
        bis.bisect(k)
    return bis.finish(mesh)


def nested_interpolate(u_coarse, fine: Mesh, ancestry: Refinement):
    """Prolong nodal values from a coarse mesh onto its bisection refinement.

    New vertices are edge midpoints and get the mean of the parent edge's
    endpoint values; exact for the coarse P1 function.
    """
    from .fem import FeFunction

    coarse_vals = np.asarray(u_coarse.nodal_values, dtype=float)
    values = np.empty(fine.num_vertices)
    values[: len(coarse_vals)] = coarse_vals
    # Midpoints may chain (midpoint of an edge with a midpoint endpoint),
    # so fill in index order: parents always precede their midpoints.
    for m in sorted(ancestry.midpoints):
        a, b = ancestry.midpoints[m]
        if m >= fine.num_vertices:
            raise MeshError("ancestry does not match the fine mesh")
        values[m] = 0.5 * (values[a] + values[b])
    return FeFunction(fine, values)


def grade_size_field(size: VertexField, ratio: float = 1.0) -> VertexField:
    """Lipschitz-limit a vertex size field along mesh edges.

    Enforces size(v) <= size(u) + ratio * |v - u| for every edge (u, v) by
    Dijkstra relaxation, mimicking the size gradation smoothing a mesh
    generator applies so that small targets transition gradually instead of
    abutting coarse regions.
    """
    import heapq

    if ratio <= 0.0:
        raise ValueError("gradation ratio must be positive")
    mesh = size.mesh
    vals = np.array(size.values, dtype=float)
    edges = np.vstack([mesh.elements[:, [0, 1]], mesh.elements[:, [1, 2]],
                       mesh.elements[:, [2, 0]]])
    lengths = np.linalg.norm(
        mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]], axis=1
    )
    adj = [[] for _ in range(mesh.num_vertices)]
    for (a, b), ell in zip(edges, lengths):
        adj[a].append((int(b), ratio * ell))
        adj[b].append((int(a), ratio * ell))
    heap = [(s, i) for i, s in enumerate(vals)]
    heapq.heapify(heap)
    while heap:
        s, i = heapq.heappop(heap)
        if s > vals[i]:
            continue
        for j, cost in adj[i]:
            cand = s + cost
            if cand < vals[j]:
                vals[j] = cand
                heapq.heappush(heap, (cand, j))
    return VertexField(mesh, vals)


def fallback_refine(mesh: Mesh, size: VertexField, max_sweeps: int = 20,
                    max_vertices: int | None = None):
    """Refine until every element's mean edge meets the vertex size field.

    Bisects the longest edge (with conforming closure) of any element whose
    average edge exceeds the field interpolated at its centroid; midpoint
    vertices inherit the average of their parent edge's target sizes. Stops
    early (reported, not fatal) at the sweep cap or the vertex budget —
    the budget plays the role of the gradation limiting a real generator
    applies to steep size-field requests. Returns
    (mesh, remaining_violations).
    """
    vals = np.asarray(size.values, dtype=float)
    if np.any(vals <= 0.0):
        raise MeshError("size field must be strictly positive")
    current = mesh
    for _ in range(max_sweeps):
        target = vals[current.elements].mean(axis=1)  # P1 field at centroids
        bad = np.nonzero(current.element_avg_edges() > target)[0]
        if len(bad) == 0:
            return current, 0
        if max_vertices is not None:
            room = max_vertices - current.num_vertices
            if room <= 0:
                break
            if len(bad) > room:
                # Spend what is left breadth-first: elements closest to their
                # target refine first, so every violating region gets its
                # shallow halvings before deep deficits soak up the budget.
                ratio = current.element_avg_edges()[bad] / target[bad]
                bad = bad[np.argsort(ratio)[:room]]
        current, rec = bisect_refine(current, set(int(k) for k in bad))
        grown = np.empty(current.num_vertices)
        grown[: len(vals)] = vals
        for m in sorted(rec.midpoints):
            a, b = rec.midpoints[m]
            grown[m] = 0.5 * (grown[a] + grown[b])
        vals = grown
    target = vals[current.elements].mean(axis=1)
    remaining = int(np.count_nonzero(current.element_avg_edges() > target))
    return current, remaining
