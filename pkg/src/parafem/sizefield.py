"""Vertex-density mesh size field generation (node averages, density,
marked-set selection, scale factors)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import ElementField, Mesh, MeshError, VertexField, node_to_cell

SIZE_FLOOR_FRACTION = 1e-6  # floor clamp relative to the domain diameter


@dataclass
class SizeFieldInput:
    estimators: ElementField
    avg_edges: ElementField
    ite_ro: int
    dim: int = 2
    theta_r: float = 0.5

    def __post_init__(self):
        if self.ite_ro < 1:
            raise ValueError("ite_ro must be a positive integer")
        if self.dim not in (2, 3):
            raise ValueError("dimension must be 2 or 3")
        if not 0.0 < self.theta_r <= 1.0:
            raise ValueError("theta_r must lie in (0, 1]")
        if np.any(self.estimators.values < 0.0):
            raise ValueError("estimators must be non-negative")
        if np.any(self.avg_edges.values <= 0.0):
            raise ValueError("edge sizes must be positive")


def vertex_averages(mesh: Mesh, element_field: ElementField) -> VertexField:
    """Average of the element values over the elements containing each vertex."""
    n2c = node_to_cell(mesh)
    counts = n2c @ np.ones(mesh.num_elements)
    if np.any(counts == 0.0):
        raise MeshError("isolated vertex with no incident element")
    return VertexField(mesh, (n2c @ element_field.values) / counts)


def node_density(h_v: VertexField, e_v: VertexField, dim: int) -> VertexField:
    """Density rho_i = E_i^2 / h_i^d."""
    h = h_v.values
    if np.any(h <= 0.0):
        raise ValueError("vertex sizes must be positive")
    return VertexField(h_v.mesh, e_v.values ** 2 / h ** dim)


def select_marked(rho: VertexField, theta_r: float) -> list[int]:
    """Smallest vertex set whose density sum reaches theta_r of the total.

    Vertices are taken in descending density order with ties broken by
    ascending index; a flat zero density yields the empty set.
    """
    if not 0.0 < theta_r <= 1.0:
        raise ValueError("theta_r must lie in (0, 1]")
    vals = rho.values
    total = vals.sum()
    if total <= 0.0:
        return []
    order = np.lexsort((np.arange(len(vals)), -vals))
    cum = np.cumsum(vals[order])
    threshold = theta_r * total
    # tolerate roundoff at exact-threshold boundaries
    k = int(np.searchsorted(cum, threshold - 1e-12 * total))
    k = min(k, len(vals) - 1)
    marked = order[: k + 1]
    return [int(i) for i in marked if vals[i] > 0.0]


def scale_factors(marked, num_vertices: int, dim: int, mesh: Mesh) -> VertexField:
    """Per-vertex shrink factor: (N_v/k + 1)^(-1/d) on the marked set, else 1."""
    scale = np.ones(num_vertices)
    k = len(marked)
    if k > 0:
        scale[np.asarray(marked, dtype=int)] = (num_vertices / k + 1.0) ** (-1.0 / dim)
    return VertexField(mesh, scale)


def size_field(inp: SizeFieldInput, mesh: Mesh) -> VertexField:
    """Target vertex size field: h_v scaled by the marked shrink factors
    raised to the ite_ro power, floor-clamped against the domain diameter."""
    h_v = vertex_averages(mesh, inp.avg_edges)
    e_v = vertex_averages(mesh, inp.estimators)
    rho = node_density(h_v, e_v, inp.dim)
    marked = select_marked(rho, inp.theta_r)
    scale = scale_factors(marked, mesh.num_vertices, inp.dim, mesh)
    size = h_v.values * scale.values ** inp.ite_ro
    floor = SIZE_FLOOR_FRACTION * mesh.domain.diameter
    return VertexField(mesh, np.maximum(size, floor))
