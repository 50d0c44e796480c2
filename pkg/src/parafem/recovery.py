"""Weighted-average gradient recovery and the recovery-based estimators,
including the two-time-level combined estimator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import FeFunction, QUAD_MIDPOINT
from .mesh import ElementField, Mesh, MeshError, node_to_cell


@dataclass
class RecoveredGradient:
    """Vector-valued P1 field: nodal recovered gradient components."""

    mesh: Mesh
    gx: np.ndarray
    gy: np.ndarray


def recover_gradient(u_h: FeFunction) -> RecoveredGradient:
    """Inverse-area weighted average of element gradients over each patch.

    At a vertex z the weight of element K is (1/|K|) / sum over the patch of
    (1/|K_j|); weights sum to 1 by construction.
    """
    mesh = u_h.mesh
    grads = u_h.element_gradients()
    inv_area = 1.0 / mesh.element_areas()
    n2c = node_to_cell(mesh)
    denom = n2c @ inv_area
    gx = (n2c @ (inv_area * grads[:, 0])) / denom
    gy = (n2c @ (inv_area * grads[:, 1])) / denom
    return RecoveredGradient(mesh, gx, gy)


def estimate(u_h: FeFunction) -> tuple[ElementField, float]:
    """Elementwise L2 norms of recovered minus raw gradient, and their
    root-sum-square global value.

    The integrand is quadratic (P1 vector minus a constant, squared), so the
    edge-midpoint rule integrates it exactly.
    """
    mesh = u_h.mesh
    rec = recover_gradient(u_h)
    gh = u_h.element_gradients()  # (ne, 2)
    nod = np.stack([rec.gx, rec.gy], axis=1)[mesh.elements]  # (ne, 3, 2)
    basis = QUAD_MIDPOINT.points  # (3, 3)
    at_q = np.einsum("qb,nbd->nqd", basis, nod)  # recovered gradient at midpoints
    diff = at_q - gh[:, None, :]
    areas = mesh.element_areas()
    local_sq = np.einsum("q,nq->n", QUAD_MIDPOINT.weights, (diff ** 2).sum(axis=2)) * areas
    local = np.sqrt(local_sq)
    return ElementField(mesh, local), float(np.sqrt(local_sq.sum()))


def combine_estimators(current: ElementField, previous: ElementField):
    """Two-level combination (a + b + |a - b|) / 2, elementwise."""
    if current.mesh is not previous.mesh:
        raise MeshError("combined estimator requires fields on the same mesh")
    a, b = current.values, previous.values
    # (a + b + |a - b|) / 2 is the elementwise maximum; computing it as such
    # avoids the roundoff the literal expression picks up when a + b rounds
    local = np.maximum(a, b)
    return ElementField(current.mesh, local), float(np.sqrt((local ** 2).sum()))


def previous_estimator_on_current_mesh(surrogate, mesh: Mesh) -> ElementField:
    """Nodal interpolant of a point-evaluable surrogate on `mesh`, run
    through the recovery estimator; returns the local field."""
    values = np.asarray(surrogate(mesh.vertices), dtype=float)
    local, _ = estimate(FeFunction(mesh, values))
    return local
