"""P1 finite element machinery: assembly, projection, backward Euler steps,
a sparse SPD solver, and error integration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .mesh import Mesh, MeshError


class SolverError(Exception):
    pass


@dataclass
class ParabolicProblem:
    """u_t - div(a grad u) = f with Dirichlet data g and initial value u0.

    f and g take ((m, 2) points, t); u0 takes points; a takes points or is
    None for the unit coefficient. exact/exact_gradient are optional and
    only used for benchmarking.
    """

    domain: "object"
    u0: "object"
    f: "object"
    g: "object" = None
    a: "object" = None
    t_end: float = 1.0
    exact: "object" = None
    exact_gradient: "object" = None

    def check_coefficient_bounds(self, points, lam_min=1e-12, lam_max=1e12) -> bool:
        if self.a is None:
            return True
        vals = np.asarray(self.a(np.atleast_2d(points)), dtype=float)
        return bool(np.all(vals >= lam_min) and np.all(vals <= lam_max))


@dataclass
class FeFunction:
    """Nodal-valued P1 field on a fixed mesh."""

    mesh: Mesh
    nodal_values: np.ndarray

    def __post_init__(self):
        self.nodal_values = np.asarray(self.nodal_values, dtype=float)
        if self.nodal_values.shape != (self.mesh.num_vertices,):
            raise MeshError("nodal value length mismatch")
        if not np.all(np.isfinite(self.nodal_values)):
            raise MeshError("non-finite nodal values")

    def element_gradients(self) -> np.ndarray:
        """Constant per-element gradient, shape (ne, 2)."""
        gx, gy = _basis_gradients(self.mesh)
        vals = self.nodal_values[self.mesh.elements]
        return np.stack([(gx * vals).sum(axis=1), (gy * vals).sum(axis=1)], axis=1)


@dataclass
class QuadratureRule:
    """Barycentric points and weights on the reference triangle.

    Weights sum to 1; integrals are weight-scaled by element area.
    """

    points: np.ndarray  # (nq, 3) barycentric
    weights: np.ndarray  # (nq,)
    degree: int


# 6-point order-4 Dunavant rule; exact for polynomials of degree <= 4.
_A1, _W1 = 0.445948490915965, 0.223381589678011
_A2, _W2 = 0.091576213509771, 0.109951743655322
QUAD_ORDER4 = QuadratureRule(
    points=np.array(
        [
            [1 - 2 * _A1, _A1, _A1],
            [_A1, 1 - 2 * _A1, _A1],
            [_A1, _A1, 1 - 2 * _A1],
            [1 - 2 * _A2, _A2, _A2],
            [_A2, 1 - 2 * _A2, _A2],
            [_A2, _A2, 1 - 2 * _A2],
        ]
    ),
    weights=np.array([_W1, _W1, _W1, _W2, _W2, _W2]),
    degree=4,
)

# Edge-midpoint rule; exact for quadratics.
QUAD_MIDPOINT = QuadratureRule(
    points=np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]),
    weights=np.array([1.0, 1.0, 1.0]) / 3.0,
    degree=2,
)


def _basis_gradients(mesh: Mesh):
    """Gradients of the three P1 basis functions per element."""
    p = mesh.vertices[mesh.elements]  # (ne, 3, 2)
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    area2 = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]  # 2*area
    gx = np.stack(
        [
            p[:, 1, 1] - p[:, 2, 1],
            p[:, 2, 1] - p[:, 0, 1],
            p[:, 0, 1] - p[:, 1, 1],
        ],
        axis=1,
    ) / area2[:, None]
    gy = np.stack(
        [
            p[:, 2, 0] - p[:, 1, 0],
            p[:, 0, 0] - p[:, 2, 0],
            p[:, 1, 0] - p[:, 0, 0],
        ],
        axis=1,
    ) / area2[:, None]
    return gx, gy


def assemble_mass(mesh: Mesh) -> sparse.csr_matrix:
    """Consistent P1 mass matrix: local blocks (area/12)[[2,1,1],[1,2,1],[1,1,2]]."""
    areas = mesh.element_areas()
    if np.any(areas <= 0.0):
        raise MeshError("degenerate element")
    local = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    blocks = areas[:, None, None] * local[None, :, :]
    return _scatter(mesh, blocks)


def assemble_stiffness(mesh: Mesh, a=None) -> sparse.csr_matrix:
    """Stiffness matrix with scalar coefficient a sampled at centroids."""
    areas = mesh.element_areas()
    if a is None:
        coeff = np.ones(mesh.num_elements)
    else:
        c = mesh.element_centroids()
        coeff = np.asarray(a(c), dtype=float) * np.ones(mesh.num_elements)
        if np.any(coeff <= 0.0):
            raise MeshError("coefficient must be positive at element centroids")
    gx, gy = _basis_gradients(mesh)
    blocks = (coeff * areas)[:, None, None] * (
        gx[:, :, None] * gx[:, None, :] + gy[:, :, None] * gy[:, None, :]
    )
    return _scatter(mesh, blocks)


def _scatter(mesh: Mesh, blocks: np.ndarray) -> sparse.csr_matrix:
    t = mesh.elements
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.num_vertices
    return sparse.csr_matrix((blocks.ravel(), (rows, cols)), shape=(n, n))


def quadrature_points(mesh: Mesh, rule: QuadratureRule = QUAD_ORDER4):
    """Physical quadrature points (ne, nq, 2) plus basis values (nq, 3)."""
    p = mesh.vertices[mesh.elements]  # (ne, 3, 2)
    pts = np.einsum("qb,nbd->nqd", rule.points, p)
    return pts, rule.points


def assemble_load(mesh: Mesh, func, rule: QuadratureRule = QUAD_ORDER4) -> np.ndarray:
    """Load vector b_i = integral of func * phi_i via the given rule.

    func takes an (m, 2) array of points and returns m values.
    """
    areas = mesh.element_areas()
    pts, basis = quadrature_points(mesh, rule)
    vals = np.asarray(func(pts.reshape(-1, 2)), dtype=float).reshape(pts.shape[:2])
    if not np.all(np.isfinite(vals)):
        raise SolverError("load integrand evaluated to non-finite values")
    contrib = np.einsum("q,nq,qb->nb", rule.weights, vals, basis) * areas[:, None]
    b = np.zeros(mesh.num_vertices)
    np.add.at(b, mesh.elements.ravel(), contrib.ravel())
    return b


def _as_point_evaluator(previous, mesh: Mesh):
    """Wrap `previous` (FeFunction or callable on points) into a callable."""
    if isinstance(previous, FeFunction):
        if previous.mesh is not mesh:
            raise MeshError("same-mesh FeFunction required; pass a callable otherwise")
        return None  # handled exactly via the mass matrix
    if callable(previous):
        return previous
    raise TypeError("previous must be an FeFunction or a point-evaluable callable")


def solve_spd(system: sparse.csr_matrix, rhs: np.ndarray, kind: str = "cg",
              tol: float = 1e-10) -> np.ndarray:
    """Solve an SPD sparse system by preconditioned CG or sparse LU."""
    rhs = np.asarray(rhs, dtype=float)
    n = system.shape[0]
    if kind == "direct":
        return spla.splu(system.tocsc()).solve(rhs)
    if kind != "cg":
        raise ValueError(f"unknown solver kind {kind!r}")
    diag = system.diagonal()
    if np.any(diag <= 0.0):
        raise SolverError("non-positive diagonal; system is not SPD")
    precond = spla.LinearOperator((n, n), matvec=lambda v: v / diag)
    x, info = spla.cg(system, rhs, rtol=tol, atol=0.0, maxiter=10 * n, M=precond)
    if info != 0:
        raise SolverError(f"CG failed to converge (info={info})")
    return x


def l2_project(mesh: Mesh, w, solver_kind: str = "cg", tol: float = 1e-12) -> FeFunction:
    """L2 projection of a point-evaluable function onto the P1 space."""
    M = assemble_mass(mesh)
    b = assemble_load(mesh, w)
    return FeFunction(mesh, solve_spd(M, b, kind=solver_kind, tol=tol))


def backward_euler_step(
    mesh: Mesh,
    tau: float,
    f,
    previous,
    g=None,
    a=None,
    solver_kind: str = "cg",
    solver_tol: float = 1e-10,
) -> FeFunction:
    """One implicit Euler step: (M + tau*A) u = tau*F + B, Dirichlet-lifted.

    f and g are functions of (m, 2) point arrays at the current time level;
    `previous` is a same-mesh FeFunction or any point-evaluable callable.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    M = assemble_mass(mesh)
    A = assemble_stiffness(mesh, a)
    K = (M + tau * A).tocsr()
    F = assemble_load(mesh, f)
    prev_eval = _as_point_evaluator(previous, mesh)
    if prev_eval is None:
        B = M @ previous.nodal_values
    else:
        B = assemble_load(mesh, prev_eval)
    rhs = tau * F + B

    bd = np.array(sorted(mesh.boundary_vertices), dtype=np.int64)
    u_bd = np.zeros(len(bd)) if g is None else np.asarray(
        g(mesh.vertices[bd]), dtype=float
    ) * np.ones(len(bd))
    interior = mesh.interior_mask()
    rhs = rhs - K[:, bd] @ u_bd
    K_ii = K[interior][:, interior]
    u = np.zeros(mesh.num_vertices)
    u[bd] = u_bd
    u[interior] = solve_spd(K_ii, rhs[interior], kind=solver_kind, tol=solver_tol)
    return FeFunction(mesh, u)


def integrate_l2_error(mesh: Mesh, u_h: FeFunction, exact,
                       rule: QuadratureRule = QUAD_ORDER4) -> float:
    """L2 norm of u_h - exact with the given quadrature."""
    areas = mesh.element_areas()
    pts, basis = quadrature_points(mesh, rule)
    uh_vals = np.einsum("qb,nb->nq", basis, u_h.nodal_values[mesh.elements])
    ex = np.asarray(exact(pts.reshape(-1, 2)), dtype=float).reshape(pts.shape[:2])
    sq = np.einsum("q,nq->n", rule.weights, (uh_vals - ex) ** 2) * areas
    return float(np.sqrt(sq.sum()))


def integrate_gradient_error(mesh: Mesh, u_h: FeFunction, grad_exact,
                             rule: QuadratureRule = QUAD_ORDER4) -> float:
    """H1-seminorm error: grad_exact takes points and returns (m, 2) vectors."""
    areas = mesh.element_areas()
    pts, _ = quadrature_points(mesh, rule)
    gh = u_h.element_gradients()  # (ne, 2)
    ge = np.asarray(grad_exact(pts.reshape(-1, 2)), dtype=float).reshape(
        pts.shape[0], pts.shape[1], 2
    )
    diff = ge - gh[:, None, :]
    sq = np.einsum("q,nq->n", rule.weights, (diff ** 2).sum(axis=2)) * areas
    return float(np.sqrt(sq.sum()))
