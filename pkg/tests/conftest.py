import numpy as np
import pytest

from parafem.mesh import Mesh, PolygonDomain, unit_square


@pytest.fixture
def square_domain():
    return unit_square()


@pytest.fixture
def two_triangle_mesh(square_domain):
    """Unit square split along the main diagonal."""
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    elements = np.array([[0, 1, 2], [0, 2, 3]])
    return Mesh(vertices, elements, square_domain)


@pytest.fixture
def crisscross_mesh(square_domain):
    """Unit square split into four triangles around the center vertex."""
    vertices = np.array(
        [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]]
    )
    elements = np.array([[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]])
    return Mesh(vertices, elements, square_domain)


@pytest.fixture
def biunit_domain():
    return PolygonDomain(
        np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
    )


def random_mesh(rng, max_extra=30):
    """Small Delaunay mesh of the unit square with random interior points."""
    from scipy.spatial import Delaunay

    n = rng.integers(0, max_extra + 1)
    pts = np.vstack(
        [
            [[0, 0], [1, 0], [1, 1], [0, 1]],
            rng.uniform(0.05, 0.95, (n, 2)),
        ]
    )
    tri = Delaunay(pts)
    return Mesh(pts, tri.simplices.astype(np.int64), unit_square())
