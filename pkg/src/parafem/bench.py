"""Manufactured benchmark problems and convergence reporting helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import ParabolicProblem
from .mesh import PolygonDomain

_R_EPS = 1e-12


@dataclass
class ManufacturedCase(ParabolicProblem):
    name: str = ""
    default_etol: float = 0.01
    default_tau: float = 0.01
    default_initial_h: float = 0.25


def _square(lo, hi):
    return PolygonDomain(np.array([[lo, lo], [hi, lo], [hi, hi], [lo, hi]], dtype=float))


def _rotation_case() -> ManufacturedCase:
    # moving Gaussian peak circling the origin

    def center(t):
        return 0.3 * np.cos(2 * np.pi * t), 0.3 * np.sin(2 * np.pi * t)

    def u(p, t):
        p = np.atleast_2d(p)
        cx, cy = center(t)
        return np.exp(-500 * (p[:, 0] - cx) ** 2) * np.exp(-500 * (p[:, 1] - cy) ** 2)

    def grad(p, t):
        p = np.atleast_2d(p)
        cx, cy = center(t)
        val = u(p, t)
        return np.column_stack([-1000 * (p[:, 0] - cx) * val, -1000 * (p[:, 1] - cy) * val])

    def f(p, t):
        p = np.atleast_2d(p)
        cx, cy = center(t)
        dcx = -0.6 * np.pi * np.sin(2 * np.pi * t)
        dcy = 0.6 * np.pi * np.cos(2 * np.pi * t)
        dx, dy = p[:, 0] - cx, p[:, 1] - cy
        val = u(p, t)
        u_t = 1000.0 * (dx * dcx + dy * dcy) * val
        lap = (-2000.0 + 1e6 * (dx ** 2 + dy ** 2)) * val
        return u_t - lap

    return ManufacturedCase(
        domain=_square(-1.0, 1.0),
        u0=lambda p: u(p, 0.0),
        f=f,
        g=None,
        exact=u,
        exact_gradient=grad,
        name="rotation",
        default_etol=0.01,
        default_tau=0.01,
        default_initial_h=2.0 / 9.0,
    )


def _diffusion_case() -> ManufacturedCase:
    # Gaussian ring contracting toward the origin

    def _parts(p, t):
        p = np.atleast_2d(p)
        r = np.maximum(np.hypot(p[:, 0], p[:, 1]), _R_EPS)
        s = r + 0.3 * t - 0.4
        return p, r, s, np.exp(-5000 * s ** 2)

    def u(p, t):
        return _parts(p, t)[3]

    def grad(p, t):
        p, r, s, val = _parts(p, t)
        coeff = -10000 * s * val / r
        return np.column_stack([coeff * p[:, 0], coeff * p[:, 1]])

    def f(p, t):
        # f = u_t - (u_rr + u_r / r) for the radially symmetric exact solution
        p, r, s, val = _parts(p, t)
        u_t = -3000 * s * val
        u_rr = (-10000 + 1e8 * s ** 2) * val
        u_r_over_r = -10000 * s * val / r
        return u_t - u_rr - u_r_over_r

    return ManufacturedCase(
        domain=_square(-1.0, 1.0),
        u0=lambda p: u(p, 0.0),
        f=f,
        g=None,
        exact=u,
        exact_gradient=grad,
        name="diffusion",
        default_etol=0.05,
        default_tau=0.01,
        default_initial_h=2.0 / 23.0,
    )


def _splitting_case() -> ManufacturedCase:
    # one peak splitting into two moving apart along the x axis

    def _peaks(p, t):
        p = np.atleast_2d(p)
        d1 = (p[:, 0] - 0.3 * t) ** 2 + p[:, 1] ** 2
        d2 = (p[:, 0] + 0.3 * t) ** 2 + p[:, 1] ** 2
        return p, np.exp(-300 * d1), np.exp(-300 * d2)

    def u(p, t):
        _, e1, e2 = _peaks(p, t)
        return e1 + e2

    def grad(p, t):
        p, e1, e2 = _peaks(p, t)
        gx = -600 * ((p[:, 0] - 0.3 * t) * e1 + (p[:, 0] + 0.3 * t) * e2)
        gy = -600 * p[:, 1] * (e1 + e2)
        return np.column_stack([gx, gy])

    def f(p, t):
        p, e1, e2 = _peaks(p, t)
        x, y = p[:, 0], p[:, 1]
        u_t = 180 * (x - 0.3 * t) * e1 - 180 * (x + 0.3 * t) * e2
        lap = (-1200 + 360000 * ((x - 0.3 * t) ** 2 + y ** 2)) * e1 + (
            -1200 + 360000 * ((x + 0.3 * t) ** 2 + y ** 2)
        ) * e2
        return u_t - lap

    return ManufacturedCase(
        domain=_square(-1.0, 1.0),
        u0=lambda p: u(p, 0.0),
        f=f,
        g=None,
        exact=u,
        exact_gradient=grad,
        name="splitting",
        default_etol=0.01,
        default_tau=0.01,
        default_initial_h=0.2,
    )


def _sine_case() -> ManufacturedCase:
    # smooth decaying product of sines on the unit square

    def u(p, t):
        p = np.atleast_2d(p)
        return np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1]) * np.exp(-t)

    def grad(p, t):
        p = np.atleast_2d(p)
        e = np.exp(-t)
        return np.column_stack(
            [
                np.pi * np.cos(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1]) * e,
                np.pi * np.sin(np.pi * p[:, 0]) * np.cos(np.pi * p[:, 1]) * e,
            ]
        )

    def f(p, t):
        return (2 * np.pi ** 2 - 1.0) * u(p, t)

    return ManufacturedCase(
        domain=_square(0.0, 1.0),
        u0=lambda p: u(p, 0.0),
        f=f,
        g=None,
        exact=u,
        exact_gradient=grad,
        name="sine",
        default_etol=0.01,
        default_tau=1e-4,
        default_initial_h=0.125,
    )


_CASES = {
    "rotation": _rotation_case,
    "diffusion": _diffusion_case,
    "splitting": _splitting_case,
    "sine": _sine_case,
}


def case_names():
    return sorted(_CASES)


def make_case(name: str) -> ManufacturedCase:
    try:
        return _CASES[name]()
    except KeyError:
        raise ValueError(f"unknown case {name!r}; choose from {case_names()}") from None


def efficiency_index(eta: float, error: float) -> float:
    """Estimator over true error; ~1 means asymptotic exactness."""
    if error <= 0.0:
        raise ValueError("efficiency index needs a positive error")
    return eta / error


def convergence_slope(points) -> float:
    """Least-squares slope of log(error) against log(N)."""
    points = list(points)
    if len(points) < 3:
        raise ValueError("need at least three points")
    n = np.array([p[0] for p in points], dtype=float)
    err = np.array([p[1] for p in points], dtype=float)
    if np.any(n <= 0.0) or np.any(err <= 0.0):
        raise ValueError("points must be positive")
    if np.all(n == n[0]):
        raise ValueError("degenerate data: all N equal")
    A = np.column_stack([np.log(n), np.ones(len(n))])
    coef, *_ = np.linalg.lstsq(A, np.log(err), rcond=None)
    return float(coef[0])
