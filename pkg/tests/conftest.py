"""Shared fixtures; the expensive solves are session-scoped and reused."""

import numpy as np
import pytest

import lmalab as L


@pytest.fixture(scope="session")
def disc():
    return L.ConvexDomain.ball([0.0, 0.0], 1.0)


@pytest.fixture(scope="session")
def grid32(disc):
    return L.Grid.from_domain(disc, 1 / 32)


@pytest.fixture(scope="session")
def grid64(disc):
    return L.Grid.from_domain(disc, 1 / 64)


@pytest.fixture(scope="session")
def w_f1_64(disc, grid64):
    """Potential for constant density 1 on the unit disc at h = 1/64."""
    f = L.ScalarField.constant(grid64, 1.0)
    prob = L.MAProblem(disc, f, L.EllipticityBounds(1.0, 1.0))
    return L.solve_ma(prob, grid64)


@pytest.fixture(scope="session")
def w_f1r2_64(disc, grid64):
    """Potential for density 1 + r^2 on the unit disc at h = 1/64."""
    f = L.ScalarField.from_function(grid64, lambda x, y: 1 + x * x + y * y)
    prob = L.MAProblem(disc, f, L.EllipticityBounds(1.0, 2.0))
    return L.solve_ma(prob, grid64)


@pytest.fixture(scope="session")
def interval_grid():
    """(-1, 1) with 256 cells (h = 1/128)."""
    return L.Grid.from_domain(L.ConvexDomain.interval(-1.0, 1.0), 1 / 128)


@pytest.fixture(scope="session")
def envelope_problem(interval_grid):
    phi = L.ScalarField.from_function(interval_grid, lambda x: 0.5 - x * x)
    W = L.TensorField.constant(interval_grid, [[1.0]])
    return L.ObstacleProblem(W, phi)


@pytest.fixture(scope="session")
def radial_problem(grid64):
    phi = L.ScalarField.from_function(grid64, lambda x, y: 0.5 - (x * x + y * y))
    W = L.TensorField.constant(grid64, np.eye(2))
    return L.ObstacleProblem(W, phi)


@pytest.fixture(scope="session")
def radial_solution(radial_problem):
    return L.solve_obstacle_activeset(radial_problem)


def concave_envelope_1d(xs, values, anchors):
    """Upper concave hull of (x, value) points plus boundary anchors.

    Independent oracle for the 1D obstacle problem with the second-difference
    operator: the solution is the least concave majorant of the obstacle with
    zero boundary values.
    """
    pts = sorted(set(anchors) | set(zip(map(float, xs), map(float, values))))
    hull = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) >= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    hx = np.array([p[0] for p in hull])
    hy = np.array([p[1] for p in hull])
    return lambda x: np.interp(x, hx, hy)


# frozen oracle values for the radial obstacle (W = I, phi = 1/2 - r^2 on B_1):
# contact radius rho solves -2 rho^2 ln(rho) = 1/2 - rho^2 (scipy.brentq at
# xtol 1e-15), and outside u = C ln r with C = -2 rho^2
RADIAL_RHO = 0.4320674818252781
RADIAL_C = -0.37336461770167406


def radial_obstacle_exact(x, y):
    r = np.sqrt(x * x + y * y)
    return np.where(r <= RADIAL_RHO, 0.5 - r * r,
                    RADIAL_C * np.log(np.maximum(r, 1e-300)))
