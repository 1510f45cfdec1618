"""Canonical problem instances shared by the lab, the tests and the acceptance gate."""

from __future__ import annotations

import math

import numpy as np

from .field import CoefficientField, Grid, layered_field, periodic_cell_field, smooth_field
from .vi import ObstacleProblem

CONTACT_INTERVAL = (0.0, 4.0)

# 4x4 unit cell with a stiff 2x2 inclusion in the middle
INCLUSION_CELL = ((0, 0, 0, 0), (0, 1, 1, 0), (0, 1, 1, 0), (0, 0, 0, 0))


def layered_12() -> CoefficientField:
    """Period-1 layers with value 1 on ``[0, 1/2)`` and 2 on ``[1/2, 1)``."""
    return layered_field([1.0, 2.0])


def smooth_periodic() -> CoefficientField:
    return smooth_field(1.5, 0.5)


def inclusion_field(contrast: float = 3.0) -> CoefficientField:
    return periodic_cell_field(INCLUSION_CELL, [1.0, contrast])


def corner_field() -> CoefficientField:
    """Quadrant field, used with ``eps = 2`` on ``(-1, 1)^2``: identity in the first
    and third quadrants, twice the identity in the second and fourth."""
    return periodic_cell_field(((0, 1), (1, 0)), [1.0, 2.0])


CORNER_EPS = 2.0


def interval_grid(h: float) -> Grid:
    lo, hi = CONTACT_INTERVAL
    n = int(round((hi - lo) / h))
    return Grid((lo,), (hi,), (n + 1,))


def interval_problem(field: CoefficientField, eps: float, h: float) -> ObstacleProblem:
    """``(a(x/eps) u')' = chi_{u>0}`` on ``(0, 4)`` with ``u(0) = 0``, ``u(4) = 1``."""
    grid = interval_grid(h)
    g = np.zeros(grid.shape)
    g[-1] = 1.0
    return ObstacleProblem.build(field, grid, eps, f=1.0, g=g)


def corner_solution(grid: Grid) -> np.ndarray:
    x, y = grid.mesh()
    return np.maximum(x, 0.0) ** 2 + np.maximum(y, 0.0) ** 2


def corner_problem(count: int = 257) -> ObstacleProblem:
    """Quarter-density corner: ``x_+^2 + y_+^2`` solves the problem with source 4."""
    grid = Grid.uniform(-1.0, 1.0, count, dim=2)
    return ObstacleProblem.build(corner_field(), grid, CORNER_EPS, f=4.0, g=corner_solution(grid))


def halfspace_data(grid: Grid, abar, angle: float, lam: float = 1.0) -> np.ndarray:
    """Half-space solution through the origin with normal ``(cos angle, sin angle)``."""
    e = np.array([math.cos(angle), math.sin(angle)])
    abar = np.atleast_2d(np.asarray(abar, dtype=float))
    x, y = grid.mesh()
    return 0.5 * lam * np.maximum(e[0] * x + e[1] * y, 0.0) ** 2 / float(e @ abar @ e)


def flat_problem(field: CoefficientField, eps: float, count: int, abar, angle: float = math.pi / 6, lam: float = 1.0) -> ObstacleProblem:
    """2D problem on ``(-1/2, 1/2)^2`` with half-space boundary data (flat free boundary)."""
    grid = Grid.uniform(-0.5, 0.5, count, dim=2)
    return ObstacleProblem.build(field, grid, eps, f=lam, g=halfspace_data(grid, abar, angle, lam))


def nearest_fb_node(mask_fb: np.ndarray, grid: Grid, point) -> np.ndarray:
    pts = grid.points()[np.asarray(mask_fb).ravel()]
    d = np.sum((pts - np.asarray(point, dtype=float)) ** 2, axis=1)
    return pts[int(np.argmin(d))]
