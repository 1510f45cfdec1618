"""Discrete norms and CSV dumps for nodal grid functions."""

from __future__ import annotations

import csv

import numpy as np

from .field import Grid


def l2_norm(w: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(np.sum(grid.trapezoid_weights() * np.asarray(w) ** 2)))


def l1_norm(w: np.ndarray, grid: Grid) -> float:
    return float(np.sum(grid.trapezoid_weights() * np.abs(w)))


def linf_norm(w: np.ndarray) -> float:
    return float(np.max(np.abs(w))) if np.size(w) else 0.0


def forward_gradients(w: np.ndarray, grid: Grid) -> list[np.ndarray]:
    """Forward differences along every axis, living on grid edges."""
    w = np.asarray(w, dtype=float).reshape(grid.shape)
    return [np.diff(w, axis=k) / h for k, h in enumerate(grid.spacing)]


def grad_sq_norm(w: np.ndarray, grid: Grid) -> float:
    """``||grad w||_{L^2}^2`` with forward differences and ``h^d`` weights."""
    return float(sum(np.sum(g**2) for g in forward_gradients(w, grid)) * grid.cell_volume)


def h1_seminorm(w: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(grad_sq_norm(w, grid)))


def mean_l2(w: np.ndarray) -> float:
    """Volume-normalized L^2 norm on a periodic layout (all nodes equal weight)."""
    return float(np.sqrt(np.mean(np.asarray(w) ** 2)))


def as_grid_function(value, grid: Grid) -> np.ndarray:
    """Broadcast a scalar, callable of mesh coordinates, or array onto ``grid``."""
    if callable(value):
        out = np.asarray(value(*grid.mesh()), dtype=float)
        return np.broadcast_to(out, grid.shape).copy()
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.shape, float(arr))
    return arr.reshape(grid.shape).copy()


def write_solution_csv(path, grid: Grid, u: np.ndarray, active: np.ndarray | None = None) -> None:
    """Write node coordinates, solution values and contact flags, one row per node."""
    names = ["x", "y"][: grid.dim]
    pts = grid.points()
    vals = np.asarray(u).ravel()
    flags = np.zeros(grid.size, dtype=int) if active is None else np.asarray(active).ravel().astype(int)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["u", "active"])
        for p, v, a in zip(pts, vals, flags):
            w.writerow([repr(float(c)) for c in p] + [repr(float(v)), int(a)])


def read_solution_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(points, u, active)`` from :func:`write_solution_csv` output."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    dim = len(header) - 2
    data = np.array([[float(v) for v in r] for r in body])
    return data[:, :dim], data[:, dim], data[:, dim + 1].astype(bool)


def write_rows_csv(path, header, rows) -> None:
    """Generic CSV table writer with repr-exact floats."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
