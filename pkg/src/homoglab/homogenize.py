"""Heterogeneous versus homogenized obstacle problems.

``solve_pair`` solves the same obstacle problem twice, once with the
oscillating field ``a(x/eps)`` and once with the constant homogenized
matrix, and records the gap in ``L^2``, ``L^inf`` and in the discrete
``H^{-1}`` norm of both the gradient gap and the flux gap.  The module also
provides the two-scale expansion and the corrected-affine fit used as a
large-scale ``C^{1,1}`` diagnostic.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse.linalg as spla
from scipy import ndimage

from .cell import CorrectorSet
from .errors import InvalidParameterError
from .field import CoefficientField, DiscreteOperator, Grid, assemble, constant_operator
from .gridfunc import l2_norm, linf_norm
from .vi import ObstacleProblem, solve_vi

SWEEP_COLUMNS = ("epsilon", "l2_gap", "linf_gap", "hminus1_grad_gap", "hminus1_flux_gap", "seed")


# ----------------------------------------------------------------- H^{-1}
def _dirichlet_laplacian(grid: Grid):
    op = constant_operator(np.eye(grid.dim), grid)
    i = op.interior_index()
    return op.matrix[i][:, i].tocsc(), i


def hminus1_norm(w, grid: Grid) -> float:
    """Discrete ``H^{-1}`` norm: ``||grad z||`` where ``-Lap z = w`` with zero boundary values.

    Only interior values of ``w`` matter.  Since ``h^d <A z, z> = h^d <w, z>``
    the norm is evaluated as ``sqrt(h^d <w, z>)``.
    """
    w = np.asarray(w, dtype=float).reshape(grid.shape)
    lap, i = _dirichlet_laplacian(grid)
    wi = w.ravel()[i]
    if not np.any(wi):
        return 0.0
    z = spla.spsolve(lap, wi)
    return float(np.sqrt(max(grid.cell_volume * float(wi @ z), 0.0)))


def edges_to_nodes(values: np.ndarray, axis: int, grid: Grid) -> np.ndarray:
    """Average edge values along ``axis`` onto nodes; the two end nodes take the adjacent edge."""
    values = np.asarray(values, dtype=float)
    pad = [(0, 0)] * values.ndim
    pad[axis] = (1, 1)
    p = np.pad(values, pad, mode="edge")
    lo = [slice(None)] * values.ndim
    hi = [slice(None)] * values.ndim
    lo[axis], hi[axis] = slice(0, -1), slice(1, None)
    return 0.5 * (p[tuple(lo)] + p[tuple(hi)])


def vector_hminus1(components, grid: Grid) -> float:
    """Sum of componentwise ``H^{-1}`` norms of an edge-based vector field."""
    return float(sum(hminus1_norm(edges_to_nodes(c, k, grid), grid) for k, c in enumerate(components)))


# --------------------------------------------------------------- the pair
@dataclass
class PairResult:
    eps: float
    field: CoefficientField
    abar: np.ndarray
    u_eps: np.ndarray
    u_hom: np.ndarray
    norms: dict
    reports: tuple = ()
    seed: int = 0
    grid: Grid | None = None

    def row(self) -> list:
        n = self.norms
        return [self.eps, n["l2_gap"], n["linf_gap"], n["hminus1_grad_gap"], n["hminus1_flux_gap"], self.seed]

    def to_dict(self) -> dict:
        return {
            "epsilon": float(self.eps),
            "field": self.field.to_dict(),
            "abar": np.asarray(self.abar).tolist(),
            "norms": {k: float(v) for k, v in self.norms.items()},
            "seed": int(self.seed),
            "reports": [r.to_dict(timing=False) for r in self.reports],
        }


def pair_norms(op_eps: DiscreteOperator, op_hom: DiscreteOperator, u_eps, u_hom) -> dict:
    grid = op_eps.grid
    diff = np.asarray(u_eps) - np.asarray(u_hom)
    grads = [
        (d @ diff.ravel()).reshape(c.shape)
        for d, c in zip(op_eps.gradients, op_eps.conductances)
    ]
    flux_gap = [fe - fh for fe, fh in zip(op_eps.fluxes(u_eps), op_hom.fluxes(u_hom))]
    return {
        "l2_gap": l2_norm(diff, grid),
        "linf_gap": linf_norm(diff),
        "hminus1_grad_gap": vector_hminus1(grads, grid),
        "hminus1_flux_gap": vector_hminus1(flux_gap, grid),
    }


def solve_pair(problem: ObstacleProblem, field: CoefficientField, eps: float, abar, tol: float | None = None, seed: int = 0) -> PairResult:
    """Solve with ``a(x/eps)`` and with constant ``abar`` on the data ``(f, g, psi)`` of ``problem``."""
    grid = problem.grid
    abar = np.atleast_2d(np.asarray(abar, dtype=float))
    op_eps = assemble(field, grid, eps)
    op_hom = constant_operator(abar, grid)
    u_eps, rep_eps = solve_vi(problem.with_operator(op_eps), tol=tol)
    u_hom, rep_hom = solve_vi(problem.with_operator(op_hom), tol=tol)
    norms = pair_norms(op_eps, op_hom, u_eps, u_hom)
    return PairResult(eps, field, abar, u_eps, u_hom, norms, (rep_eps, rep_hom), seed, grid)


def homogenization_sweep(problem: ObstacleProblem, field: CoefficientField, eps_list, abar, tol=None, seed=0, threads: int = 1) -> list[PairResult]:
    """``solve_pair`` over ``eps_list``; results keep the input order."""
    run = lambda e: solve_pair(problem, field, e, abar, tol, seed)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(run, eps_list))
    return [run(e) for e in eps_list]


# ----------------------------------------------------- two-scale expansion
def boundary_cutoff(grid: Grid, r: float) -> np.ndarray:
    """C^1 cutoff: 0 within ``r`` of the boundary, 1 beyond ``2r``, smoothstep between."""
    dist = None
    for k, x in enumerate(grid.mesh()):
        dk = np.minimum(x - grid.lower[k], grid.upper[k] - x)
        dist = dk if dist is None else np.minimum(dist, dk)
    t = np.clip((dist - r) / r, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def tent_kernel(radius: float, h: float) -> np.ndarray:
    """Unit-mass discrete tent kernel of the given radius."""
    n = int(np.floor(radius / h))
    j = np.arange(-n, n + 1)
    w = np.maximum(1.0 - np.abs(j) * h / radius, 0.0)
    return w / w.sum()


def mollify(u: np.ndarray, grid: Grid, radius: float) -> np.ndarray:
    out = np.asarray(u, dtype=float).reshape(grid.shape)
    for k, h in enumerate(grid.spacing):
        out = ndimage.convolve1d(out, tent_kernel(radius, h), axis=k, mode="nearest")
    return out


def corrector_values(correctors: CorrectorSet, grid: Grid, eps: float) -> list[np.ndarray]:
    """``phi_k(x/eps)`` at every node of ``grid``."""
    y = grid.points() / eps
    return [correctors.evaluate(k, y).reshape(grid.shape) for k in range(correctors.dim)]


def two_scale_expand(u_hom, grid: Grid, correctors: CorrectorSet, eps: float, r: float, h_moll: float) -> np.ndarray:
    """``u + eps * eta_r * sum_k d_k(mollified u) * phi_k(x/eps)``."""
    hmin = min(grid.spacing)
    half_width = 0.5 * min(grid.lengths)
    if not (2 * hmin <= r < half_width):
        raise InvalidParameterError("cutoff radius must lie in [2h, half the domain width)")
    if not (hmin <= h_moll < r / 2):
        raise InvalidParameterError("mollifier radius must lie in [h, r/2)")
    u = np.asarray(u_hom, dtype=float).reshape(grid.shape)
    smooth = mollify(u, grid, h_moll)
    grads = np.gradient(smooth, *grid.spacing) if grid.dim > 1 else [np.gradient(smooth, grid.spacing[0])]
    phis = corrector_values(correctors, grid, eps)
    corr = sum(g * p for g, p in zip(grads, phis))
    return u + eps * boundary_cutoff(grid, r) * corr


# ------------------------------------------------- corrected affine fit
@dataclass
class AffineFit:
    c: float
    p: np.ndarray
    residual: float
    count: int
    meta: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"c": float(self.c), "p": np.asarray(self.p).tolist(), "residual": float(self.residual), "count": int(self.count)}


def corrected_affine_fit(u_eps, grid: Grid, correctors: CorrectorSet | None, eps: float, center, r: float) -> AffineFit:
    """Least-squares fit of ``c + p.x + eps sum_k p_k phi_k(x/eps)`` over ``B_r(center)``.

    The residual is reported in the max norm over the ball.  Passing
    ``correctors=None`` fits plain affine functions.
    """
    center = np.asarray(center, dtype=float).reshape(-1)
    if not grid.contains_ball(center, r):
        raise InvalidParameterError("ball leaves the grid")
    inside = (grid.distance_squared(center) <= r * r).ravel()
    pts = grid.points()[inside]
    vals = np.asarray(u_eps, dtype=float).ravel()[inside]
    cols = [np.ones(len(pts))]
    for k in range(grid.dim):
        col = pts[:, k].copy()
        if correctors is not None:
            col += eps * correctors.evaluate(k, pts / eps)
        cols.append(col)
    mat = np.stack(cols, axis=1)
    if len(pts) < 2 * (grid.dim + 1) or np.linalg.matrix_rank(mat) < grid.dim + 1:
        raise InvalidParameterError("too few nodes in the ball for a stable fit")
    # center the coordinates for conditioning; c is shifted back afterwards
    shift = np.concatenate([[0.0], center])
    coef, *_ = np.linalg.lstsq(mat - shift[None, :] * (np.arange(grid.dim + 1) > 0), vals, rcond=None)
    c = coef[0] - float(coef[1:] @ center)
    resid = vals - mat @ np.concatenate([[c], coef[1:]])
    return AffineFit(float(c), coef[1:], float(np.max(np.abs(resid))), int(len(pts)))


def c11_profile(u_eps, grid: Grid, correctors: CorrectorSet | None, eps: float, center, radii) -> list[dict]:
    """Rows ``(r, residual, residual / r**2)`` of the corrected-affine fit."""
    rows = []
    for r in radii:
        fit = corrected_affine_fit(u_eps, grid, correctors, eps, center, r)
        rows.append({"r": float(r), "residual": fit.residual, "normalized": fit.residual / r**2})
    return rows
