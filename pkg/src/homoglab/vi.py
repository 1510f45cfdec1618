"""Discrete obstacle problems: PSOR, active-set warm start, brute force, penalization.

Sign convention: ``A`` is the SPD discretization of ``-div(a grad)``.  The
obstacle problem ``div(a grad u) = f chi_{u > psi}`` with ``u >= psi`` is the
linear complementarity problem

    u - psi >= 0,    w := A u + f >= 0,    (u - psi) * w = 0

on interior nodes, i.e. the minimizer of ``1/2 <Au, u> + <f, u>`` over
``u >= psi`` with ``u = g`` on the boundary.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field as dc_field

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    InvalidInputError,
    NonConvergenceError,
    OracleFailureError,
    PreconditionError,
)
from .field import CoefficientField, DiscreteOperator, Grid, assemble
from .gridfunc import as_grid_function, grad_sq_norm, l1_norm, linf_norm

DEFAULT_OMEGA = 1.8
DEFAULT_MAX_ITER = 10**6


def default_tol(grid: Grid) -> float:
    return 1e-10 if grid.dim == 1 else 1e-8


@dataclass
class ObstacleProblem:
    """Obstacle problem on a grid: operator, source ``f``, boundary data ``g``, obstacle ``psi``."""

    operator: DiscreteOperator
    f: np.ndarray
    g: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        if self.operator.bc != "dirichlet":
            raise InvalidInputError("obstacle problems need a dirichlet operator")
        grid = self.operator.grid
        self.f = as_grid_function(self.f, grid)
        self.g = as_grid_function(self.g, grid)
        self.psi = as_grid_function(self.psi, grid)
        bnd = grid.boundary_mask()
        if np.any(self.g[bnd] < self.psi[bnd] - 1e-14):
            raise InvalidInputError("boundary data must satisfy g >= psi")

    @classmethod
    def build(cls, field: CoefficientField, grid: Grid, eps: float, f=1.0, g=0.0, psi=0.0) -> "ObstacleProblem":
        return cls(assemble(field, grid, eps), f, g, psi)

    @property
    def grid(self) -> Grid:
        return self.operator.grid

    @property
    def normalized(self) -> bool:
        return not np.any(self.psi)

    def with_operator(self, operator: DiscreteOperator) -> "ObstacleProblem":
        return ObstacleProblem(operator, self.f, self.g, self.psi)

    def with_obstacle(self, psi) -> "ObstacleProblem":
        return ObstacleProblem(self.operator, self.f, self.g, psi)

    def interior_system(self):
        """Return ``(A_II, q, psi_I, I)`` with ``q = A_IB g_B + f_I``."""
        a = self.operator.matrix
        i = self.operator.interior_index()
        b = self.operator.boundary_index()
        aii = a[i][:, i].tocsr()
        q = a[i][:, b] @ self.g.ravel()[b] + self.f.ravel()[i]
        return aii, q, self.psi.ravel()[i], i

    def assemble_solution(self, u_interior: np.ndarray) -> np.ndarray:
        u = self.g.ravel().copy()
        u[self.operator.interior_index()] = u_interior
        return u.reshape(self.grid.shape)


@dataclass
class SolveReport:
    iterations: int
    residual: float
    active: np.ndarray
    wall_time: float
    method: str = "psor"
    tol: float = 0.0
    energies: list = dc_field(default_factory=list)

    def to_dict(self, timing: bool = True) -> dict:
        out = {
            "iterations": int(self.iterations),
            "residual": float(self.residual),
            "tol": float(self.tol),
            "method": self.method,
            "active_count": int(np.count_nonzero(self.active)),
        }
        if timing:
            out["wall_time"] = float(self.wall_time)
        return out

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), sort_keys=True, indent=2)


# ------------------------------------------------------------------- PSOR


@numba.njit(cache=True)
def _lcp_residual(indptr, indices, data, diag, q, psi, u):
    res = 0.0
    for i in range(u.shape[0]):
        s = q[i]
        for p in range(indptr[i], indptr[i + 1]):
            s += data[p] * u[indices[p]]
        r = min(u[i] - psi[i], s / diag[i])
        if abs(r) > res:
            res = abs(r)
    return res


@numba.njit(cache=True)
def _energy(indptr, indices, data, q, u):
    e = 0.0
    for i in range(u.shape[0]):
        s = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            s += data[p] * u[indices[p]]
        e += 0.5 * u[i] * s + q[i] * u[i]
    return e


@numba.njit(cache=True)
def _psor(indptr, indices, data, diag, q, psi, u, omega, tol, max_iter, energies, track):
    n = u.shape[0]
    res = np.inf
    ne = 0
    for it in range(1, max_iter + 1):
        for i in range(n):
            s = q[i]
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                if j != i:
                    s += data[p] * u[j]
            v = u[i] + omega * (-s / diag[i] - u[i])
            u[i] = v if v > psi[i] else psi[i]
        if it % 10 == 0 and track and ne < energies.shape[0]:
            energies[ne] = _energy(indptr, indices, data, q, u)
            ne += 1
        if it <= 10 or it % 10 == 0 or it == max_iter:
            res = _lcp_residual(indptr, indices, data, diag, q, psi, u)
            if res <= tol:
                return it, res, ne
    return max_iter, res, ne


def lcp_residual(a: sp.csr_matrix, q: np.ndarray, psi: np.ndarray, u: np.ndarray) -> float:
    """``max_i |min(u_i - psi_i, (Au + q)_i / A_ii)|``."""
    w = a @ u + q
    r = np.minimum(u - psi, w / a.diagonal())
    return float(np.max(np.abs(r))) if r.size else 0.0


def psor(a, q, psi, u0=None, omega=DEFAULT_OMEGA, tol=1e-10, max_iter=DEFAULT_MAX_ITER, track_energy=False):
    """Projected SOR on the LCP ``u >= psi, Au + q >= 0``; returns ``(u, iterations, residual, energies)``."""
    if not 0 < omega < 2:
        raise InvalidInputError("omega must lie in (0, 2)")
    a = sp.csr_matrix(a)
    a.sort_indices()
    n = a.shape[0]
    u = np.maximum(np.zeros(n) if u0 is None else np.array(u0, dtype=float), psi)
    energies = np.zeros(max_iter // 10 + 1 if track_energy else 1)
    it, res, ne = _psor(
        a.indptr, a.indices, a.data, a.diagonal(), np.asarray(q, float), np.asarray(psi, float),
        u, float(omega), float(tol), int(max_iter), energies, bool(track_energy),
    )
    return u, int(it), float(res), list(energies[:ne])


def active_set_solve(a, q, psi, max_iter=500, active=None):
    """Primal-dual active-set iteration; finite termination for M-matrices.

    ``active`` seeds the iteration (default: where the unconstrained
    solution violates the obstacle).  Returns ``(u, iterations, converged)``.
    """
    a = sp.csc_matrix(a)
    d = a.diagonal()
    n = a.shape[0]
    if active is None:
        active = spla.spsolve(a, -q) < psi if n else np.zeros(0, bool)
    u = psi.copy()
    for it in range(1, max_iter + 1):
        free = ~active
        u = psi.copy()
        if np.any(free):
            aff = a[free][:, free]
            rhs = -q[free] - a[free][:, active] @ psi[active]
            u[free] = spla.spsolve(aff.tocsc(), rhs) if aff.shape[0] > 1 else rhs / aff.toarray().ravel()
        w = a @ u + q
        new_active = (w / d - (u - psi)) > 0
        if np.array_equal(new_active, active):
            return u, it, True
        active = new_active
    return u, max_iter, n == 0


def _prolongation_1d(n_coarse: int) -> sp.csr_matrix:
    """Linear interpolation from ``n_coarse`` to ``2 n_coarse + 1`` interior nodes."""
    rows, cols, vals = [], [], []
    for j in range(n_coarse):
        rows += [2 * j, 2 * j + 1, 2 * j + 2]
        cols += [j, j, j]
        vals += [0.5, 1.0, 0.5]
    return sp.csr_matrix((vals, (rows, cols)), shape=(2 * n_coarse + 1, n_coarse))


def multilevel_active_set(a, q, psi, shape, min_size: int = 7, max_iter: int = 500):
    """Nested-grid warm start for :func:`active_set_solve`.

    On a structured interior of odd size per axis the problem is coarsened
    by Galerkin projection with linear interpolation, solved recursively, and
    the prolonged coarse contact set seeds the fine active-set iteration.
    In 1D the plain iteration moves the free boundary by one node per step;
    with the nested start only a few steps per level remain.
    """
    shape = tuple(int(n) for n in shape)
    if all(n % 2 == 1 and n >= min_size for n in shape):
        coarse = tuple((n - 1) // 2 for n in shape)
        p = _prolongation_1d(coarse[0])
        for nc in coarse[1:]:
            p = sp.kron(p, _prolongation_1d(nc), format="csr")
        a_c = (p.T @ a @ p).tocsr()
        q_c = p.T @ q
        psi_c = psi.reshape(shape)[tuple(slice(1, None, 2) for _ in shape)].ravel()
        u_c, _, _ = multilevel_active_set(a_c, q_c, psi_c, coarse, min_size, max_iter)
        guess = (p @ u_c) - psi <= 0.0
        return active_set_solve(a, q, psi, max_iter, active=guess)
    return active_set_solve(a, q, psi, max_iter)


def solve_vi(
    problem: ObstacleProblem,
    tol: float | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
    omega: float = DEFAULT_OMEGA,
    warm_start: bool = True,
    track_energy: bool = False,
    initial: np.ndarray | None = None,
):
    """Solve the discrete obstacle problem.

    PSOR performs the final sweeps and certifies the complementarity
    residual.  With ``warm_start`` the sweeps start from the primal-dual
    active-set solution, which turns PSOR into a verification pass.
    """
    tol = default_tol(problem.grid) if tol is None else tol
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    t0 = time.perf_counter()
    a, q, psi, idx = problem.interior_system()
    method = "psor"
    u0 = None
    if initial is not None:
        u0 = np.asarray(initial, dtype=float).ravel()[idx]
    elif warm_start:
        interior = tuple(n - 2 for n in problem.grid.counts)
        u0, _, _ = multilevel_active_set(a, q, psi, interior)
        method = "active-set+psor"
    u, it, res, energies = psor(a, q, psi, u0, omega, tol, max_iter, track_energy)
    if res > tol:
        raise NonConvergenceError(f"PSOR did not reach tol={tol:g} in {it} sweeps", res, it)
    full = problem.assemble_solution(u)
    scale = max(linf_norm(full), 1e-300)
    active = contact_mask(full, problem.psi, problem.grid, 10 * tol * scale)
    report = SolveReport(it, res, active, time.perf_counter() - t0, method, tol, energies)
    return full, report


def contact_mask(u, psi, grid: Grid, threshold: float) -> np.ndarray:
    """Interior nodes with ``u - psi <= threshold``."""
    return (np.asarray(u) - np.asarray(psi) <= threshold) & grid.interior_mask()


# ------------------------------------------------------------ brute force


def brute_force_vi(problem: ObstacleProblem, order=None) -> np.ndarray:
    """Enumerate all active sets; return the complementary candidate.

    ``order`` optionally permutes the enumeration of the ``2**n`` masks.
    """
    a, q, psi, _ = problem.interior_system()
    n = a.shape[0]
    if n > 16:
        raise PreconditionError(f"brute force limited to 16 interior nodes, got {n}")
    a = a.toarray()
    scale_u = 1.0 + np.max(np.abs(psi), initial=0.0) + np.max(np.abs(q), initial=0.0) / np.min(np.diag(a))
    masks = range(2**n) if order is None else order
    bits = 1 << np.arange(n)
    for mask in masks:
        active = (int(mask) & bits) != 0
        free = ~active
        u = psi.copy()
        if np.any(free):
            rhs = -q[free] - a[np.ix_(free, active)] @ psi[active]
            u[free] = np.linalg.solve(a[np.ix_(free, free)], rhs)
        tol_u = 1e-11 * max(scale_u, np.max(np.abs(u)))
        if np.any(u[free] < psi[free] - tol_u):
            continue
        w = a @ u + q
        if np.any(w[active] < -1e-11 * (1 + np.max(np.abs(a)) * max(scale_u, np.max(np.abs(u))))):
            continue
        return problem.assemble_solution(u)
    raise OracleFailureError("no complementary active set found")


# ----------------------------------------------------------- penalization


def beta_s(t, s: float):
    """Lipschitz ramp: ``t/s`` on ``|t| <= s`` and ``sign(t)`` outside."""
    if s <= 0:
        raise InvalidInputError("s must be positive")
    return np.clip(np.asarray(t, dtype=float) / s, -1.0, 1.0)


def gamma_s(t, s: float):
    """Antiderivative of :func:`beta_s` with ``gamma_s(0) = 0``."""
    if s <= 0:
        raise InvalidInputError("s must be positive")
    r = np.abs(np.asarray(t, dtype=float)) / s
    return s * np.where(r <= 1.0, 0.5 * r**2, r - 0.5)


def solve_penalized(problem: ObstacleProblem, s: float, tol: float | None = None, max_iter: int = 500):
    """Solve ``A u + f beta_s(u) = -A_IB g`` by damped semismooth Newton.

    The energy ``1/2 <Au,u> + <q0,u> + <f, gamma_s(u)>`` is convex, so Armijo
    backtracking on it globalizes Newton.  If the line search stalls, a
    damped (factor 1/2) fixed-point step is taken instead.
    """
    if not problem.normalized:
        raise PreconditionError("penalization is defined for the normalized problem (psi = 0)")
    if s <= 0:
        raise InvalidInputError("s must be positive")
    tol = default_tol(problem.grid) if tol is None else tol
    t0 = time.perf_counter()
    a, q, _, idx = problem.interior_system()
    f = problem.f.ravel()[idx]
    q0 = q - f
    d = a.diagonal()
    a = sp.csc_matrix(a)

    def energy(u):
        return 0.5 * u @ (a @ u) + q0 @ u + f @ gamma_s(u, s)

    def residual_vec(u):
        return a @ u + q0 + f * beta_s(u, s)

    u = spla.spsolve((a + sp.diags(f / s)).tocsc(), -q0)
    lu_plain = None
    it = 0
    method = "newton"
    for it in range(1, max_iter + 1):
        r = residual_vec(u)
        res = float(np.max(np.abs(r / d))) if r.size else 0.0
        if res <= tol:
            break
        jac = (a + sp.diags(f * (np.abs(u) < s) / s)).tocsc()
        step = spla.spsolve(jac, -r)
        e0, slope = energy(u), r @ step
        t = 1.0
        while t > 1e-10 and energy(u + t * step) > e0 + 1e-4 * t * slope + 1e-15 * abs(e0):
            t *= 0.5
        if t > 1e-10:
            u = u + t * step
            continue
        if lu_plain is None:
            lu_plain = spla.splu(a)
        u = 0.5 * u + 0.5 * lu_plain.solve(-q0 - f * beta_s(u, s))
        method = "newton+fixed-point"
    else:
        r = residual_vec(u)
        res = float(np.max(np.abs(r / d)))
        raise NonConvergenceError(f"penalized solve did not reach tol={tol:g}", res, max_iter)
    full = problem.assemble_solution(u)
    active = contact_mask(full, problem.psi, problem.grid, 0.0)
    return full, SolveReport(it, res, active, time.perf_counter() - t0, method, tol)


def penalization_gap(u: np.ndarray, u_s: np.ndarray, s: float, f, grid: Grid) -> dict:
    """Sandwich quantities for ``u_s - u`` plus the ``||f||_{L^1} s`` gradient bound."""
    diff = np.asarray(u_s) - np.asarray(u)
    f_l1 = l1_norm(as_grid_function(f, grid), grid)
    return {
        "min_gap": float(np.min(diff)),
        "max_gap": float(np.max(diff)),
        "grad_gap": grad_sq_norm(diff, grid),
        "f_l1": f_l1,
        "grad_bound": f_l1 * s,
        "s": float(s),
    }


def comparison_gap(problem_1: ObstacleProblem, problem_2: ObstacleProblem, tol: float | None = None) -> float:
    """``||u_1 - u_2||_inf`` for two problems differing only in the obstacle."""
    if problem_1.grid != problem_2.grid or problem_1.operator is not problem_2.operator and not (
        (problem_1.operator.matrix != problem_2.operator.matrix).nnz == 0
    ):
        raise PreconditionError("comparison needs identical grid and operator")
    if not (np.array_equal(problem_1.f, problem_2.f) and np.array_equal(problem_1.g, problem_2.g)):
        raise PreconditionError("comparison needs identical f and g")
    u1, _ = solve_vi(problem_1, tol)
    u2, _ = solve_vi(problem_2, tol)
    return linf_norm(u1 - u2)
