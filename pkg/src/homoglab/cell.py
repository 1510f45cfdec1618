"""Periodic cell problems on the cube of side ``3**m`` centred at the origin.

Correctors solve ``div a (e + grad phi) = 0`` with periodic boundary
conditions and zero mean; flux correctors are periodic potentials of the
curl of the corrected flux; the coarsened matrix is the cell average of the
corrected flux (or the Dirichlet energy form).  These feed the error
functional ``E(eps)`` and the minimal scale.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InsufficientDataError, InvalidInputError, SolverError
from .field import CoefficientField, DiscreteOperator, Grid, assemble, constant_operator
from .gridfunc import write_rows_csv

# ------------------------------------------------------------ linear algebra


def pcg_mean_zero(a: sp.spmatrix, b: np.ndarray, tol: float = 1e-12, max_iter: int | None = None):
    """Jacobi-preconditioned CG for a singular SPD system with constants in its kernel.

    Iterates on the mean-zero subspace; stops when ``max|r_i / a_ii| <= tol``.
    Returns ``(x, residual, iterations)``.
    """
    b = np.asarray(b, dtype=float).ravel()
    n = b.size
    b = b - b.mean()
    d = a.diagonal()
    max_iter = max_iter or 10 * n + 100
    x = np.zeros(n)
    r = b.copy()
    res = float(np.max(np.abs(r / d))) if n else 0.0
    if res <= tol:
        return x, res, 0
    z = r / d
    z -= z.mean()
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        ap = a @ p
        pap = p @ ap
        if pap <= 0:
            raise SolverError("CG breakdown: operator not positive on search direction")
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        res = float(np.max(np.abs(r / d)))
        if res <= tol:
            x -= x.mean()
            return x, res, it
        z = r / d
        z -= z.mean()
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"CG did not converge: residual {res:g} after {max_iter} iterations")


# -------------------------------------------------------------------- cubes


def scale_index(eps: float) -> int:
    """``m = ceil(-log_3 eps)``, robust to round-off at exact powers of three."""
    if eps <= 0:
        raise InvalidInputError("eps must be positive")
    x = -math.log(eps) / math.log(3.0)
    m = math.ceil(x - 1e-9)
    return max(m, 0)


def cube_grid(m: int, resolution: int, dim: int) -> Grid:
    """Grid of the cube ``(-3**m/2, 3**m/2)**dim`` with ``resolution`` intervals per unit length."""
    side = 3**m
    return Grid((-side / 2,) * dim, (side / 2,) * dim, (side * resolution + 1,) * dim)


def _realize(field: CoefficientField, m: int) -> CoefficientField:
    if field.kind == "checkerboard-random" and field.extent < 3**m:
        raise InvalidInputError(f"random field extent {field.extent} smaller than cube side {3**m}")
    return field


def cell_operator(field: CoefficientField, m: int, resolution: int, dim: int) -> DiscreteOperator:
    return assemble(_realize(field, m), cube_grid(m, resolution, dim), 1.0, "periodic")


# ---------------------------------------------------------------- correctors


def _direction(e, dim: int) -> np.ndarray:
    if np.isscalar(e):
        v = np.zeros(dim)
        v[int(e)] = 1.0
        return v
    v = np.asarray(e, dtype=float)
    if v.shape != (dim,):
        raise InvalidInputError("direction has wrong dimension")
    return v


def solve_corrector(
    field: CoefficientField, m: int, e, resolution: int = 16, dim: int = 1,
    operator: DiscreteOperator | None = None, tol: float = 1e-12,
) -> np.ndarray:
    """Periodic zero-mean corrector ``phi_{m,e}`` on the unique-node layout."""
    op = operator or cell_operator(field, m, resolution, dim)
    e = _direction(e, op.grid.dim)
    rhs = np.zeros(int(np.prod(op.node_shape)))
    for k, (d, c) in enumerate(zip(op.gradients, op.conductances)):
        if e[k]:
            rhs -= d.T @ (c.ravel() * e[k])
    if not np.any(rhs):
        return np.zeros(op.node_shape)
    phi, _, _ = pcg_mean_zero(op.matrix, rhs, tol)
    return phi.reshape(op.node_shape)


def corrected_fluxes(op: DiscreteOperator, phi: np.ndarray, e) -> list[np.ndarray]:
    """Edge fluxes ``c_i (e_i + D_i phi)``."""
    e = _direction(e, op.grid.dim)
    return [
        c * (e[k] + (d @ phi.ravel()).reshape(c.shape))
        for k, (d, c) in enumerate(zip(op.gradients, op.conductances))
    ]


def flux_curl(fluxes: list[np.ndarray], spacing) -> np.ndarray:
    """``d_2 F_1 - d_1 F_2`` on the dual (cell-centre) nodes of a periodic 2D grid."""
    f1, f2 = fluxes
    hx, hy = spacing
    return (np.roll(f1, -1, axis=1) - f1) / hy - (np.roll(f2, -1, axis=0) - f2) / hx


def solve_flux_corrector(
    field: CoefficientField, phis: list[np.ndarray], m: int, resolution: int = 16,
    operator: DiscreteOperator | None = None, tol: float = 1e-12,
) -> list[np.ndarray]:
    """Skew flux corrector ``S_12`` per direction (2D); empty list in 1D.

    ``S_12[i, j]`` lives at the dual node ``(x_i + h/2, y_j + h/2)`` and solves
    the periodic problem ``Lap S_12 = d_2 F_1 - d_1 F_2``.
    """
    dim = len(phis)
    if dim == 1:
        return []
    op = operator or cell_operator(field, m, resolution, dim)
    lap = constant_operator(np.eye(dim), op.grid, "periodic").matrix
    out = []
    for k, phi in enumerate(phis):
        rhs = flux_curl(corrected_fluxes(op, phi, k), op.grid.spacing)
        if abs(rhs.mean()) > 1e-10 * max(1.0, np.max(np.abs(rhs))):
            raise SolverError("curl of the corrected flux has nonzero mean (assembly bug)")
        if not np.any(np.abs(rhs) > 1e-14):
            out.append(np.zeros(op.node_shape))
            continue
        s, _, _ = pcg_mean_zero(lap, -rhs.ravel(), tol)
        out.append(s.reshape(op.node_shape))
    return out


def dual_to_nodes(s: np.ndarray) -> np.ndarray:
    """Average dual-node values onto primal nodes (periodic 2D)."""
    return 0.25 * (s + np.roll(s, 1, 0) + np.roll(s, 1, 1) + np.roll(np.roll(s, 1, 0), 1, 1))


@dataclass
class CorrectorSet:
    """Correctors, flux correctors and coarsened matrix on the cube of index ``m``."""

    m: int
    resolution: int
    field: CoefficientField
    correctors: list
    flux_correctors: list
    abar: np.ndarray
    grid: Grid
    sublinearity: float = 0.0

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def side(self) -> float:
        return float(3**self.m)

    def evaluate(self, k: int, y) -> np.ndarray:
        """Periodic (multi)linear interpolation of ``phi_{m,e_k}`` at cube coordinates ``y``."""
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        phi = self.correctors[k]
        n = phi.shape
        h = self.grid.spacing
        s = [np.mod(y[:, j] - self.grid.lower[j], self.side) / h[j] for j in range(self.dim)]
        i0 = [np.floor(sj).astype(int) for sj in s]
        t = [sj - ij for sj, ij in zip(s, i0)]
        if self.dim == 1:
            a, b = phi[i0[0] % n[0]], phi[(i0[0] + 1) % n[0]]
            return (1 - t[0]) * a + t[0] * b
        ix0, iy0 = i0[0] % n[0], i0[1] % n[1]
        ix1, iy1 = (ix0 + 1) % n[0], (iy0 + 1) % n[1]
        tx, ty = t
        return (
            (1 - tx) * (1 - ty) * phi[ix0, iy0] + tx * (1 - ty) * phi[ix1, iy0]
            + (1 - tx) * ty * phi[ix0, iy1] + tx * ty * phi[ix1, iy1]
        )

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "resolution": self.resolution,
            "field": self.field.to_dict(),
            "abar": np.asarray(self.abar).tolist(),
            "sublinearity": float(self.sublinearity),
            "correctors": [np.asarray(p).tolist() for p in self.correctors],
            "flux_correctors": [np.asarray(s).tolist() for s in self.flux_correctors],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "CorrectorSet":
        field = CoefficientField.from_dict(data["field"])
        phis = [np.asarray(p, dtype=float) for p in data["correctors"]]
        grid = cube_grid(int(data["m"]), int(data["resolution"]), phis[0].ndim)
        return cls(
            int(data["m"]), int(data["resolution"]), field, phis,
            [np.asarray(s, dtype=float) for s in data["flux_correctors"]],
            np.asarray(data["abar"], dtype=float), grid, float(data["sublinearity"]),
        )


def correctors(field: CoefficientField, m: int, resolution: int = 16, dim: int = 1, tol: float = 1e-12) -> CorrectorSet:
    """Solve all ``d`` correctors and flux correctors on the cube of index ``m``."""
    op = cell_operator(field, m, resolution, dim)
    phis = [solve_corrector(field, m, k, resolution, dim, op, tol) for k in range(dim)]
    svals = solve_flux_corrector(field, phis, m, resolution, op, tol)
    abar = _flux_average(op, phis)
    norms = 0.0
    for k in range(dim):
        mag = np.abs(phis[k])
        if svals:
            mag = mag + math.sqrt(2.0) * np.abs(dual_to_nodes(svals[k]))
        norms += float(np.sqrt(np.mean(mag**2)))
    return CorrectorSet(m, resolution, field, phis, svals, abar, op.grid, norms / 3**m)


def _flux_average(op: DiscreteOperator, phis) -> np.ndarray:
    dim = op.grid.dim
    abar = np.zeros((dim, dim))
    for k, phi in enumerate(phis):
        for i, flux in enumerate(corrected_fluxes(op, phi, k)):
            abar[i, k] = flux.mean()
    return 0.5 * (abar + abar.T)


def energy_matrix(field: CoefficientField, m: int, resolution: int = 16, dim: int = 1) -> np.ndarray:
    """Dirichlet energy form: ``(a_m)_ij`` = cell average of ``grad v_i . a grad v_j`` with ``v_i = x_i`` on the boundary."""
    grid = cube_grid(m, resolution, dim)
    op = assemble(_realize(field, m), grid, 1.0, "dirichlet")
    a = op.matrix
    i, b = op.interior_index(), op.boundary_index()
    lu = spla.splu(a[i][:, i].tocsc())
    pts = grid.points()
    vs = []
    for k in range(dim):
        v = pts[:, k].copy()
        v[i] = lu.solve(-(a[i][:, b] @ v[b]))
        vs.append(v)
    grads = [[d @ v for d in op.gradients] for v in vs]
    vol = float(np.prod(grid.lengths))
    out = np.zeros((dim, dim))
    for p in range(dim):
        for q in range(dim):
            out[p, q] = sum(
                np.sum(c.ravel() * gp * gq) for c, gp, gq in zip(op.conductances, grads[p], grads[q])
            ) * grid.cell_volume / vol
    return 0.5 * (out + out.T)


def coarsened_matrix(field: CoefficientField, m: int, method: str = "flux-average", resolution: int = 16, dim: int = 1) -> np.ndarray:
    if method == "flux-average":
        op = cell_operator(field, m, resolution, dim)
        phis = [solve_corrector(field, m, k, resolution, dim, op) for k in range(dim)]
        return _flux_average(op, phis)
    if method == "energy":
        return energy_matrix(field, m, resolution, dim)
    raise InvalidInputError(f"unknown method {method!r}")


# ---------------------------------------------------------- error functional


def matrix_gap(a, b) -> float:
    """Spectral norm of ``a - b``."""
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"matrix shapes differ: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b, 2))


def error_functional(
    field: CoefficientField, eps: float, abar, resolution: int = 16, dim: int = 1,
    details: bool = False,
):
    """``|abar_m - abar| + 3**-m sum_k || |S^(e_k)| + |phi_{m,e_k}| ||`` with ``m = ceil(-log_3 eps)``."""
    m = scale_index(eps)
    cs = correctors(field, m, resolution, dim)
    gap = matrix_gap(cs.abar, abar)
    value = gap + cs.sublinearity
    if details:
        return value, {"m": m, "abar_m": cs.abar.tolist(), "abar_gap": gap, "sublinearity": cs.sublinearity}
    return value


@dataclass
class ErrorCurve:
    """Sampled error functional ``eps -> E(eps)`` with its reference matrix."""

    abar: np.ndarray
    eps: list
    values: list
    ms: list = dc_field(default_factory=list)
    seed: int | None = None
    nu: float = 1.0
    alpha: float = 0.5
    sigma: float = 0.1
    algebraic: bool = False
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        order = np.argsort(self.eps)
        self.eps = [float(self.eps[i]) for i in order]
        self.values = [float(self.values[i]) for i in order]
        if self.ms:
            self.ms = [int(self.ms[i]) for i in order]
        if len(self.eps) == 0:
            raise InvalidInputError("empty error curve")
        if any(v < 0 for v in self.values):
            raise InvalidInputError("error values must be nonnegative")

    def satisfies_algebraic(self, nu: float | None = None, slack: float = 0.05) -> bool:
        """``s**-nu E(s) <= t**-nu E(t)`` for stored ``s <= t``, within ``slack``."""
        nu = self.nu if nu is None else nu
        g = np.asarray(self.values) * np.asarray(self.eps) ** (-nu)
        return all(g[i] <= (1 + slack) * g[j] + 1e-300 for i in range(len(g)) for j in range(i, len(g)))

    def is_monotone(self, slack: float = 0.05) -> bool:
        v = np.asarray(self.values)
        return bool(np.all(v[:-1] <= (1 + slack) * v[1:] + 1e-300))

    def __call__(self, t: float, allow_extrapolation: bool | None = None) -> tuple[float, bool]:
        """Log-linear interpolation; returns ``(E(t), extrapolated)``."""
        eps, vals = np.asarray(self.eps), np.asarray(self.values)
        extrap = self.algebraic if allow_extrapolation is None else allow_extrapolation
        if t < eps[0] or t > eps[-1]:
            if not extrap:
                raise InsufficientDataError(f"t={t:g} outside curve range [{eps[0]:g}, {eps[-1]:g}]")
            ref = 0 if t < eps[0] else -1
            return float(vals[ref] * (t / eps[ref]) ** self.nu), True
        if len(eps) == 1:
            return float(vals[0]), False
        j = int(np.clip(np.searchsorted(eps, t) - 1, 0, len(eps) - 2))
        lo, hi = vals[j], vals[j + 1]
        w = (math.log(t) - math.log(eps[j])) / (math.log(eps[j + 1]) - math.log(eps[j]))
        if lo > 0 and hi > 0:
            return float(math.exp((1 - w) * math.log(lo) + w * math.log(hi))), False
        return float((1 - w) * lo + w * hi), False

    def to_dict(self) -> dict:
        return {
            "abar": np.asarray(self.abar).tolist(),
            "eps": list(self.eps),
            "values": list(self.values),
            "m": list(self.ms),
            "seed": self.seed,
            "nu": self.nu,
            "alpha": self.alpha,
            "sigma": self.sigma,
            "algebraic": self.algebraic,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorCurve":
        return cls(
            np.asarray(d["abar"]), d["eps"], d["values"], d.get("m", []), d.get("seed"),
            d.get("nu", 1.0), d.get("alpha", 0.5), d.get("sigma", 0.1), d.get("algebraic", False),
            d.get("meta", {}),
        )

    def write_csv(self, path) -> None:
        ms = self.ms or [scale_index(e) for e in self.eps]
        seed = "" if self.seed is None else self.seed
        write_rows_csv(path, ["epsilon", "E", "m", "seed"],
                       [(e, v, m, seed) for e, v, m in zip(self.eps, self.values, ms)])


def error_curve(
    field: CoefficientField, eps_list, abar, resolution: int = 16, dim: int = 1,
    shift=None, seed: int | None = None, nu: float = 1.0, threads: int = 1,
    abar_source: str = "analytic",
) -> ErrorCurve:
    """Evaluate ``E`` over ``eps_list``; ``shift`` evaluates the translated functional ``E(eps, x)``."""
    f = field.translated(shift) if shift is not None else field

    def one(eps):
        return error_functional(f, eps, abar, resolution, dim, details=True)

    eps_list = [float(e) for e in eps_list]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, eps_list))
    else:
        results = [one(e) for e in eps_list]
    values = [r[0] for r in results]
    ms = [r[1]["m"] for r in results]
    curve = ErrorCurve(
        np.atleast_2d(abar), eps_list, values, ms, seed, nu,
        meta={
            "norm": "spectral",
            "interpolation": "log-linear",
            "resolution": resolution,
            "abar_source": abar_source,
            "shift": None if shift is None else list(np.atleast_1d(shift).astype(float)),
            "flux_corrector_norm": "frobenius",
        },
    )
    curve.algebraic = curve.satisfies_algebraic(nu)
    return curve


def minimal_scale(curve: ErrorCurve, sigma: float, alpha: float, eps: float, return_info: bool = False):
    """``R = inf{ r > 0 : E(eps / r)**alpha < sigma }`` on the (interpolated) curve."""
    if not (0 < sigma <= 1 and 0 < alpha <= 1 and eps > 0):
        raise InvalidInputError("need sigma, alpha in (0, 1] and eps > 0")
    target = sigma ** (1.0 / alpha)
    vals = np.asarray(curve.values)
    ts = np.asarray(curve.eps)
    if np.all(vals == 0):
        return (0.0, False) if return_info else 0.0
    extrapolated = False
    if vals[-1] < target:
        # E stays below the threshold on the whole curve: the crossing lies at larger t.
        if not curve.algebraic:
            raise InsufficientDataError("crossing above the curve range and no algebraic rate")
        t_star = ts[-1] * (target / vals[-1]) ** (1.0 / curve.nu)
        extrapolated = True
    elif vals[0] >= target:
        if not curve.algebraic or vals[0] == 0:
            raise InsufficientDataError("crossing below the curve range and no algebraic rate")
        t_star = ts[0] * (target / vals[0]) ** (1.0 / curve.nu)
        extrapolated = True
    else:
        # bisection on log r over the covered range
        lo, hi = math.log(eps / ts[-1]), math.log(eps / ts[0])
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if curve(eps / math.exp(mid), False)[0] < target:
                hi = mid
            else:
                lo = mid
            if hi - lo < 1e-14:
                break
        r = math.exp(hi)
        return (r, False) if return_info else r
    r = eps / t_star
    return (r, extrapolated) if return_info else r


def ensemble_abar(phases, m: int, seeds, resolution: int = 8, dim: int = 2, threads: int = 1) -> np.ndarray:
    """Coarsened matrices of random checkerboards on the cube ``m``, one per seed."""
    from .field import make_checkerboard

    def one(seed):
        f = make_checkerboard(seed, phases, 3**m)
        return coarsened_matrix(f, m, "flux-average", resolution, dim)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return np.array(list(pool.map(one, seeds)))
    return np.array([one(s) for s in seeds])
