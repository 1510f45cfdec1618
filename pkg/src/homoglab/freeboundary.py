"""Free-boundary diagnostics for normalized obstacle problems.

Contact sets and free boundaries on the grid, contact density in balls,
minimum diameter (convex-hull width), best fit by half-space solutions
``(lam/2) (e.(x - x0) + t)_+**2 / (e.abar e)``, large-scale regular-point
classification and flatness tables.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np
from scipy import optimize
from scipy.spatial.distance import directed_hausdorff

from .cell import ErrorCurve, minimal_scale
from .errors import InvalidParameterError, PreconditionError
from .field import Grid
from .gridfunc import write_rows_csv
from .rates import fit_rate

N_ANGLES = 720
ANGLE_TOL = 1e-4


# ---------------------------------------------------------- contact sets
@dataclass
class ContactSet:
    """Contact mask (interior nodes) and free-boundary mask on a grid."""

    grid: Grid
    mask: np.ndarray
    free_boundary: np.ndarray
    threshold: float

    def fb_points(self) -> np.ndarray:
        return self.grid.points()[self.free_boundary.ravel()]

    def contact_points(self) -> np.ndarray:
        return self.grid.points()[self.mask.ravel()]

    def write_csv(self, path) -> None:
        pts = self.grid.points()
        names = ["x", "y"][: self.grid.dim]
        rows = [
            [*map(float, p), int(c), int(b)]
            for p, c, b in zip(pts, self.mask.ravel(), self.free_boundary.ravel())
        ]
        write_rows_csv(path, names + ["contact", "free_boundary"], rows)


def _neighbor_any(pos: np.ndarray) -> np.ndarray:
    """True where some axis neighbor (2 in 1D, 4 in 2D) is True."""
    out = np.zeros_like(pos)
    for k in range(pos.ndim):
        lo = [slice(None)] * pos.ndim
        hi = [slice(None)] * pos.ndim
        lo[k], hi[k] = slice(0, -1), slice(1, None)
        out[tuple(lo)] |= pos[tuple(hi)]
        out[tuple(hi)] |= pos[tuple(lo)]
    return out


def extract_contact(u, grid: Grid, threshold: float) -> ContactSet:
    """Contact set ``{u <= threshold}`` on interior nodes and its free boundary.

    A contact node belongs to the free boundary when one of its axis
    neighbors has ``u > threshold``.
    """
    u = np.asarray(u, dtype=float).reshape(grid.shape)
    if np.any(u < -threshold - 1e-14):
        raise PreconditionError("u must be nonnegative up to the threshold")
    pos = u > threshold
    mask = ~pos & grid.interior_mask()
    return ContactSet(grid, mask, mask & _neighbor_any(pos), float(threshold))


def ball_volume(r: float, dim: int) -> float:
    return 2.0 * r if dim == 1 else math.pi * r * r


def _ball(grid: Grid, center, r: float) -> np.ndarray:
    center = np.asarray(center, dtype=float).reshape(-1)
    if not grid.contains_ball(center, r):
        raise InvalidParameterError(f"ball of radius {r:g} leaves the grid")
    return grid.distance_squared(center) <= r * r


def contact_density(cs: ContactSet, center, r: float) -> float:
    """``#(contact nodes in B_r) h^d / |B_r|``."""
    inside = _ball(cs.grid, center, r)
    count = np.count_nonzero(cs.mask & inside)
    return float(min(count * cs.grid.cell_volume / ball_volume(r, cs.grid.dim), 1.0))


# -------------------------------------------------------------- mindiam
def convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain hull in counter-clockwise order; collinear input gives its two ends."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def hull_width(points: np.ndarray) -> float:
    """Width of a planar point set: minimum over hull edges of the farthest hull point."""
    hull = convex_hull(points)
    if len(hull) <= 2:
        return 0.0
    edges = np.roll(hull, -1, axis=0) - hull
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    normals = np.stack([-edges[:, 1], edges[:, 0]], axis=1) / lengths[:, None]
    # distance of every hull vertex j from the line through edge i
    dist = np.abs(np.einsum("ijk,ik->ij", hull[None, :, :] - hull[:, None, :], normals))
    return float(np.min(np.max(dist, axis=1)))


def mindiam(cs: ContactSet, center, r: float) -> float:
    """Smallest slab width enclosing the contact nodes in ``B_r(center)``."""
    inside = _ball(cs.grid, center, r) & cs.mask
    pts = cs.grid.points()[inside.ravel()]
    if len(pts) < 2:
        return 0.0
    if cs.grid.dim == 1:
        return float(np.ptp(pts[:, 0]))
    return hull_width(pts)


# ---------------------------------------------------- half-space fitting
@dataclass
class HalfSpaceSolution:
    direction: np.ndarray
    offset: float
    lam: float
    abar: np.ndarray
    origin: np.ndarray = dc_field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.direction = np.asarray(self.direction, dtype=float).reshape(-1)
        self.abar = np.atleast_2d(np.asarray(self.abar, dtype=float))
        self.origin = np.asarray(self.origin, dtype=float).reshape(-1)[: len(self.direction)]
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-12:
            raise InvalidParameterError("direction must be a unit vector")

    @property
    def stiffness(self) -> float:
        return float(self.direction @ self.abar @ self.direction)

    def __call__(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, len(self.direction))
        s = (pts - self.origin) @ self.direction + self.offset
        return 0.5 * self.lam * np.maximum(s, 0.0) ** 2 / self.stiffness

    @property
    def angle(self) -> float:
        return float(math.atan2(self.direction[-1], self.direction[0]))

    def to_dict(self) -> dict:
        return {
            "direction": self.direction.tolist(),
            "offset": float(self.offset),
            "lambda": float(self.lam),
            "abar": self.abar.tolist(),
            "origin": self.origin.tolist(),
        }


def _unit(theta: float) -> np.ndarray:
    return np.array([math.cos(theta), math.sin(theta)])


def _golden_min(fn, lo: float, hi: float, tol: float) -> tuple[float, float]:
    """Bounded scalar minimization (Brent's method with golden-section steps)."""
    res = optimize.minimize_scalar(fn, bounds=(lo, hi), method="bounded", options={"xatol": tol})
    return float(res.x), float(res.fun)


def halfspace_fit(u, grid: Grid, center, r: float, lam: float, abar, allow_offset: bool = False):
    """Best half-space solution in the max norm on ``B_r(center)``.

    Directions are scanned on a 720-point circle and refined by bounded
    scalar minimization; offsets (when allowed) likewise on ``[-r, r]``,
    alternating with direction refinement.  Returns ``(solution, error)``.
    """
    center = np.asarray(center, dtype=float).reshape(-1)
    inside = _ball(grid, center, r).ravel()
    rel = grid.points()[inside] - center
    vals = np.asarray(u, dtype=float).ravel()[inside]
    abar = np.atleast_2d(np.asarray(abar, dtype=float))
    if grid.dim == 1:
        abar = abar[:1, :1]

    def err(e, t):
        s = rel @ e + t
        return float(np.max(np.abs(vals - 0.5 * lam * np.maximum(s, 0.0) ** 2 / (e @ abar @ e))))

    if grid.dim == 1:
        cands = []
        for sign in (1.0, -1.0):
            e = np.array([sign])
            t = _golden_min(lambda v: err(e, v), -r, r, 1e-10)[0] if allow_offset else 0.0
            cands.append((err(e, t), e, t))
        best = min(cands, key=lambda c: c[0])
        return HalfSpaceSolution(best[1], best[2], lam, abar, center), best[0]

    thetas = 2 * math.pi * np.arange(N_ANGLES) / N_ANGLES
    errs = np.array([err(_unit(th), 0.0) for th in thetas])
    theta = float(thetas[int(np.argmin(errs))])
    step = 2 * math.pi / N_ANGLES
    t = 0.0
    for _ in range(3 if allow_offset else 1):
        theta, _ = _golden_min(lambda th: err(_unit(th), t), theta - step, theta + step, ANGLE_TOL * 1e-2)
        if not allow_offset:
            break
        t, _ = _golden_min(lambda v: err(_unit(theta), v), -r, r, 1e-10)
    theta = math.atan2(math.sin(theta), math.cos(theta))
    e = _unit(theta)
    return HalfSpaceSolution(e, t, lam, abar, center), err(e, t)


# ------------------------------------------------------- regular points
@dataclass(frozen=True)
class RegularityParams:
    theta: float = 0.3
    gamma: float = 0.25
    r0: float = 0.25
    sigma: float = 0.1
    alpha: float = 0.5
    beta: float = 0.25

    def __post_init__(self):
        for name in ("theta", "gamma", "r0", "sigma", "alpha", "beta"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise InvalidParameterError(f"{name} must lie in (0, 1)")
        if self.gamma > self.r0:
            raise InvalidParameterError("gamma must not exceed r0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RegularityParams":
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass
class RegularityReport:
    is_regular: bool
    density: float
    minimal_scale: float
    r_used: float
    windows: list
    params: RegularityParams
    extrapolated: bool = False

    def to_dict(self) -> dict:
        return {
            "is_regular": bool(self.is_regular),
            "density": float(self.density),
            "minimal_scale": float(self.minimal_scale),
            "r_used": float(self.r_used),
            "windows": self.windows,
            "params": self.params.to_dict(),
            "extrapolated": bool(self.extrapolated),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _require_fb_point(cs: ContactSet, center) -> None:
    idx = cs.grid.nearest_index(center)
    node = cs.grid.points()[np.ravel_multi_index(idx, cs.grid.shape)]
    if np.max(np.abs(node - np.asarray(center, dtype=float))) > 0.5 * max(cs.grid.spacing) or not cs.free_boundary[idx]:
        raise PreconditionError("center is not a free-boundary node")


def classify_regular(
    u,
    grid: Grid,
    center,
    params: RegularityParams | None = None,
    curve: ErrorCurve | None = None,
    eps: float | None = None,
    threshold: float = 0.0,
    n_radii: int = 8,
    n_scales: int = 12,
    min_ball_nodes: float = 4.0,
) -> RegularityReport:
    """Large-scale regular-point test.

    The point is regular if for some ``r`` in ``[R / gamma, r0]`` the contact
    density stays ``>= theta`` on every radius ``s`` of a geometric sequence
    spanning ``[gamma r, r / gamma]``.  ``R`` is the minimal scale of the
    error curve (taken as 0 without a curve); the smallest ball radius is
    kept at ``min_ball_nodes`` grid spacings.
    """
    params = params or RegularityParams()
    cs = extract_contact(u, grid, threshold)
    _require_fb_point(cs, center)
    if not grid.contains_ball(center, params.r0 / params.gamma):
        raise InvalidParameterError("largest density ball leaves the grid")
    big_r, extrapolated = 0.0, False
    if curve is not None:
        if eps is None:
            raise InvalidParameterError("eps is required with an error curve")
        big_r, extrapolated = minimal_scale(curve, params.sigma, params.alpha, eps, return_info=True)
    # below a few grid spacings a ball holds only a handful of nodes
    r_lo = max(big_r, min_ball_nodes * max(grid.spacing)) / params.gamma
    windows = []
    best = (-1.0, float("nan"))
    if r_lo <= params.r0:
        rs = np.geomspace(r_lo, params.r0, n_radii) if r_lo < params.r0 else [params.r0]
        for r in rs:
            ss = np.geomspace(params.gamma * r, r / params.gamma, n_scales)
            dens = min(contact_density(cs, center, s) for s in ss)
            windows.append({"r": float(r), "min_density": float(dens)})
            if dens > best[0]:
                best = (dens, float(r))
    density, r_used = best
    return RegularityReport(density >= params.theta, max(density, 0.0), big_r, r_used, windows, params, extrapolated)


def flatness_decay(u, grid: Grid, center, radii, lam: float, abar) -> list[dict]:
    """Rows ``(r, flatness, e_x, e_y)`` with ``flatness = min_h ||u - h||_inf(B_r) / r**2`` over ``t = 0``."""
    rows = []
    for r in radii:
        sol, err = halfspace_fit(u, grid, center, r, lam, abar)
        e = sol.direction
        rows.append({
            "r": float(r),
            "flatness": err / r**2,
            "e_x": float(e[0]),
            "e_y": float(e[1]) if len(e) > 1 else 0.0,
        })
    return rows


def fb_distance(cs1: ContactSet, cs2: ContactSet) -> float:
    """Symmetric Hausdorff distance between free-boundary node sets."""
    p, q = cs1.fb_points(), cs2.fb_points()
    if len(p) == 0 and len(q) == 0:
        return 0.0
    if len(p) == 0 or len(q) == 0:
        return math.inf
    return float(max(directed_hausdorff(p, q)[0], directed_hausdorff(q, p)[0]))


def fb_location_1d(u, grid: Grid, threshold: float = 0.0) -> float:
    """Sub-grid free-boundary point of a 1D solution that is positive to the right.

    Near a regular free boundary ``u`` grows quadratically, so ``sqrt(u)`` is
    linearly extrapolated from the first two positive nodes.
    """
    u = np.asarray(u, dtype=float).ravel()
    x = grid.axes()[0]
    contact = np.flatnonzero((u <= threshold) & grid.interior_mask())
    if contact.size == 0:
        raise PreconditionError("no contact nodes")
    i = int(contact[-1])
    if i + 2 >= len(u):
        return float(x[i])
    s1, s2 = math.sqrt(u[i + 1]), math.sqrt(u[i + 2])
    if s2 <= s1:
        return float(x[i])
    root = x[i + 1] - s1 * (x[i + 2] - x[i + 1]) / (s2 - s1)
    return float(min(max(root, x[i]), x[i + 1]))


def quadratic_decay(u, grid: Grid, center, radii):
    """Rate fit of ``sup_{B_r} u`` against ``r``; slopes near 2 indicate quadratic growth."""
    sups = [float(np.max(np.asarray(u).ravel()[_ball(grid, center, r).ravel()])) for r in radii]
    return fit_rate(radii, sups)


def mindiam_bound_holds(cs: ContactSet, center, r: float, const: float = 4.0) -> tuple[bool, float, float]:
    """Check ``2 >= mindiam/r >= density/d - const*h/r``; returns ``(ok, ratio, density)``."""
    ratio = mindiam(cs, center, r) / r
    dens = contact_density(cs, center, r)
    slack = const * max(cs.grid.spacing) / r
    return (ratio <= 2.0 + slack and ratio >= dens / cs.grid.dim - slack), ratio, dens


def write_flatness_csv(path, rows) -> None:
    write_rows_csv(path, ["r", "flatness", "e_x", "e_y"], [[r["r"], r["flatness"], r["e_x"], r["e_y"]] for r in rows])
