"""Closed-form one-dimensional obstacle problems with oscillating coefficients.

Contact-point problem: ``(a(x/eps) u')' = chi_{u > 0}`` on ``(0, 4)``, ``u(0) = 0``,
``u(4) = 1``.  The free boundary ``alpha_eps`` is the unique root of
``int_0^4 (x - alpha)_+ / a(x/eps) dx = 1`` and the homogenized point is
``4 - sqrt(2 abar)`` with ``abar`` the harmonic mean of ``a``.

Fixed-obstacle problem: obstacle ``1/2 - x**2`` on ``(-1, 1)`` with zero boundary
values; the left contact point solves
``2 x a(x/eps) int_{-1}^x a^{-1}(t/eps) dt + 1/2 - x**2 = 0``.

Integrals of ``a^{-1}`` over many periods are reduced to one period: exact
breakpoint splitting for piecewise-constant profiles, adaptive quadrature
otherwise (adaptive quadrature for a full period, Gauss-Legendre for
partial periods).
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate

from .errors import InfeasibleError, InvalidInputError
from .field import CoefficientField

LEFT, RIGHT = 0.0, 4.0
QUAD_TOL = 1e-12
GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(48)


class InversePrimitive:
    """Primitives ``P0(y) = int_0^y a^{-1}`` and ``P1(y) = int_0^y t a^{-1}(t) dt`` of a period-1 profile.

    ``P(N + s)`` splits into whole periods, summed in closed form, and a
    partial period ``s in [0, 1)``.
    """

    def __init__(self, field: CoefficientField, quad_tol: float = QUAD_TOL):
        if not field.is_periodic:
            raise InvalidInputError("closed forms need a periodic 1D profile")
        self.field = field
        self.quad_tol = quad_tol
        self._pieces = self._piecewise_table()
        if self._pieces is None:
            self.i0 = self._quad(lambda t: 1.0 / self.a(t)[0], 0.0, 1.0)
            self.i1 = self._quad(lambda t: t / self.a(t)[0], 0.0, 1.0)
        else:
            self.i0, self.i1 = self._partial_piecewise(np.array([1.0]))
            self.i0, self.i1 = float(self.i0[0]), float(self.i1[0])

    def a(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return self.field.diag_at(y[:, None])[:, 0]

    def _quad(self, fn, lo, hi):
        val, _ = integrate.quad(fn, lo, hi, epsabs=self.quad_tol, epsrel=self.quad_tol, limit=400)
        return val

    def _piecewise_table(self):
        f = self.field
        o = f.origin[0] if f.origin else 0.0
        if f.kind == "constant":
            return np.array([0.0]), np.array([1.0 / f.phases[0][0]])
        if f.kind == "layered-1d":
            starts = np.mod(np.asarray(f.breaks) - o, 1.0)
            vals = np.array([1.0 / p[0] for p in f.phases])
        elif f.kind == "periodic-cell" and np.asarray(f.cell_values).ndim == 1:
            cv = np.asarray(f.cell_values)
            starts = np.mod(np.arange(len(cv)) / len(cv) - o, 1.0)
            vals = np.array([1.0 / f.phases[i][0] for i in cv])
        else:
            return None
        order = np.argsort(starts)
        starts, vals = starts[order], vals[order]
        if starts[0] > 0:
            # the piece straddling 0 wraps from the last start
            starts = np.concatenate([[0.0], starts])
            vals = np.concatenate([[vals[-1]], vals])
        return starts, vals

    def _partial_piecewise(self, s):
        starts, vals = self._pieces
        ends = np.concatenate([starts[1:], [1.0]])
        lo = np.minimum(starts[None, :], s[:, None])
        hi = np.minimum(ends[None, :], s[:, None])
        p0 = np.sum(vals * (hi - lo), axis=1)
        p1 = np.sum(vals * 0.5 * (hi**2 - lo**2), axis=1)
        return p0, p1

    def partial(self, s):
        """``(int_0^s a^{-1}, int_0^s t a^{-1})`` for ``s in [0, 1]``."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if self._pieces is not None:
            return self._partial_piecewise(s)
        # smooth periodic profiles: Gauss-Legendre on [0, s] is spectrally accurate
        t = 0.5 * s[:, None] * (GL_NODES[None, :] + 1.0)
        inv = 1.0 / self.a(t.ravel()).reshape(t.shape)
        w = 0.5 * s[:, None] * GL_WEIGHTS[None, :]
        return np.sum(w * inv, axis=1), np.sum(w * t * inv, axis=1)

    def primitives(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        n = np.floor(y)
        p0s, p1s = self.partial(y - n)
        p0 = n * self.i0 + p0s
        p1 = self.i0 * n * (n - 1) / 2 + n * self.i1 + n * p0s + p1s
        return p0, p1

    @property
    def harmonic_mean(self) -> float:
        return 1.0 / self.i0

    def scaled_moments(self, x0, x1, eps):
        """``(int_{x0}^{x1} a^{-1}(t/eps) dt, int_{x0}^{x1} t a^{-1}(t/eps) dt)``."""
        a0, a1 = self.primitives(np.asarray(x0, dtype=float) / eps)
        b0, b1 = self.primitives(np.asarray(x1, dtype=float) / eps)
        return eps * (b0 - a0), eps**2 * (b1 - a1)


def homogenized_coefficient(field: CoefficientField) -> float:
    """Harmonic mean of a periodic 1D profile."""
    return InversePrimitive(field).harmonic_mean


def _bisect(fn, lo, hi, tol=1e-14, max_iter=200):
    flo = fn(lo)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def solvability(field: CoefficientField, eps: float, alpha: float, prim: InversePrimitive | None = None) -> float:
    """``F(alpha) = int_alpha^4 (t - alpha) a^{-1}(t/eps) dt - 1`` (strictly decreasing)."""
    prim = prim or InversePrimitive(field)
    m0, m1 = prim.scaled_moments(alpha, RIGHT, eps)
    return float(m1[0] - alpha * m0[0] - 1.0)


def alpha_eps(field: CoefficientField, eps: float, quad_tol: float = QUAD_TOL) -> float:
    """Free-boundary point of the contact-point problem by bisection on ``F``."""
    if eps <= 0:
        raise InvalidInputError("eps must be positive")
    prim = InversePrimitive(field, quad_tol)
    fn = lambda a: solvability(field, eps, a, prim)  # noqa: E731
    if fn(LEFT) < 0 or fn(RIGHT) > 0:
        raise InfeasibleError("no root of F on (0, 4)")
    return _bisect(fn, LEFT, RIGHT, tol=max(quad_tol * 1e-2, 1e-15))


def alpha_bar(abar: float) -> float:
    return RIGHT - math.sqrt(2.0 * abar)


def u_bar(x, abar: float):
    """Homogenized contact-point solution ``(x - alpha_bar)_+**2 / (2 abar)``."""
    x = np.asarray(x, dtype=float)
    return np.maximum(x - alpha_bar(abar), 0.0) ** 2 / (2.0 * abar)


def u_eps(x, field: CoefficientField, eps: float, alpha: float | None = None, quad_tol: float = QUAD_TOL):
    """Heterogeneous contact-point solution ``int_alpha^x (t - alpha) a^{-1}(t/eps) dt`` for ``x > alpha``."""
    prim = InversePrimitive(field, quad_tol)
    if alpha is None:
        alpha = alpha_eps(field, eps, quad_tol)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xx = np.maximum(x, alpha)
    m0, m1 = prim.scaled_moments(np.full_like(xx, alpha), xx, eps)
    return np.where(x > alpha, m1 - alpha * m0, 0.0)


def example2_residual(x, field: CoefficientField, eps: float, prim: InversePrimitive | None = None):
    """``2 x a(x/eps) int_{-1}^x a^{-1}(t/eps) dt + 1/2 - x**2``."""
    prim = prim or InversePrimitive(field)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p_left = prim.primitives(np.array([-1.0 / eps]))[0][0]
    m0 = eps * (prim.primitives(x / eps)[0] - p_left)
    return 2.0 * x * prim.a(x / eps) * m0 + 0.5 - x**2


def example2_fixed_obstacle(field: CoefficientField, eps: float, quad_tol: float = QUAD_TOL, scan: int | None = None) -> float:
    """Contact point of the fixed-obstacle problem closest to ``-1``.

    A scan over ``(-1, 0)`` locates the first sign change of the residual;
    bisection then refines it.  The scan runs in blocks and stops at the
    first block holding a sign change.
    """
    if eps <= 0:
        raise InvalidInputError("eps must be positive")
    prim = InversePrimitive(field, quad_tol)
    # root pairs can sit ~2% of a period apart; resolve each period finely
    n = scan or max(4001, int(256 / eps))
    xs = np.linspace(-1.0, 0.0, n)
    block = 1 << 15
    for start in range(0, n, block):
        # overlap one node with the previous block so no sign change is skipped
        lo = max(start - 1, 0)
        r = example2_residual(xs[lo:start + block], field, eps, prim)
        change = np.flatnonzero(np.sign(r[:-1]) != np.sign(r[1:]))
        if change.size:
            j = lo + int(change[0])
            if r[j - lo] == 0:
                return float(xs[j])
            return _bisect(lambda v: float(example2_residual(v, field, eps, prim)[0]), xs[j], xs[j + 1])
    raise InfeasibleError("fixed-obstacle residual has no sign change on (-1, 0)")


def oned_sweep(field: CoefficientField, eps_list, n_dense: int = 4096, quad_tol: float = QUAD_TOL) -> list[dict]:
    """Rows ``(epsilon, alpha_eps, alpha_bar, gap, linf_gap)`` for the contact-point problem."""
    abar = homogenized_coefficient(field)
    ab = alpha_bar(abar)
    xs = np.linspace(LEFT, RIGHT, n_dense)
    rows = []
    for eps in eps_list:
        a = alpha_eps(field, eps, quad_tol)
        ue = u_eps(xs, field, eps, a, quad_tol)
        rows.append({
            "epsilon": float(eps),
            "alpha_eps": a,
            "alpha_bar": ab,
            "gap": abs(a - ab),
            "linf_gap": float(np.max(np.abs(ue - u_bar(xs, abar)))),
        })
    return rows
