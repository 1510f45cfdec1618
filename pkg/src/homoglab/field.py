"""Coefficient fields, structured grids and divergence-form operator assembly.

A :class:`CoefficientField` describes a symmetric, diagonal, uniformly
elliptic matrix field ``a(y)`` with eigenvalues in ``[1, lam]``.  The
heterogeneous operator ``-div(a(x/eps) grad)`` is discretized on a uniform
:class:`Grid` by a conservative finite-volume stencil: each edge carries a
conductance obtained by harmonic averaging along the edge and arithmetic
averaging across its dual face.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInputError, OutOfExtentError

KINDS = ("constant", "layered-1d", "periodic-cell", "checkerboard-random", "smooth-1d")
BCS = ("dirichlet", "periodic")

_ELLIPTIC_SLACK = 1e-12


# --------------------------------------------------------------------- grid


@dataclass(frozen=True)
class Grid:
    """Uniform node grid on an interval or rectangle, endpoints included."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        counts = tuple(int(v) for v in np.atleast_1d(self.counts))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "counts", counts)
        if not (len(lower) == len(upper) == len(counts)) or len(counts) not in (1, 2):
            raise InvalidInputError("grid must be 1D or 2D with matching corner/count lengths")
        if any(n < 3 for n in counts):
            raise InvalidInputError("need at least 3 nodes per axis")
        if any(u <= l for l, u in zip(lower, upper)):
            raise InvalidInputError("upper corner must exceed lower corner")

    @classmethod
    def uniform(cls, lower, upper, count, dim=1):
        return cls((lower,) * dim, (upper,) * dim, (count,) * dim)

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((u - l) / (n - 1) for l, u, n in zip(self.lower, self.upper, self.counts))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(u - l for l, u in zip(self.lower, self.upper))

    def axes(self) -> list[np.ndarray]:
        return [l + h * np.arange(n) for l, h, n in zip(self.lower, self.spacing, self.counts)]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij")

    def points(self) -> np.ndarray:
        """Node coordinates as an ``(size, dim)`` array in C order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=1)

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for k in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[k] = 0
            mask[tuple(idx)] = True
            idx[k] = -1
            mask[tuple(idx)] = True
        return mask

    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask()

    def trapezoid_weights(self) -> np.ndarray:
        """Nodal quadrature weights (trapezoid rule, tensorized)."""
        w = np.ones(self.shape)
        for k, h in enumerate(self.spacing):
            wk = np.full(self.counts[k], h)
            wk[[0, -1]] *= 0.5
            shape = [1] * self.dim
            shape[k] = -1
            w = w * wk.reshape(shape)
        return w

    def contains_ball(self, center, radius, slack=1e-12) -> bool:
        c = np.atleast_1d(np.asarray(center, dtype=float))
        return all(
            c[k] - radius >= self.lower[k] - slack and c[k] + radius <= self.upper[k] + slack
            for k in range(self.dim)
        )

    def distance_squared(self, center) -> np.ndarray:
        c = np.atleast_1d(np.asarray(center, dtype=float))
        return sum((m - c[k]) ** 2 for k, m in enumerate(self.mesh()))

    def nearest_index(self, point) -> tuple[int, ...]:
        p = np.atleast_1d(np.asarray(point, dtype=float))
        return tuple(
            int(np.clip(round((p[k] - self.lower[k]) / self.spacing[k]), 0, self.counts[k] - 1))
            for k in range(self.dim)
        )

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "counts": list(self.counts)}


# ------------------------------------------------------------------- fields


def _mix64(x):
    """splitmix64 finalizer on uint64 arrays."""
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def _cell_hash(seed: int, cells: np.ndarray) -> np.ndarray:
    """Counter-based hash of ``(seed, z)`` for integer cell indices ``z``."""
    with np.errstate(over="ignore"):
        h = _mix64(np.full(cells.shape[0], seed & 0xFFFFFFFFFFFFFFFF, dtype=np.uint64))
        for k in range(cells.shape[1]):
            z = cells[:, k].astype(np.int64).view(np.uint64)
            h = _mix64(h ^ z)
    return h


def _as_diag(phase) -> tuple[float, ...]:
    arr = np.asarray(phase, dtype=float)
    if arr.ndim == 0:
        return (float(arr),)
    if arr.ndim == 1:
        return tuple(float(v) for v in arr)
    if arr.ndim == 2 and arr.shape[0] == arr.shape[1]:
        if not np.allclose(arr, arr.T, atol=0, rtol=0):
            raise InvalidInputError("phase matrix is not symmetric")
        if np.any(arr - np.diag(np.diag(arr))):
            raise InvalidInputError("only diagonal phase matrices are supported")
        return tuple(float(v) for v in np.diag(arr))
    raise InvalidInputError(f"cannot interpret phase {phase!r}")


def _nested_tuple(a):
    a = np.asarray(a)
    if a.ndim == 1:
        return tuple(int(v) for v in a)
    return tuple(_nested_tuple(row) for row in a)


@dataclass(frozen=True)
class CoefficientField:
    """Diagonal elliptic coefficient field on the reference (unit-period) scale.

    ``phases`` holds the diagonal of each phase matrix; a phase with a single
    entry is isotropic and broadcasts to any dimension.  ``origin`` shifts the
    field, ``a'(y) = a(y + origin)``, which realizes the translated error
    functional.
    """

    kind: str
    lam: float
    phases: tuple[tuple[float, ...], ...] = ()
    breaks: tuple[float, ...] = ()
    cell_values: tuple = ()
    seed: int = 0
    extent: int = 0
    mean: float = 0.0
    amplitude: float = 0.0
    origin: tuple[float, ...] = dc_field(default=())

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown field kind {self.kind!r}")
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "phases", tuple(_as_diag(p) for p in self.phases))
        object.__setattr__(self, "breaks", tuple(float(b) for b in self.breaks))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "extent", int(self.extent))
        cv = self.cell_values
        object.__setattr__(self, "cell_values", _nested_tuple(cv) if len(cv) else ())
        self._validate()

    def _validate(self):
        if self.lam < 1:
            raise InvalidInputError("ellipticity bound lam must be >= 1")
        if self.kind == "smooth-1d":
            lo, hi = self.mean - abs(self.amplitude), self.mean + abs(self.amplitude)
            if lo < 1 - _ELLIPTIC_SLACK or hi > self.lam + _ELLIPTIC_SLACK:
                raise InvalidInputError("smooth field leaves [1, lam]")
            return
        if not self.phases:
            raise InvalidInputError("phase list is empty")
        for p in self.phases:
            if min(p) < 1 - _ELLIPTIC_SLACK or max(p) > self.lam + _ELLIPTIC_SLACK:
                raise InvalidInputError(f"phase {p} violates ellipticity bounds [1, {self.lam}]")
        n = len(self.phases)
        if self.kind == "constant" and n != 1:
            raise InvalidInputError("constant field takes exactly one phase")
        if self.kind == "layered-1d":
            b = np.asarray(self.breaks)
            if len(b) != n or b[0] != 0.0 or np.any(np.diff(b) <= 0) or b[-1] >= 1:
                raise InvalidInputError("layer breaks must start at 0, increase, and stay below 1")
        if self.kind == "periodic-cell":
            cv = np.asarray(self.cell_values)
            if cv.size == 0 or cv.ndim not in (1, 2) or cv.min() < 0 or cv.max() >= n:
                raise InvalidInputError("cell_values must index into the phase list")
        if self.kind == "checkerboard-random" and self.extent < 1:
            raise InvalidInputError("extent must be >= 1")

    # ---------------------------------------------------------- sampling

    @property
    def is_periodic(self) -> bool:
        return self.kind != "checkerboard-random"

    def translated(self, shift) -> "CoefficientField":
        shift = np.atleast_1d(np.asarray(shift, dtype=float))
        base = np.zeros(max(len(shift), len(self.origin)))
        base[: len(self.origin)] += self.origin
        base[: len(shift)] += shift
        return _replace(self, origin=tuple(base))

    def _shifted(self, y: np.ndarray) -> np.ndarray:
        if not self.origin:
            return y
        o = np.zeros(y.shape[1])
        n = min(len(self.origin), y.shape[1])
        o[:n] = self.origin[:n]
        return y + o

    def diag_at(self, y) -> np.ndarray:
        """Diagonal entries of ``a(y)`` for points ``y`` of shape ``(n, d)``."""
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        d = y.shape[1]
        y = self._shifted(y)
        if self.kind == "smooth-1d":
            v = self.mean + self.amplitude * np.sin(2 * np.pi * y[:, 0])
            return np.repeat(v[:, None], d, axis=1)
        idx = self._phase_index(y)
        table = np.array([p * d if len(p) == 1 else p[:d] for p in self.phases], dtype=float)
        if table.shape[1] != d:
            raise InvalidInputError(f"phase dimension does not match point dimension {d}")
        return table[idx]

    def _phase_index(self, y: np.ndarray) -> np.ndarray:
        if self.kind == "constant":
            return np.zeros(len(y), dtype=int)
        if self.kind == "layered-1d":
            s = y[:, 0] - np.floor(y[:, 0])
            return np.searchsorted(np.asarray(self.breaks), s, side="right") - 1
        if self.kind == "periodic-cell":
            cv = np.asarray(self.cell_values)
            s = y - np.floor(y)
            ii = []
            for k in range(cv.ndim):
                ii.append(np.minimum((s[:, k] * cv.shape[k]).astype(int), cv.shape[k] - 1))
            return cv[tuple(ii)]
        # checkerboard-random: tiles of [-extent/2, extent/2)^d
        half = self.extent / 2.0
        k = np.floor(y + half)
        if np.any(k < 0) or np.any(k >= self.extent):
            raise OutOfExtentError(
                f"point outside realized extent [-{half}, {half}) of random field"
            )
        z = k.astype(np.int64) - self.extent // 2
        h = _cell_hash(self.seed, z)
        u = (h >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return np.minimum((u * len(self.phases)).astype(int), len(self.phases) - 1)

    # ----------------------------------------------------------- JSON

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "lambda": self.lam,
            "phases": [list(p) for p in self.phases],
            "breaks": list(self.breaks),
            "cell_values": np.asarray(self.cell_values).tolist() if len(self.cell_values) else [],
            "seed": self.seed,
            "extent": self.extent,
            "mean": self.mean,
            "amplitude": self.amplitude,
            "origin": list(self.origin),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CoefficientField":
        if "kind" not in data:
            raise InvalidInputError("field description needs a 'kind'")
        phases = data.get("phases", [])
        lam = data.get("lambda")
        if lam is None:
            lam = max([max(_as_diag(p)) for p in phases] or [data.get("mean", 1) + abs(data.get("amplitude", 0))])
        return cls(
            kind=data["kind"],
            lam=lam,
            phases=tuple(phases),
            breaks=tuple(data.get("breaks", ())),
            cell_values=data.get("cell_values", ()),
            seed=data.get("seed", 0),
            extent=data.get("extent", 0),
            mean=float(data.get("mean", 0.0)),
            amplitude=float(data.get("amplitude", 0.0)),
            origin=tuple(data.get("origin", ())),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CoefficientField":
        return cls.from_dict(json.loads(text))


def _replace(f: CoefficientField, **changes) -> CoefficientField:
    data = dict(
        kind=f.kind, lam=f.lam, phases=f.phases, breaks=f.breaks, cell_values=f.cell_values,
        seed=f.seed, extent=f.extent, mean=f.mean, amplitude=f.amplitude, origin=f.origin,
    )
    data.update(changes)
    return CoefficientField(**data)


def constant_field(value=1.0, lam=None) -> CoefficientField:
    diag = _as_diag(value)
    return CoefficientField("constant", lam if lam is not None else max(max(diag), 1.0), phases=(diag,))


def layered_field(values, breaks=None, lam=None) -> CoefficientField:
    """Period-1 layers in the first coordinate; equal widths by default."""
    values = list(values)
    if breaks is None:
        breaks = [k / len(values) for k in range(len(values))]
    diags = [_as_diag(v) for v in values]
    lam = lam if lam is not None else max(max(d) for d in diags)
    return CoefficientField("layered-1d", lam, phases=tuple(diags), breaks=tuple(breaks))


def periodic_cell_field(cell_values, phases, lam=None) -> CoefficientField:
    diags = [_as_diag(v) for v in phases]
    lam = lam if lam is not None else max(max(d) for d in diags)
    return CoefficientField("periodic-cell", lam, phases=tuple(diags), cell_values=cell_values)


def smooth_field(mean=1.5, amplitude=0.5, lam=None) -> CoefficientField:
    """Isotropic ``mean + amplitude * sin(2 pi y_1)``."""
    lam = lam if lam is not None else mean + abs(amplitude)
    return CoefficientField("smooth-1d", lam, mean=mean, amplitude=amplitude)


def make_checkerboard(seed: int, phase_values, extent: int, lam=None) -> CoefficientField:
    """Random checkerboard: each unit tile draws a phase uniformly, keyed on (seed, tile)."""
    phase_values = list(phase_values)
    if not phase_values:
        raise InvalidInputError("phase list is empty")
    diags = [_as_diag(v) for v in phase_values]
    lam = lam if lam is not None else max(max(d) for d in diags)
    return CoefficientField("checkerboard-random", lam, phases=tuple(diags), seed=seed, extent=extent)


def sample_field(field: CoefficientField, x, eps: float) -> np.ndarray:
    """Return the matrix ``a(x / eps)`` at a single point."""
    if eps <= 0:
        raise InvalidInputError("eps must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return np.diag(field.diag_at(x[None, :] / eps)[0])


# ---------------------------------------------------------------- operators


def _difference_1d(n: int, h: float, periodic: bool) -> sp.csr_matrix:
    if periodic:
        d = sp.diags([-np.ones(n), np.ones(n - 1)], [0, 1], shape=(n, n), format="lil")
        d[n - 1, 0] = 1.0
        return (d.tocsr() / h).tocsr()
    return (sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n)) / h).tocsr()


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Finite-volume discretization of ``-div(a grad)``.

    Dirichlet operators act on every grid node (the interior block is SPD);
    periodic operators act on the unique nodes, i.e. every axis with its
    last node dropped.  ``conductances[k]`` holds the edge weights along
    axis ``k`` in the layout of ``gradients[k]``.
    """

    grid: Grid
    bc: str
    conductances: tuple[np.ndarray, ...]

    @property
    def node_shape(self) -> tuple[int, ...]:
        if self.bc == "periodic":
            return tuple(n - 1 for n in self.grid.counts)
        return self.grid.shape

    @cached_property
    def gradients(self) -> list[sp.csr_matrix]:
        shape = self.node_shape
        periodic = self.bc == "periodic"
        out = []
        for k in range(self.grid.dim):
            mats = [sp.identity(n, format="csr") for n in shape]
            mats[k] = _difference_1d(shape[k], self.grid.spacing[k], periodic)
            m = mats[0]
            for other in mats[1:]:
                m = sp.kron(m, other, format="csr")
            out.append(m)
        return out

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        a = None
        for d, c in zip(self.gradients, self.conductances):
            term = d.T @ sp.diags(c.ravel()) @ d
            a = term if a is None else a + term
        return a.tocsr()

    def fluxes(self, u: np.ndarray) -> list[np.ndarray]:
        """Edge fluxes ``c_k * D_k u`` (the discrete ``a grad u``)."""
        u = self.restrict(u).ravel()
        return [
            (c.ravel() * (d @ u)).reshape(c.shape)
            for d, c in zip(self.gradients, self.conductances)
        ]

    def restrict(self, u: np.ndarray) -> np.ndarray:
        """Map a full-grid array to the operator's node layout."""
        u = np.asarray(u, dtype=float)
        if self.bc == "periodic" and u.shape == self.grid.shape:
            return u[tuple(slice(0, n - 1) for n in self.grid.counts)]
        return u.reshape(self.node_shape)

    def extend(self, u: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`restrict` for periodic layouts (wraps the last node)."""
        if self.bc != "periodic":
            return np.asarray(u).reshape(self.grid.shape)
        u = np.asarray(u).reshape(self.node_shape)
        return np.pad(u, [(0, 1)] * u.ndim, mode="wrap")

    def apply(self, u: np.ndarray) -> np.ndarray:
        v = self.restrict(u)
        return (self.matrix @ v.ravel()).reshape(self.node_shape)

    def interior_index(self) -> np.ndarray:
        return np.flatnonzero(self.grid.interior_mask().ravel())

    def boundary_index(self) -> np.ndarray:
        return np.flatnonzero(self.grid.boundary_mask().ravel())


def _edge_samples(grid: Grid, axis: int, bc: str, q: int) -> tuple[np.ndarray, tuple[int, ...]]:
    """Sample points for every edge along ``axis``.

    Returns points of shape ``(n_edges, q_along, q_across**(d-1), d)`` and the
    edge-array shape.
    """
    h = grid.spacing
    axes = grid.axes()
    periodic = bc == "periodic"
    base = []
    for k in range(grid.dim):
        n = grid.counts[k] - 1 if periodic else (grid.counts[k] - 1 if k == axis else grid.counts[k])
        base.append(axes[k][:n])
    eshape = tuple(len(b) for b in base)
    mesh = np.meshgrid(*base, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    frac = (np.arange(q) + 0.5) / q
    along = frac * h[axis]
    across_dims = [k for k in range(grid.dim) if k != axis]
    if across_dims:
        offsets = np.stack(
            np.meshgrid(*[(frac - 0.5) * h[k] for k in across_dims], indexing="ij"), axis=-1
        ).reshape(-1, len(across_dims))
    else:
        offsets = np.zeros((1, 0))
    out = np.repeat(pts[:, None, None, :], q, axis=1)
    out = np.repeat(out, len(offsets), axis=2)
    out[:, :, :, axis] += along[None, :, None]
    for j, k in enumerate(across_dims):
        out[:, :, :, k] += offsets[None, None, :, j]
    for k in range(grid.dim):
        lo, length = grid.lower[k], grid.lengths[k]
        if periodic:
            out[..., k] = lo + np.mod(out[..., k] - lo, length)
        else:
            out[..., k] = np.clip(out[..., k], lo, grid.upper[k])
    return out, eshape


def assemble(field: CoefficientField, grid: Grid, eps: float, bc: str = "dirichlet", samples: int = 2) -> DiscreteOperator:
    """Assemble ``-div(a(x/eps) grad)`` on ``grid``.

    Edge conductance along axis ``k`` is the harmonic mean of ``a_kk`` over
    ``samples`` points along the edge, each first averaged arithmetically
    over ``samples`` points across the dual face.  With layer interfaces on
    grid nodes this is exact for 1D piecewise-constant media.
    """
    if bc not in BCS:
        raise InvalidInputError(f"unknown boundary condition {bc!r}")
    if eps <= 0:
        raise InvalidInputError("eps must be positive")
    conds = []
    for axis in range(grid.dim):
        pts, eshape = _edge_samples(grid, axis, bc, samples)
        vals = field.diag_at(pts.reshape(-1, grid.dim) / eps)[:, axis].reshape(pts.shape[:3])
        across = vals.mean(axis=2)
        cond = 1.0 / np.mean(1.0 / across, axis=1)
        conds.append(cond.reshape(eshape))
    return DiscreteOperator(grid, bc, tuple(conds))


def constant_operator(abar, grid: Grid, bc: str = "dirichlet") -> DiscreteOperator:
    """Operator for a constant diagonal matrix ``abar`` (off-diagonals ignored)."""
    abar = np.atleast_2d(np.asarray(abar, dtype=float))
    diag = np.diag(abar) if abar.shape[0] == grid.dim else np.full(grid.dim, abar[0, 0])
    lam = max(float(np.max(diag)), 1.0)
    return assemble(CoefficientField("constant", lam, phases=(tuple(diag),)), grid, 1.0, bc)


def harmonic_profile_1d(field: CoefficientField, grid: Grid, eps: float) -> np.ndarray:
    """Discrete ``a``-harmonic profile with ``u(lower)=0``, ``u(upper)=1`` (1D).

    Uses the assembled conductances: the flux is constant, so each increment
    is proportional to the edge resistance ``1/c``.
    """
    if grid.dim != 1:
        raise InvalidInputError("1D only")
    c = assemble(field, grid, eps).conductances[0]
    inc = 1.0 / c
    return np.concatenate([[0.0], np.cumsum(inc)]) / inc.sum()


def field_volume_fraction(field: CoefficientField, phase: int) -> float:
    """Exact volume fraction of a phase in a unit period (periodic kinds)."""
    if field.kind == "constant":
        return 1.0 if phase == 0 else 0.0
    if field.kind == "layered-1d":
        b = list(field.breaks) + [1.0]
        return b[phase + 1] - b[phase]
    if field.kind == "periodic-cell":
        cv = np.asarray(field.cell_values)
        return float(np.mean(cv == phase))
    raise InvalidInputError(f"no exact volume fraction for {field.kind}")


__all__ = [
    "KINDS", "Grid", "CoefficientField", "DiscreteOperator", "assemble", "sample_field",
    "make_checkerboard", "constant_field", "layered_field", "periodic_cell_field", "smooth_field",
    "constant_operator", "harmonic_profile_1d", "field_volume_fraction",
]
