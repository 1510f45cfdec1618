"""Experiment orchestration: configuration, runs and report files.

Every run writes CSV tables, a JSON summary that embeds the complete
resolved configuration, and SVG figures.  Outputs depend only on the
configuration; thread counts change scheduling but never results.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import fixtures, plotting
from .cell import coarsened_matrix, correctors, ensemble_abar, error_curve, minimal_scale
from .errors import InsufficientDataError, InvalidInputError, InvalidParameterError, PreconditionError
from .field import CoefficientField, Grid, constant_field, layered_field, make_checkerboard
from .freeboundary import (
    RegularityParams,
    classify_regular,
    contact_density,
    extract_contact,
    fb_location_1d,
    flatness_decay,
    halfspace_fit,
    mindiam,
    write_flatness_csv,
)
from .gridfunc import write_rows_csv, write_solution_csv
from .homogenize import SWEEP_COLUMNS, homogenization_sweep
from .oned import alpha_eps, example2_fixed_obstacle, homogenized_coefficient, oned_sweep
from .rates import fit_rate
from .vi import ObstacleProblem, default_tol, solve_vi

MIN_NODES_PER_PERIOD = 4

KINDS = ("solve", "cell", "homogenize-sweep", "fb-diagnostics", "oned-rates", "example2")

FIXTURE_FIELDS = {
    "constant": lambda: constant_field(1.0),
    "layered-12": fixtures.layered_12,
    "smooth": fixtures.smooth_periodic,
    "inclusion": fixtures.inclusion_field,
    "corner": fixtures.corner_field,
}

DEFAULT_EPS = {
    "solve": [1 / 16],
    "cell": [3.0**-k for k in range(1, 5)],
    "homogenize-sweep": [1 / 4, 1 / 8, 1 / 16, 1 / 32, 1 / 64],
    "fb-diagnostics": [1 / 32],
    "oned-rates": [3.0**-k for k in range(2, 8)],
    "example2": [3.0**-k for k in range(2, 8)],
}


@dataclass
class ExperimentConfig:
    """Resolved experiment configuration (all defaults explicit)."""

    kind: str
    field: dict | None = None
    fixture: str | None = None
    dim: int = 1
    resolution: int | None = None
    eps: list = dc_field(default_factory=list)
    seeds: list = dc_field(default_factory=lambda: [0])
    tol: float | None = None
    lam: float = 1.0
    angle: float = math.pi / 6
    m: int = 1
    cell_resolution: int = 8
    abar: list | None = None
    regularity: dict = dc_field(default_factory=lambda: RegularityParams().to_dict())
    threads: int = 1
    out: str = "out"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if not self.eps:
            self.eps = list(DEFAULT_EPS[self.kind])
        self.eps = [float(e) for e in self.eps]
        if self.resolution is None:
            self.resolution = 4097 if self.dim == 1 else 257
        self.seeds = [int(s) for s in self.seeds]
        self.regularity = {**RegularityParams().to_dict(), **self.regularity}
        self.validate()

    def validate(self) -> None:
        if any(not 0 < e < 1 for e in self.eps) and self.kind != "solve":
            raise InvalidInputError("eps values must lie in (0, 1)")
        if any(e <= 0 for e in self.eps):
            raise InvalidInputError("eps values must be positive")
        n = self.resolution - 1
        if n < 2 or n & (n - 1):
            raise InvalidInputError("resolution must be a power of two plus one")
        if self.dim not in (1, 2):
            raise InvalidInputError("dim must be 1 or 2")
        if self.field is not None and self.fixture is not None:
            raise InvalidInputError("give either field or fixture, not both")
        if self.fixture is not None and self.fixture not in FIXTURE_FIELDS:
            raise InvalidInputError(f"unknown fixture {self.fixture!r}; known: {sorted(FIXTURE_FIELDS)}")
        if self.threads < 1:
            raise InvalidInputError("threads must be >= 1")
        if not self.seeds:
            raise InvalidInputError("need at least one seed")
        RegularityParams.from_dict(self.regularity)
        if self.kind in ("solve", "homogenize-sweep", "fb-diagnostics"):
            length = 4.0 if self.dim == 1 else 1.0
            h = length / (self.resolution - 1)
            if h > min(self.eps) / MIN_NODES_PER_PERIOD + 1e-15:
                raise InvalidParameterError(
                    f"grid spacing {h:g} does not resolve eps={min(self.eps):g} "
                    f"(need at least {MIN_NODES_PER_PERIOD} nodes per period)"
                )

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        if "kind" not in data:
            raise InvalidInputError("config needs a 'kind'")
        return cls(**data)

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise InvalidInputError("config must be a JSON object")
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    def coefficient_field(self, seed: int = 0) -> CoefficientField:
        if self.field is not None:
            f = CoefficientField.from_dict(self.field)
            if f.kind == "checkerboard-random":
                f = make_checkerboard(seed, f.phases, f.extent, f.lam)
            return f
        if self.fixture is not None:
            return FIXTURE_FIELDS[self.fixture]()
        return layered_field([1.0, 2.0])

    @property
    def params(self) -> RegularityParams:
        return RegularityParams.from_dict(self.regularity)


# ---------------------------------------------------------------- output
def _write_json(path, data) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(data), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def reference_abar(cfg: ExperimentConfig, field: CoefficientField) -> tuple[np.ndarray, str]:
    """Reference homogenized matrix and its provenance."""
    d = cfg.dim
    if cfg.abar is not None:
        return np.atleast_2d(np.asarray(cfg.abar, dtype=float)), "config"
    if field.kind == "constant":
        return np.diag(field.diag_at(np.zeros((1, d)))[0]), "analytic"
    if field.kind in ("layered-1d", "smooth-1d"):
        hm = homogenized_coefficient(field)
        if d == 1:
            return np.array([[hm]]), "analytic"
        if field.kind == "layered-1d":
            widths = np.diff(np.concatenate([field.breaks, [1.0]]))
            arith = float(sum(w * p[-1] for w, p in zip(widths, field.phases)))
            return np.diag([hm, arith]), "analytic"
    if field.is_periodic:
        return correctors(field, 0, 64, d).abar, "computed:flux-average,m=0,resolution=64"
    mats = ensemble_abar(field.phases, cfg.m, cfg.seeds, cfg.cell_resolution, d, cfg.threads)
    return mats.mean(axis=0), f"computed:ensemble-mean,m={cfg.m},seeds={len(cfg.seeds)}"


def _solve_problem(cfg: ExperimentConfig, field: CoefficientField, eps: float, abar) -> ObstacleProblem:
    if cfg.dim == 1:
        return fixtures.interval_problem(field, eps, 4.0 / (cfg.resolution - 1))
    return fixtures.flat_problem(field, eps, cfg.resolution, abar, cfg.angle, cfg.lam)


def _summary(cfg: ExperimentConfig, **extra) -> dict:
    return {
        "config": cfg.to_dict(),
        "defaults": {
            "solver_tol_1d": 1e-10,
            "solver_tol_2d": 1e-8,
            "omega": 1.8,
            "contact_threshold": "10 * tol * max|u|",
            "regularity": cfg.params.to_dict(),
        },
        **extra,
    }


# ----------------------------------------------------------- experiments
def run_solve(cfg: ExperimentConfig, out: Path) -> dict:
    field = cfg.coefficient_field(cfg.seeds[0])
    abar, source = reference_abar(cfg, field) if cfg.dim == 2 else (np.eye(1), "unused")
    rows = []
    for i, eps in enumerate(cfg.eps):
        prob = _solve_problem(cfg, field, eps, abar)
        u, rep = solve_vi(prob, tol=cfg.tol)
        write_solution_csv(out / f"solution_{i}.csv", prob.grid, u, rep.active)
        plotting.heatmap(out / f"solution_{i}.svg", prob.grid, u, rep.active, f"eps = {eps:g}")
        row = {"epsilon": eps, "report": rep.to_dict(timing=False)}
        if cfg.dim == 1:
            row["free_boundary"] = fb_location_1d(u, prob.grid, 10 * rep.tol * max(np.max(np.abs(u)), 1e-300))
        rows.append(row)
    return _summary(cfg, abar=abar, abar_source=source, solves=rows)


def run_cell(cfg: ExperimentConfig, out: Path) -> dict:
    curves, per_seed = [], []
    base = cfg.coefficient_field(cfg.seeds[0])
    abar, source = reference_abar(cfg, base)
    seeds = cfg.seeds if base.kind == "checkerboard-random" else cfg.seeds[:1]
    for seed in seeds:
        field = cfg.coefficient_field(seed)
        if field.kind == "checkerboard-random":
            need = 3 ** max(math.ceil(-math.log(e, 3) - 1e-9) for e in cfg.eps)
            field = make_checkerboard(seed, field.phases, max(field.extent, need), field.lam)
        curve = error_curve(field, cfg.eps, abar, cfg.cell_resolution, cfg.dim, seed=seed,
                            threads=cfg.threads, abar_source=source)
        curves.append(curve)
        flux = coarsened_matrix(field, cfg.m, "flux-average", cfg.cell_resolution, cfg.dim)
        energy = coarsened_matrix(field, cfg.m, "energy", cfg.cell_resolution, cfg.dim)
        per_seed.append({"seed": seed, "abar_flux": flux, "abar_energy": energy, "curve": curve.to_dict()})
    rows = [(e, v, m, c.seed) for c in curves for e, v, m in zip(c.eps, c.values, c.ms)]
    write_rows_csv(out / "error_curve.csv", ["epsilon", "E", "m", "seed"], rows)
    mean_vals = np.mean([c.values for c in curves], axis=0)
    fit = None
    if len(cfg.eps) >= 3 and np.all(mean_vals > 0):
        fit = fit_rate(curves[0].eps, mean_vals).to_dict()
    _write_json(out / "slopes.json", {"E_vs_eps": fit})
    plotting.loglog(out / "error_curve.svg", {f"seed {c.seed}": (c.eps, c.values) for c in curves},
                    "epsilon", "E(epsilon)")
    cs = correctors(cfg.coefficient_field(cfg.seeds[0]) if base.is_periodic else
                    make_checkerboard(cfg.seeds[0], base.phases, 3**cfg.m, base.lam),
                    cfg.m, cfg.cell_resolution, cfg.dim)
    with open(out / "corrector_set.json", "w", encoding="utf-8") as fh:
        fh.write(cs.to_json())
        fh.write("\n")
    scales = {}
    try:
        p = cfg.params
        scales = {str(e): minimal_scale(curves[0], p.sigma, p.alpha, e) for e in (1e-2, 1e-3)}
    except InsufficientDataError as exc:
        scales = {"error": str(exc)}
    return _summary(cfg, abar=abar, abar_source=source, seeds=per_seed, fit=fit,
                    minimal_scale=scales, ensemble_mean_E=mean_vals.tolist())


def run_homogenize_sweep(cfg: ExperimentConfig, out: Path) -> dict:
    field = cfg.coefficient_field(cfg.seeds[0])
    abar, source = reference_abar(cfg, field)
    prob = _solve_problem(cfg, field, cfg.eps[0], abar)
    results = homogenization_sweep(prob, field, cfg.eps, abar, cfg.tol, cfg.seeds[0], cfg.threads)
    write_rows_csv(out / "sweep.csv", SWEEP_COLUMNS, [r.row() for r in results])
    fits = {}
    for key in SWEEP_COLUMNS[1:5]:
        vals = [r.norms[key] for r in results]
        fits[key] = fit_rate(cfg.eps, vals).to_dict() if len(vals) >= 3 and min(vals) > 0 else None
    _write_json(out / "slopes.json", fits)
    plotting.loglog(out / "sweep.svg", {k: (cfg.eps, [r.norms[k] for r in results]) for k in SWEEP_COLUMNS[1:5]},
                    "epsilon", "gap")
    return _summary(cfg, abar=abar, abar_source=source, fits=fits, pairs=[r.to_dict() for r in results])


def run_fb_diagnostics(cfg: ExperimentConfig, out: Path) -> dict:
    field = cfg.coefficient_field(cfg.seeds[0])
    abar, source = reference_abar(cfg, field)
    eps = cfg.eps[0]
    prob = _solve_problem(cfg, field, eps, abar)
    grid = prob.grid
    u, rep = solve_vi(prob, tol=cfg.tol)
    threshold = 10 * rep.tol * max(float(np.max(np.abs(u))), 1e-300)
    cs = extract_contact(u, grid, threshold)
    cs.write_csv(out / "contact.csv")
    plotting.heatmap(out / "solution.svg", grid, u, cs.mask, f"eps = {eps:g}")
    center = np.zeros(grid.dim) if cfg.dim == 2 else np.array([2.5])
    x0 = fixtures.nearest_fb_node(cs.free_boundary, grid, center)
    p = cfg.params
    max_r = min(min(x0 - np.asarray(grid.lower)), min(np.asarray(grid.upper) - x0))
    radii = [r for r in np.geomspace(4 * max(grid.spacing), p.r0, 8) if r <= max_r]
    density = [{"r": float(r), "density": contact_density(cs, x0, r), "mindiam": mindiam(cs, x0, r)} for r in radii]
    write_rows_csv(out / "density.csv", ["r", "density", "mindiam"],
                   [[d["r"], d["density"], d["mindiam"]] for d in density])
    lam = cfg.lam if cfg.dim == 2 else 1.0
    rows = flatness_decay(u, grid, x0, radii, lam, abar)
    write_flatness_csv(out / "flatness.csv", rows)
    plotting.flatness(out / "flatness.svg", rows)
    fit, fit_err = halfspace_fit(u, grid, x0, radii[-1], lam, abar, allow_offset=True)
    try:
        cls = classify_regular(u, grid, x0, p, threshold=threshold).to_dict()
    except (InvalidParameterError, PreconditionError) as exc:
        cls = {"error": str(exc)}
    return _summary(cfg, abar=abar, abar_source=source, x0=x0, solve=rep.to_dict(timing=False), density=density,
                    halfspace={"solution": fit.to_dict(), "error": fit_err}, classification=cls, flatness=rows)


def run_oned_rates(cfg: ExperimentConfig, out: Path) -> dict:
    field = cfg.coefficient_field(cfg.seeds[0])
    rows = _map(lambda e: oned_sweep(field, [e])[0], cfg.eps, cfg.threads)
    cols = ["epsilon", "alpha_eps", "alpha_bar", "gap", "linf_gap"]
    write_rows_csv(out / "oned_sweep.csv", cols, [[r[c] for c in cols] for r in rows])
    fits = {
        "gap": fit_rate(cfg.eps, [r["gap"] for r in rows]).to_dict(),
        "linf_gap": fit_rate(cfg.eps, [r["linf_gap"] for r in rows]).to_dict(),
    } if len(rows) >= 3 else {}
    _write_json(out / "slopes.json", fits)
    plotting.loglog(out / "oned_rates.svg", {
        "|alpha_eps - alpha_bar|": (cfg.eps, [r["gap"] for r in rows]),
        "|u_eps - u_bar|_inf": (cfg.eps, [r["linf_gap"] for r in rows]),
    }, "epsilon", "gap")
    return _summary(cfg, abar=homogenized_coefficient(field), fits=fits, rows=rows)


def run_example2(cfg: ExperimentConfig, out: Path) -> dict:
    field = cfg.coefficient_field(cfg.seeds[0]) if (cfg.field or cfg.fixture) else fixtures.smooth_periodic()
    xs = _map(lambda e: example2_fixed_obstacle(field, e), cfg.eps, cfg.threads)
    als = _map(lambda e: alpha_eps(field, e), cfg.eps, cfg.threads)
    write_rows_csv(out / "example2.csv", ["epsilon", "x_eps", "alpha_eps"],
                   [[e, x, a] for e, x, a in zip(cfg.eps, xs, als)])
    plotting.loglog(out / "example2.svg", {
        "|x_eps - mean|": (cfg.eps, np.abs(np.asarray(xs) - np.mean(xs)) + 1e-16),
        "|alpha_eps - mean|": (cfg.eps, np.abs(np.asarray(als) - np.mean(als)) + 1e-16),
    }, "epsilon", "deviation")
    return _summary(cfg, field_used=field.to_dict(), x_eps=xs, alpha_eps=als,
                    spread_fixed_obstacle=float(np.ptp(xs)), spread_contact_point=float(np.ptp(als)))


RUNNERS = {
    "solve": run_solve,
    "cell": run_cell,
    "homogenize-sweep": run_homogenize_sweep,
    "fb-diagnostics": run_fb_diagnostics,
    "oned-rates": run_oned_rates,
    "example2": run_example2,
}


def run(cfg: ExperimentConfig) -> dict:
    """Run one experiment; writes files to ``cfg.out`` and returns the summary."""
    out = Path(cfg.out)
    os.makedirs(out, exist_ok=True)
    if cfg.tol is None:
        cfg.tol = default_tol(Grid.uniform(0.0, 1.0, 3, cfg.dim))
    summary = RUNNERS[cfg.kind](cfg, out)
    _write_json(out / "summary.json", summary)
    return summary


def error_report(exc: BaseException) -> dict:
    out = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("residual", "iterations"):
        if hasattr(exc, attr):
            out[attr] = getattr(exc, attr)
    return out


def write_error_report(out_dir, exc: BaseException) -> Path:
    out = Path(out_dir)
    os.makedirs(out, exist_ok=True)
    path = out / "error.json"
    _write_json(path, error_report(exc))
    return path
