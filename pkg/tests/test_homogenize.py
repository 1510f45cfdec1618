import math

import numpy as np
import pytest

from homoglab import fixtures
from homoglab.cell import correctors
from homoglab.errors import InvalidParameterError
from homoglab.field import Grid, constant_field, layered_field
from homoglab.gridfunc import h1_seminorm
from homoglab.homogenize import (
    SWEEP_COLUMNS,
    boundary_cutoff,
    c11_profile,
    corrected_affine_fit,
    edges_to_nodes,
    hminus1_norm,
    homogenization_sweep,
    mollify,
    solve_pair,
    tent_kernel,
    two_scale_expand,
)
from homoglab.vi import ObstacleProblem


# ----------------------------------------------------------------- H^{-1}
@pytest.mark.parametrize("n", [17, 33])
def test_hminus1_eigenfunction(n):
    g = Grid.uniform(0.0, 1.0, n, dim=2)
    h = g.spacing[0]
    x, y = g.mesh()
    w = np.sin(np.pi * x) * np.sin(2 * np.pi * y)
    mu = 4 / h**2 * (math.sin(math.pi * h / 2) ** 2 + math.sin(math.pi * h) ** 2)
    expected = math.sqrt(h * h * np.sum(w**2) / mu)
    assert hminus1_norm(w, g) == pytest.approx(expected, rel=1e-12)


def test_hminus1_ignores_boundary_and_scales():
    g = Grid.uniform(0.0, 1.0, 17, dim=1)
    w = np.random.default_rng(0).normal(size=17)
    v = w.copy()
    v[[0, -1]] = 100.0
    assert hminus1_norm(w, g) == pytest.approx(hminus1_norm(v, g), rel=1e-14)
    assert hminus1_norm(-3 * w, g) == pytest.approx(3 * hminus1_norm(w, g), rel=1e-12)
    assert hminus1_norm(np.zeros(17), g) == 0.0


def test_edges_to_nodes():
    g = Grid.uniform(0.0, 1.0, 4, dim=1)
    assert np.allclose(edges_to_nodes(np.array([1.0, 3.0, 5.0]), 0, g), [1.0, 2.0, 4.0, 5.0])


# ------------------------------------------------------------------- pair
def test_pair_with_constant_field_has_zero_gap():
    prob = fixtures.interval_problem(constant_field(1.5), 0.1, 1 / 64)
    res = solve_pair(prob, constant_field(1.5), 0.1, 1.5)
    assert all(v <= 1e-12 for v in res.norms.values())
    assert len(res.row()) == len(SWEEP_COLUMNS)


def test_pair_2d_constant():
    g = Grid.uniform(0.0, 1.0, 17, dim=2)
    prob = ObstacleProblem.build(constant_field(2.0), g, 1.0, f=1.0, g=lambda x, y: x * y)
    res = solve_pair(prob, constant_field(2.0), 0.25, 2 * np.eye(2))
    assert res.norms["linf_gap"] <= 1e-12
    d = res.to_dict()
    assert set(d["norms"]) == set(SWEEP_COLUMNS[1:5])
    assert all("wall_time" not in r for r in d["reports"])


def test_sweep_gaps_decrease():
    field = layered_field([1.0, 2.0])
    prob = fixtures.interval_problem(field, 1.0, 4 / 1024)
    eps = [1 / 4, 1 / 8, 1 / 16, 1 / 32]
    out = homogenization_sweep(prob, field, eps, 4 / 3)
    assert [r.eps for r in out] == eps
    for key in ("l2_gap", "hminus1_grad_gap", "hminus1_flux_gap"):
        vals = [r.norms[key] for r in out]
        assert all(b < a for a, b in zip(vals, vals[1:])), key


def test_sweep_threads_deterministic():
    field = layered_field([1.0, 2.0])
    prob = fixtures.interval_problem(field, 1.0, 4 / 512)
    a = homogenization_sweep(prob, field, [1 / 4, 1 / 8], 4 / 3)
    b = homogenization_sweep(prob, field, [1 / 4, 1 / 8], 4 / 3, threads=2)
    assert [r.row() for r in a] == [r.row() for r in b]


# ------------------------------------------------------------ two scales
def test_boundary_cutoff():
    g = Grid.uniform(0.0, 1.0, 101, dim=1)
    eta = boundary_cutoff(g, 0.1)
    x = g.axes()[0]
    assert np.all(eta[(x <= 0.1) | (x >= 0.9)] == 0)
    assert np.all(eta[(x >= 0.2) & (x <= 0.8)] == 1)
    assert np.all((eta >= 0) & (eta <= 1))


def test_mollifier_keeps_affine_functions_inside():
    assert tent_kernel(0.1, 0.01).sum() == pytest.approx(1.0)
    g = Grid.uniform(0.0, 1.0, 65, dim=2)
    x, y = g.mesh()
    u = 2 * x - y + 0.5
    m = mollify(u, g, 4 / 64)
    assert np.allclose(m[5:-5, 5:-5], u[5:-5, 5:-5], atol=1e-13)


def test_two_scale_validation():
    g = Grid.uniform(0.0, 1.0, 33, dim=1)
    cs = correctors(constant_field(), 0, 4, 1)
    u = np.zeros(33)
    with pytest.raises(InvalidParameterError):
        two_scale_expand(u, g, cs, 0.1, 1 / 64, 1 / 32)
    with pytest.raises(InvalidParameterError):
        two_scale_expand(u, g, cs, 0.1, 0.25, 0.2)
    assert np.array_equal(two_scale_expand(u + 1, g, cs, 0.1, 0.25, 1 / 16), u + 1)


def test_two_scale_expansion_improves_gradient():
    field = layered_field([1.0, 2.0])
    eps, h = 1 / 16, 4 / 2048
    prob = fixtures.interval_problem(field, eps, h)
    res = solve_pair(prob, field, eps, 4 / 3)
    cs = correctors(field, 0, 16, 1)
    w = two_scale_expand(res.u_hom, prob.grid, cs, eps, 0.25, 2 * h)
    assert h1_seminorm(res.u_eps - w, prob.grid) < 0.8 * h1_seminorm(res.u_eps - res.u_hom, prob.grid)


# ----------------------------------------------------------- affine fits
def test_affine_fit_exact():
    g = Grid.uniform(-1.0, 1.0, 41, dim=2)
    x, y = g.mesh()
    fit = corrected_affine_fit(0.3 + 2 * x - y, g, None, 0.1, [0.1, 0.0], 0.5)
    assert fit.c == pytest.approx(0.3) and np.allclose(fit.p, [2.0, -1.0])
    assert fit.residual <= 1e-12


def test_corrected_affine_fit_exact():
    field = fixtures.inclusion_field(3.0)
    cs = correctors(field, 0, 8, 2)
    g = Grid.uniform(-1.0, 1.0, 65, dim=2)
    eps = 0.25
    pts = g.points()
    p = np.array([1.0, -0.5])
    u = 0.2 + pts @ p + eps * sum(p[k] * cs.evaluate(k, pts / eps) for k in range(2))
    fit = corrected_affine_fit(u, g, cs, eps, [0.0, 0.0], 0.6)
    assert fit.residual <= 1e-10 and np.allclose(fit.p, p)
    plain = corrected_affine_fit(u, g, None, eps, [0.0, 0.0], 0.6)
    assert plain.residual > 1e-3


def test_affine_fit_ball_checks():
    g = Grid.uniform(-1.0, 1.0, 21, dim=2)
    with pytest.raises(InvalidParameterError):
        corrected_affine_fit(np.zeros(g.shape), g, None, 0.1, [0.9, 0.0], 0.5)
    with pytest.raises(InvalidParameterError):
        corrected_affine_fit(np.zeros(g.shape), g, None, 0.1, [0.0, 0.0], 0.01)


def test_c11_profile_quadratic():
    # the one-sided parabola is scale invariant: residual / r^2 is constant up to the mesh
    g = Grid.uniform(-1.0, 1.0, 321, dim=2)
    x, y = g.mesh()
    rows = c11_profile(np.maximum(x, 0) ** 2, g, None, 0.1, [0.0, 0.0], [0.4, 0.6, 0.8])
    assert [r["r"] for r in rows] == [0.4, 0.6, 0.8]
    norm = [r["normalized"] for r in rows]
    assert max(norm) / min(norm) <= 1.1
