import json
import math

import numpy as np
import pytest
import scipy.sparse as sp

from homoglab import fixtures
from homoglab.cell import (
    CorrectorSet,
    ErrorCurve,
    cell_operator,
    coarsened_matrix,
    corrected_fluxes,
    correctors,
    error_curve,
    error_functional,
    flux_curl,
    matrix_gap,
    minimal_scale,
    pcg_mean_zero,
    scale_index,
    solve_corrector,
)
from homoglab.errors import InsufficientDataError, InvalidInputError
from homoglab.field import constant_field, constant_operator, layered_field, make_checkerboard, periodic_cell_field


@pytest.mark.parametrize("eps,m", [(1.0, 0), (0.5, 1), (1 / 3, 1), (1 / 9, 2), (0.1, 3), (3.0**-7, 7)])
def test_scale_index(eps, m):
    assert scale_index(eps) == m


def test_pcg_matches_least_squares():
    op = cell_operator(periodic_cell_field([[0, 1], [1, 0]], [1.0, 3.0]), 0, 6, 2)
    a = op.matrix.toarray()
    b = np.random.default_rng(0).normal(size=a.shape[0])
    x, res, _ = pcg_mean_zero(sp.csr_matrix(a), b, tol=1e-13)
    ref = np.linalg.lstsq(a, b - b.mean(), rcond=None)[0]
    assert abs(x.mean()) <= 1e-12 and res <= 1e-13
    assert np.max(np.abs(x - (ref - ref.mean()))) <= 1e-9


def test_corrector_1d_closed_form():
    # flux is constant: a (1 + phi') = abar, so phi' = abar / a - 1
    field = layered_field([1.0, 2.0])
    cs = correctors(field, 0, 16, 1)
    phi = cs.correctors[0]
    x = cs.grid.axes()[0][:-1]
    slope = np.diff(np.append(phi, phi[0])) / cs.grid.spacing[0]
    a = field.diag_at((x + cs.grid.spacing[0] / 2)[:, None])[:, 0]
    assert np.max(np.abs(slope - (4 / 3 / a - 1))) <= 1e-10
    assert abs(phi.mean()) <= 1e-14
    assert cs.abar[0, 0] == pytest.approx(4 / 3, abs=1e-12)


def test_laminate_abar():
    abar = coarsened_matrix(layered_field([1.0, 2.0]), 0, resolution=16, dim=2)
    assert np.allclose(abar, np.diag([4 / 3, 3 / 2]), atol=1e-10)


def test_constant_field_has_zero_correctors():
    cs = correctors(constant_field(2.0), 1, 4, 2)
    assert all(np.all(p == 0) for p in cs.correctors)
    assert all(np.all(s == 0) for s in cs.flux_correctors)
    assert np.allclose(cs.abar, 2 * np.eye(2))
    assert error_functional(constant_field(2.0), 1 / 9, 2 * np.eye(2), 4, 2) == 0.0


def test_checkerboard_close_to_geometric_mean():
    # two-phase checkerboard: the continuum value is sqrt(1 * 2) I
    abar = coarsened_matrix(fixtures.corner_field(), 0, resolution=32, dim=2)
    assert abar[0, 0] == pytest.approx(abar[1, 1], rel=1e-12)
    assert abar[0, 0] == pytest.approx(math.sqrt(2.0), rel=0.01)


@pytest.mark.parametrize("field", [fixtures.inclusion_field(3.0), periodic_cell_field([[0, 1, 1], [1, 0, 0], [0, 1, 0]], [1.0, 4.0])])
def test_abar_bounds(field):
    abar = coarsened_matrix(field, 0, resolution=12, dim=2)
    w = np.linalg.eigvalsh(abar)
    assert np.allclose(abar, abar.T)
    # harmonic (Reuss) and arithmetic (Voigt) bounds
    y = cell_operator(field, 0, 48, 2).grid.points() + 1 / 96
    vals = field.diag_at(y)[:, 0]
    assert w.min() >= 1 / np.mean(1 / vals) - 0.02
    assert w.max() <= np.mean(vals) + 0.02


def test_energy_form_dominates_flux_average():
    # affine Dirichlet data is a subset of the periodic competitors
    field = fixtures.inclusion_field(3.0)
    e = coarsened_matrix(field, 1, "energy", resolution=4, dim=2)
    f = coarsened_matrix(field, 1, "flux-average", resolution=4, dim=2)
    assert np.linalg.eigvalsh(e - f).min() >= -1e-10


def test_unknown_method():
    with pytest.raises(InvalidInputError):
        coarsened_matrix(constant_field(), 0, "median")


def test_flux_corrector_solves_curl_equation():
    field = fixtures.corner_field()
    cs = correctors(field, 0, 16, 2)
    op = cell_operator(field, 0, 16, 2)
    lap = constant_operator(np.eye(2), op.grid, "periodic").matrix
    for k in range(2):
        rhs = flux_curl(corrected_fluxes(op, cs.correctors[k], k), op.grid.spacing)
        assert np.max(np.abs(-(lap @ cs.flux_correctors[k].ravel()) - rhs.ravel())) <= 1e-8 * np.abs(rhs).max()


def test_laminate_flux_corrector_zero_across_layers():
    cs = correctors(layered_field([1.0, 2.0]), 0, 16, 2)
    assert np.max(np.abs(cs.flux_correctors[0])) <= 1e-12
    assert np.max(np.abs(cs.flux_correctors[1])) > 0.01


def test_corrected_flux_divergence_free():
    field = fixtures.inclusion_field(3.0)
    op = cell_operator(field, 0, 8, 2)
    phi = solve_corrector(field, 0, 0, 8, 2, op)
    div = sum(d.T @ f.ravel() for d, f in zip(op.gradients, corrected_fluxes(op, phi, 0)))
    assert np.max(np.abs(div)) <= 1e-9


def test_corrector_set_round_trip():
    cs = correctors(fixtures.inclusion_field(3.0), 0, 8, 2)
    back = CorrectorSet.from_dict(json.loads(cs.to_json()))
    assert np.array_equal(back.abar, cs.abar)
    assert all(np.array_equal(a, b) for a, b in zip(back.correctors, cs.correctors))
    y = np.random.default_rng(0).uniform(-3, 3, (20, 2))
    assert np.array_equal(back.evaluate(1, y), cs.evaluate(1, y))


def test_evaluate_is_periodic_and_interpolates():
    cs = correctors(fixtures.inclusion_field(3.0), 0, 8, 2)
    y = np.random.default_rng(1).uniform(-0.5, 0.5, (30, 2))
    assert np.allclose(cs.evaluate(0, y), cs.evaluate(0, y + np.array([2.0, -1.0])), atol=1e-12)
    nodes = cs.grid.points().reshape(9, 9, 2)[:-1, :-1].reshape(-1, 2)
    assert np.allclose(cs.evaluate(0, nodes), cs.correctors[0].ravel(), atol=1e-12)


def test_matrix_gap():
    assert matrix_gap(np.diag([1.0, 3.0]), np.eye(2)) == pytest.approx(2.0)
    with pytest.raises(InvalidInputError):
        matrix_gap(np.eye(2), [[1.0]])


# ---------------------------------------------------------------- curves
def test_layered_error_curve_linear():
    curve = error_curve(layered_field([1.0, 2.0]), [1 / 3, 1 / 9, 1 / 27, 1 / 81], np.array([[4 / 3]]), 16, 1)
    v = np.asarray(curve.values)
    assert np.allclose(v[1:] / v[:-1], 3.0, rtol=1e-6)
    assert curve.is_monotone() and curve.algebraic


def test_translated_error_curve_zero_for_constants():
    curve = error_curve(constant_field(1.5), [1 / 3, 1 / 9], np.eye(1) * 1.5, 4, 1, shift=[0.3])
    assert curve.values == [0.0, 0.0]


def test_random_field_too_small():
    with pytest.raises(InvalidInputError):
        error_functional(make_checkerboard(0, [1.0, 2.0], 3), 1 / 9, np.eye(2), 4, 2)


def test_curve_interpolation_and_bounds():
    c = ErrorCurve(np.eye(1), [0.1, 0.01], [0.2, 0.02])
    assert c.eps == [0.01, 0.1]
    v, ext = c(math.sqrt(0.001))
    assert v == pytest.approx(math.sqrt(0.004)) and not ext
    with pytest.raises(InsufficientDataError):
        c(0.5)
    v, ext = c(0.5, allow_extrapolation=True)
    assert ext and v == pytest.approx(1.0)


def test_curve_rejects_bad_values():
    with pytest.raises(InvalidInputError):
        ErrorCurve(np.eye(1), [], [])
    with pytest.raises(InvalidInputError):
        ErrorCurve(np.eye(1), [0.1], [-1.0])


def test_curve_round_trip(tmp_path):
    c = ErrorCurve(np.eye(2), [0.1, 0.01], [0.2, 0.02], [3, 5], seed=4, meta={"x": 1})
    assert ErrorCurve.from_dict(json.loads(c.to_json())).to_dict() == c.to_dict()
    c.write_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "epsilon,E,m,seed"


def test_minimal_scale_inside_range():
    c = ErrorCurve(np.eye(1), [1e-3, 1e-1], [1e-3, 1e-1], algebraic=True)
    # E(t) = t; need (eps/r)**alpha < sigma  ->  r > eps / sigma**(1/alpha)
    r = minimal_scale(c, 0.1, 0.5, 1e-4)
    assert r == pytest.approx(1e-4 / 0.01, rel=1e-10)


def test_minimal_scale_zero_curve():
    c = ErrorCurve(np.eye(1), [0.1, 0.01], [0.0, 0.0])
    assert minimal_scale(c, 0.1, 0.5, 1e-3) == 0.0


def test_minimal_scale_extrapolation():
    c = ErrorCurve(np.eye(1), [0.1, 0.01], [0.1, 0.01], algebraic=True)
    r, ext = minimal_scale(c, 0.5, 1.0, 1e-4, return_info=True)
    assert ext and r == pytest.approx(1e-4 / 0.5)
    c.algebraic = False
    with pytest.raises(InsufficientDataError):
        minimal_scale(c, 0.5, 1.0, 1e-4)


@pytest.mark.parametrize("bad", [(0.0, 0.5, 1e-3), (0.1, 1.5, 1e-3), (0.1, 0.5, 0.0)])
def test_minimal_scale_invalid(bad):
    c = ErrorCurve(np.eye(1), [0.1], [0.1])
    with pytest.raises(InvalidInputError):
        minimal_scale(c, *bad)


def test_minimal_scale_monotone_in_eps():
    curve = error_curve(layered_field([1.0, 2.0]), [1 / 3, 1 / 9, 1 / 27, 1 / 81], np.array([[4 / 3]]), 16, 1)
    rs = [minimal_scale(curve, 0.1, 0.5, e) for e in (1e-5, 1e-4, 1e-3)]
    assert rs[0] <= rs[1] <= rs[2]


@pytest.mark.parametrize("field", [fixtures.inclusion_field(3.0), fixtures.corner_field(), layered_field([1.0, 2.0])],
                         ids=["inclusion", "corner", "laminate"])
def test_refinement_and_energy_agreement(field):
    a64 = coarsened_matrix(field, 0, resolution=64, dim=2)
    a128 = coarsened_matrix(field, 0, resolution=128, dim=2)
    assert matrix_gap(a64, a128) <= 1e-3
    # the Dirichlet energy form carries a boundary layer of width ~1 cell; compare on the cube m = 1
    energy = coarsened_matrix(field, 1, "energy", resolution=64, dim=2)
    assert matrix_gap(energy, a128) <= 0.05 * np.linalg.norm(a128, 2)


def test_random_ensemble_spread_decreases():
    from homoglab.cell import ensemble_abar

    spread = [ensemble_abar([1.0, 2.0], m, range(32), resolution=2)[:, 0, 0].std(ddof=1) for m in (1, 2, 3)]
    assert spread[0] > spread[1] > spread[2]
