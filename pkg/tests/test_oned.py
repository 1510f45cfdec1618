import math

import numpy as np
import pytest
from scipy.integrate import quad

from homoglab import fixtures
from homoglab.errors import InfeasibleError, InvalidInputError
from homoglab.field import constant_field, layered_field
from homoglab.oned import (
    InversePrimitive,
    alpha_bar,
    alpha_eps,
    example2_fixed_obstacle,
    example2_residual,
    homogenized_coefficient,
    oned_sweep,
    solvability,
    u_bar,
    u_eps,
)
from homoglab.rates import fit_rate

# independent 30-digit oracle values (mpmath quadrature and root finding)
ALPHA_LAYERED_3_4 = 2.365978505788789556543675555675599318111
ALPHA_BAR_LAYERED = 2.367006838144547934535143950196072405356
ALPHA_SMOOTH_NINTH = 2.32417337147324572002502556639
EX2_SMOOTH_NINTH = -0.373029302832714036310295648696


# ------------------------------------------------------------- primitive
@pytest.mark.parametrize("field", [layered_field([1.0, 2.0]), layered_field([1.0, 3.0, 2.0], breaks=[0.0, 0.2, 0.7]),
                                   fixtures.smooth_periodic()], ids=["two", "three", "smooth"])
def test_primitives_match_quadrature(field):
    prim = InversePrimitive(field)
    for y in (-1.3, 0.0, 0.41, 2.75):
        p0, p1 = prim.primitives(np.array([y]))
        # split the integral at every phase interface
        cuts = [k + b for k in range(-2, 4) for b in (field.breaks or ())]
        pts = [min(0.0, y)] + sorted(c for c in cuts if min(0.0, y) < c < max(0.0, y)) + [max(0.0, y)]
        sign = 1.0 if y >= 0 else -1.0
        r0 = sign * sum(quad(lambda t: 1 / prim.a(np.array([t]))[0], lo, hi)[0] for lo, hi in zip(pts, pts[1:]))
        r1 = sign * sum(quad(lambda t: t / prim.a(np.array([t]))[0], lo, hi)[0] for lo, hi in zip(pts, pts[1:]))
        assert p0[0] == pytest.approx(r0, abs=1e-10)
        assert p1[0] == pytest.approx(r1, abs=1e-10)


def test_harmonic_means():
    assert homogenized_coefficient(layered_field([1.0, 2.0])) == pytest.approx(4 / 3, abs=1e-15)
    assert homogenized_coefficient(constant_field(2.0)) == 2.0
    # 1 / mean(1 / (3/2 + sin/2)) = sqrt((3/2)^2 - (1/2)^2)
    assert homogenized_coefficient(fixtures.smooth_periodic()) == pytest.approx(math.sqrt(2.0), abs=1e-12)


# ------------------------------------------------ contact-point problem
def test_alpha_constant_coefficients():
    assert alpha_eps(constant_field(1.0), 0.1) == pytest.approx(4 - math.sqrt(2), abs=1e-12)
    assert alpha_eps(constant_field(2.0), 0.1) == pytest.approx(2.0, abs=1e-12)


def test_alpha_layered_frozen():
    assert alpha_eps(layered_field([1.0, 2.0]), 3.0**-4) == pytest.approx(ALPHA_LAYERED_3_4, abs=1e-10)
    assert alpha_bar(4 / 3) == pytest.approx(ALPHA_BAR_LAYERED, abs=1e-14)


def test_alpha_smooth_frozen():
    assert alpha_eps(fixtures.smooth_periodic(), 1 / 9) == pytest.approx(ALPHA_SMOOTH_NINTH, abs=1e-10)


def test_solvability_monotone_and_root():
    field = layered_field([1.0, 2.0])
    a = alpha_eps(field, 0.2)
    assert abs(solvability(field, 0.2, a)) <= 1e-12
    vals = [solvability(field, 0.2, t) for t in np.linspace(0, 4, 41)]
    assert np.all(np.diff(vals) < 0)


def test_u_eps_solves_ode():
    field = layered_field([1.0, 2.0])
    eps = 1 / 9
    a = alpha_eps(field, eps)
    x = np.linspace(0, 4, 2001)
    u = u_eps(x, field, eps, a)
    assert u[-1] == pytest.approx(1.0, abs=1e-12)
    assert np.all(u >= 0) and np.all(u[x <= a] == 0)
    # flux a u' = x - alpha on the free region
    mid = 0.5 * (x[1:] + x[:-1])
    flux = InversePrimitive(field).a(mid / eps) * np.diff(u) / np.diff(x)
    cells = np.floor(2 * x / eps)  # layer index: a is constant between these interfaces
    free = (mid > a + 0.01) & (cells[1:] == cells[:-1])
    assert np.max(np.abs(flux[free] - (mid[free] - a))) <= 2e-3


def test_u_bar():
    x = np.linspace(0, 4, 101)
    u = u_bar(x, 4 / 3)
    assert u[-1] == pytest.approx(1.0)
    assert np.all(u >= 0)


def test_invalid_eps():
    with pytest.raises(InvalidInputError):
        alpha_eps(layered_field([1.0, 2.0]), 0.0)
    with pytest.raises(InvalidInputError):
        example2_fixed_obstacle(layered_field([1.0, 2.0]), -1.0)


def test_alpha_rate_layered():
    rows = oned_sweep(layered_field([1.0, 2.0]), [3.0**-k for k in range(2, 8)])
    fit = fit_rate([r["epsilon"] for r in rows], [r["gap"] for r in rows])
    assert abs(fit.slope - 1.0) <= 0.05 and fit.r2 >= 0.98
    assert all(r["linf_gap"] >= 0 for r in rows)


# ----------------------------------------------- fixed-obstacle problem
@pytest.mark.parametrize("c", [1.0, 2.0, 3.5])
def test_example2_constant_root(c):
    # with f = 0 in the free region the residual reduces to x^2 + 2x + 1/2
    assert example2_fixed_obstacle(constant_field(c), 0.1) == pytest.approx(-1 + math.sqrt(2) / 2, abs=1e-12)


def test_example2_residual_constant_polynomial():
    x = np.linspace(-1, 0, 11)
    assert np.allclose(example2_residual(x, constant_field(2.0), 0.3), x**2 + 2 * x + 0.5, atol=1e-13)


def test_example2_smooth_frozen():
    assert example2_fixed_obstacle(fixtures.smooth_periodic(), 1 / 9) == pytest.approx(EX2_SMOOTH_NINTH, abs=1e-10)


def test_example2_scan_density_independent():
    field = fixtures.smooth_periodic()
    x1 = example2_fixed_obstacle(field, 3.0**-5)
    x2 = example2_fixed_obstacle(field, 3.0**-5, scan=200001)
    assert x1 == pytest.approx(x2, abs=1e-12)


def test_example2_root_is_first_sign_change():
    field = fixtures.smooth_periodic()
    eps = 3.0**-4
    x = example2_fixed_obstacle(field, eps)
    xs = np.linspace(-1, x - 1e-9, 20001)
    r = example2_residual(xs, field, eps)
    assert np.all(np.sign(r) == np.sign(r[0]))


def test_example2_no_root(monkeypatch):
    from homoglab import oned

    monkeypatch.setattr(oned, "example2_residual", lambda x, *a, **k: np.ones(np.size(x)))
    with pytest.raises(InfeasibleError):
        oned.example2_fixed_obstacle(constant_field(1.0), 0.1)
