import math

import numpy as np
import pytest

from src.errors import InputError
from src.functional_calculus import (
    HSQuadrature,
    almost_analytic_extension,
    apply_phi_derivative_hs,
    apply_phi_hs,
    bump_function,
    dbar_decay_slope,
    exp_function,
    hermite_family,
    make_test_function,
    plateau_window,
    smoothstep,
    zero_function,
)
from src.verification import random_hermitian


def _phi_of(H, f):
    values, vectors = np.linalg.eigh(H)
    return (vectors * f(values)) @ vectors.conj().T


@pytest.fixture
def small_hermitian():
    rng = np.random.default_rng(4)
    q, _ = np.linalg.qr(rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6)))
    return (q * np.array([-1.0, -0.25, 0.5, 1.0, 2.0, 3.0])) @ q.conj().T


def test_gaussian_derivatives():
    phi = hermite_family(center=1.0, width=2.0)
    lam = np.array([-0.5, 1.0, 2.7])
    u = (lam - 1.0) / 2.0
    assert phi(lam) == pytest.approx(np.exp(-0.5 * u * u))
    assert phi.derivative(lam, 1) == pytest.approx(-u / 2.0 * np.exp(-0.5 * u * u))
    assert phi.derivative(lam, 2) == pytest.approx((u * u - 1.0) / 4.0 * np.exp(-0.5 * u * u))
    assert phi.support_hint() == pytest.approx((-19.0, 21.0))
    with pytest.raises(InputError):
        phi.derivative(lam, 41)


def test_exp_derivatives_and_tail():
    phi = exp_function(t=0.5, amplitude=2.0)
    assert phi.derivative(1.0, 3) == pytest.approx(2.0 * (-0.5) ** 3 * math.exp(-0.5))
    assert phi.tail_bound(4.0) == pytest.approx(2.0 * math.exp(-2.0))
    assert phi.decay == "one-sided"


def test_upper_cutoff():
    assert exp_function(1.0).upper_cutoff(1e-16) == pytest.approx(-math.log(1e-16), rel=1e-6)
    assert hermite_family(0.0, 1.0).upper_cutoff(1e-16) == pytest.approx(math.sqrt(-2.0 * math.log(1e-16)), rel=1e-6)
    assert bump_function(0.0, 2.0).upper_cutoff() == 2.0
    assert zero_function().upper_cutoff() == -math.inf


def test_smoothstep_is_flat_at_both_ends():
    step = smoothstep(4)
    assert step(0.0) == pytest.approx(0.0)
    assert step(1.0) == pytest.approx(1.0)
    for k in range(1, 5):
        derivative = step.deriv(k)
        assert derivative(0.0) == pytest.approx(0.0, abs=1e-9)
        assert derivative(1.0) == pytest.approx(0.0, abs=1e-9)


def test_bump_plateau_and_support():
    phi = bump_function(1.0, 3.0, order=6, amplitude=2.0)
    assert phi(np.array([0.5, 1.0, 3.0, 3.5])) == pytest.approx([0.0, 0.0, 0.0, 0.0])
    assert phi(np.array([1.5, 2.0, 2.5])) == pytest.approx([2.0, 2.0, 2.0])
    assert 0.0 < float(phi(1.25)) < 2.0
    assert phi.derivative(np.array([2.0]), 3) == pytest.approx([0.0])
    assert phi.decay == "compact"
    with pytest.raises(InputError):
        phi.derivative(2.0, 7)
    with pytest.raises(InputError):
        bump_function(2.0, 1.0)
    with pytest.raises(InputError):
        bump_function(0.0, 1.0, ramp=0.75)


def test_plateau_window():
    window = plateau_window(0.0, 4.0, ramp=1.0)
    assert window(np.array([0.0, 2.0, 4.0])) == pytest.approx([1.0, 1.0, 1.0])
    assert window(np.array([-1.0, 5.0])) == pytest.approx([0.0, 0.0])


def test_sum_and_product():
    g = hermite_family(0.0, 1.0)
    e = exp_function(1.0)
    total = g + e
    assert total.family == "sum"
    assert total.decay == "one-sided"
    assert total(0.3) == pytest.approx(g(0.3) + e(0.3))
    prod = e * g
    assert prod.family == "product"
    assert prod.derivative(0.3, 1) == pytest.approx(e.derivative(0.3, 1) * g(0.3) + e(0.3) * g.derivative(0.3, 1))
    assert (3.0 * g)(0.0) == pytest.approx(3.0)
    windowed = e * bump_function(0.0, 2.0)
    assert windowed.decay == "compact"
    assert windowed.support == (0.0, 2.0)


def test_make_test_function_families():
    assert make_test_function({"family": "gaussian", "center": 1.0, "width": 0.5}).family == "gaussian"
    assert make_test_function({"family": "gaussian_poly", "width": 1.0, "degree": 2}).family == "gaussian_poly"
    bump = make_test_function({"family": "bump", "support": [0.0, 1.0], "order": 5})
    assert bump.max_order == 5
    assert make_test_function({"family": "exp", "t": 2.0})(0.5) == pytest.approx(math.exp(-1.0))
    assert make_test_function({"family": "zero"}).decay == "zero"
    combined = make_test_function({"family": "sum", "terms": [{"family": "exp"}, {"family": "zero"}], "amplitude": 2.0})
    assert combined(0.0) == pytest.approx(2.0)


def test_make_test_function_errors():
    with pytest.raises(InputError):
        make_test_function({"family": "lorentzian"})
    with pytest.raises(InputError, match="unknown key"):
        make_test_function({"family": "exp", "rate": 1.0})
    with pytest.raises(InputError):
        make_test_function({"family": "gaussian"})
    with pytest.raises(InputError):
        make_test_function({"family": "exp", "t": -1.0})
    with pytest.raises(InputError):
        make_test_function({"family": "product", "factors": []})


def test_almost_analytic_extension_restricts_to_phi():
    phi = hermite_family(0.5, 1.0)
    ext = almost_analytic_extension(phi, 4)
    mu = np.linspace(-3.0, 3.0, 13)
    on_axis = ext(mu + 0j)
    assert np.real(on_axis) == pytest.approx(phi(mu))
    assert np.abs(np.imag(on_axis)).max() == 0.0
    assert ext.mu_range == pytest.approx((-9.5, 10.5))
    assert ext.nu_max == pytest.approx(2.0 * 0.25 * math.sqrt(1.0 + 10.5**2))


@pytest.mark.parametrize("order", [2, 3, 5])
def test_dbar_vanishes_to_the_extension_order(order):
    ext = almost_analytic_extension(hermite_family(0.0, 1.0), order)
    assert dbar_decay_slope(ext) == pytest.approx(order, abs=1e-6)


def test_extension_checks():
    with pytest.raises(InputError):
        almost_analytic_extension(hermite_family(0.0, 1.0), 1)
    with pytest.raises(InputError):
        almost_analytic_extension(bump_function(0.0, 1.0, order=4), 4)
    with pytest.raises(InputError):
        almost_analytic_extension(hermite_family(0.0, 1.0), 3, cutoff_scale=0.0)


def test_quadrature_from_mapping():
    quad = HSQuadrature.from_mapping({"mesh": [10, 20], "nu_min": 1e-2})
    assert (quad.mu_points, quad.nu_points, quad.nu_min) == (10, 20, 1e-2)
    assert HSQuadrature.from_mapping(None) == HSQuadrature()
    assert HSQuadrature.from_mapping(quad) is quad


def test_hs_formula_reproduces_phi(small_hermitian):
    phi = hermite_family(1.0, 1.0)
    ext = almost_analytic_extension(phi, 6)
    result = apply_phi_hs(small_hermitian, ext, {"mesh": [300, 300]})
    reference = _phi_of(small_hermitian, phi)
    assert np.abs(result - reference).max() < 1e-5


def test_hs_formula_for_the_first_derivative(small_hermitian):
    phi = hermite_family(1.0, 1.0)
    ext = almost_analytic_extension(phi, 6)
    result = apply_phi_derivative_hs(small_hermitian, ext, 1, {"mesh": [300, 300]})
    reference = _phi_of(small_hermitian, lambda x: phi.derivative(x, 1))
    assert np.abs(result - reference).max() < 1e-4


def test_hs_checks(small_hermitian):
    ext = almost_analytic_extension(hermite_family(0.0, 1.0), 2)
    with pytest.raises(InputError):
        apply_phi_hs(np.array([[0.0, 1.0], [0.0, 0.0]]), ext)
    with pytest.raises(InputError):
        apply_phi_hs(small_hermitian, ext, {"nu_min": 0.0})
    with pytest.raises(InputError):
        apply_phi_derivative_hs(small_hermitian, ext, 1)
    zero_ext = almost_analytic_extension(zero_function(), 2, mu_range=(0.0, 1.0))
    assert np.all(apply_phi_hs(small_hermitian, zero_ext) == 0.0)


def test_hs_oracle_agrees_and_improves_with_the_order():
    phi = make_test_function({"family": "gaussian", "center": 0.0, "width": 1.0})
    quadrature = {"mesh": [400, 400], "nu_min": 1e-3}
    floor = 1e-10
    for seed in (0, 1):
        H = random_hermitian(8, seed)
        exact = _phi_of(H, phi)
        errors = []
        for order in (2, 4, 6):
            ext = almost_analytic_extension(phi, order, cutoff_scale=0.25)
            errors.append(np.linalg.norm(apply_phi_hs(H, ext, quadrature) - exact) / np.linalg.norm(exact))
        assert errors[2] <= 1e-6
        assert max(errors[1], floor) <= max(errors[0], floor)
        assert max(errors[2], floor) <= max(errors[1], floor)


def test_dbar_slope_follows_the_order_for_the_textbook_cutoff():
    ext = almost_analytic_extension(hermite_family(0.0, 1.0), 4, cutoff_scale=1.0)
    assert dbar_decay_slope(ext) == pytest.approx(4, abs=1e-6)
