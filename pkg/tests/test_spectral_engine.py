import numpy as np
import pytest
import scipy.linalg as la

from src.errors import InputError, SizeCapError
from src.functional_calculus import exp_function, hermite_family, zero_function
from src.operator_assembly import assemble_hp, assemble_model_operator
from src.spectral_engine import (
    apply_phi_eig,
    chebyshev_apply,
    dense_spectrum,
    gershgorin_bounds,
    jackson_kernel,
    kernel_column,
    kernel_columns,
    rademacher_probe,
    spectral_bounds,
    trace_phi,
)


def test_dense_spectrum_of_hermitian_matrix(random_hermitian):
    H = random_hermitian(12)
    spectrum = dense_spectrum(H)
    assert spectrum.size == 12
    assert np.all(np.diff(spectrum.eigenvalues) >= 0.0)
    assert spectrum.residuals.max() < 1e-10
    assert dense_spectrum(H, vectors=False).eigenvectors is None


def test_dense_cap(random_hermitian):
    with pytest.raises(SizeCapError):
        dense_spectrum(random_hermitian(12), cap=10)


def test_matrix_function_matches_expm(random_hermitian):
    H = random_hermitian(10, seed=3)
    function = apply_phi_eig(H, exp_function(1.0))
    reference = la.expm(-H)
    assert np.abs(function.matrix() - reference).max() < 1e-10
    assert function.trace() == pytest.approx(np.trace(reference).real, rel=1e-12)
    assert function.diagonal() == pytest.approx(np.diag(reference).real, abs=1e-10)
    assert abs(function.entry(2, 5) - reference[2, 5]) < 1e-10
    assert np.abs(function.column(4) - reference[:, 4]).max() < 1e-10
    with pytest.raises(InputError):
        function.columns([10])


def test_rademacher_probes_are_counter_based():
    first = rademacher_probe(64, seed=7, index=3)
    assert set(np.unique(first)) <= {-1.0, 1.0}
    assert np.array_equal(first, rademacher_probe(64, seed=7, index=3))
    assert not np.array_equal(first, rademacher_probe(64, seed=7, index=4))
    assert not np.array_equal(first, rademacher_probe(64, seed=8, index=3))


def test_jackson_kernel():
    g = jackson_kernel(64)
    assert g[0] == pytest.approx(1.0)
    assert np.all(g > 0.0)
    assert np.all(np.diff(g) < 0.0)


def test_bounds_enclose_the_spectrum(random_hermitian):
    H = random_hermitian(10, seed=1)
    values = np.linalg.eigvalsh(H)
    g_lo, g_hi = gershgorin_bounds(H)
    assert g_lo <= values[0] and values[-1] <= g_hi
    lo, hi = spectral_bounds(H)
    assert lo <= values[0] and values[-1] <= hi
    assert g_lo <= lo and hi <= g_hi


def test_chebyshev_apply_matches_eig(torus2, landau_field, no_potential):
    op = assemble_hp(torus2, landau_field, no_potential, 2, (12, 12))
    phi = exp_function(0.05)
    rng = np.random.default_rng(0)
    block = rng.normal(size=(op.size, 3))
    reference = apply_phi_eig(op, phi).matrix() @ block
    assert np.abs(chebyshev_apply(op, phi, block) - reference).max() < 1e-10


def test_trace_dense_and_kpm_agree(torus2, landau_field, no_potential):
    op = assemble_hp(torus2, landau_field, no_potential, 2, (16, 16))
    phi = exp_function(0.05)
    dense = trace_phi(op, phi, method="dense")
    assert dense.method == "dense" and dense.stderr == 0.0
    kpm = trace_phi(op, phi, method="kpm", kpm_order=512, probes=64, seed=11, damping="none")
    assert kpm.probe_count == 64 and kpm.chebyshev_order == 512
    assert kpm.stderr > 0.0
    assert abs(kpm.value - dense.value) <= 5.0 * kpm.stderr + 1e-6 * dense.value


def test_kpm_is_reproducible(torus2, landau_field, no_potential):
    op = assemble_hp(torus2, landau_field, no_potential, 2, (8, 8))
    phi = hermite_family(10.0, 5.0)
    first = trace_phi(op, phi, method="kpm", probes=8, seed=5, workers=4)
    again = trace_phi(op, phi, method="kpm", probes=8, seed=5, workers=1)
    other = trace_phi(op, phi, method="kpm", probes=8, seed=6)
    assert first.value == again.value
    assert first.value != other.value


def test_trace_argument_checks(random_hermitian):
    H = random_hermitian(8)
    phi = exp_function(1.0)
    with pytest.raises(InputError):
        trace_phi(H, phi, method="kpm", kpm_order=8)
    with pytest.raises(InputError):
        trace_phi(H, phi, method="lanczos")
    with pytest.raises(InputError):
        trace_phi(H, phi, method="kpm", damping="lorentz")
    assert trace_phi(H, zero_function(), method="kpm").value == 0.0


def test_kernel_columns_eig_and_chebyshev_agree():
    M = np.array([[0.0, 4.0], [-4.0, 0.0]])
    op = assemble_model_operator(M, np.zeros((1, 1)), 3.2, 15)
    phi = exp_function(0.2)
    centre = op.site_index([0.0, 0.0])
    by_eig = kernel_columns(op, phi, [centre, 3], method="eig")
    by_cheb = kernel_columns(op, phi, [centre, 3], method="chebyshev")
    assert by_eig.shape == (2, op.n_sites, 1, 1)
    assert np.abs(by_eig - by_cheb).max() < 1e-9 * np.abs(by_eig).max()


def test_kernel_of_free_heat_semigroup_preserves_constants(torus2, free_field, no_potential):
    op = assemble_hp(torus2, free_field, no_potential, 1, (8, 8))
    column = kernel_column(op, exp_function(0.01), 10)
    assert column.shape == (64,)
    # H 1 = 0, so exp(-tH) 1 = 1 and the kernel integrates to one
    assert np.sum(column) * op.cell_volume == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(InputError):
        kernel_columns(op, exp_function(0.01), [64])


def test_kernel_is_hermitian_in_its_two_points(torus2, landau_field, no_potential):
    op = assemble_hp(torus2, landau_field, no_potential, 2, (8, 8))
    x, y = 5, 42
    cols = kernel_columns(op, exp_function(0.05), [x, y], method="eig")
    assert abs(cols[0, y, 0, 0] - np.conj(cols[1, x, 0, 0])) < 1e-12 * np.abs(cols).max()
    assert abs(cols[0, y, 0, 0]) > 0.0


def test_kernel_diagonal_is_nonnegative_for_nonnegative_phi(torus2, landau_field, no_potential):
    op = assemble_hp(torus2, landau_field, no_potential, 2, (8, 8))
    sites = list(range(0, op.n_sites, 7))
    cols = kernel_columns(op, hermite_family(6.0 * np.pi, 2.0), sites, method="eig")
    diagonal = np.array([cols[k, s, 0, 0] for k, s in enumerate(sites)])
    assert np.all(diagonal.real > -1e-12)
    assert np.abs(diagonal.imag).max() < 1e-12
    assert diagonal.real.max() > 0.0


def test_trace_is_linear_in_phi(torus2, landau_field, no_potential):
    op = assemble_hp(torus2, landau_field, no_potential, 2, (8, 8))
    phi, psi = exp_function(0.05), hermite_family(6.0 * np.pi, 2.0)
    combined = 2.0 * phi + 3.0 * psi
    for method in ("dense", "kpm"):
        kwargs = {"method": method, "seed": 4, "probes": 8}
        expected = 2.0 * trace_phi(op, phi, **kwargs).value + 3.0 * trace_phi(op, psi, **kwargs).value
        assert trace_phi(op, combined, **kwargs).value == pytest.approx(expected, rel=1e-10)


def test_kpm_error_shrinks_with_the_moment_count():
    # Rademacher probes are exact on a diagonal matrix, leaving only the Chebyshev truncation
    H = np.diag(np.linspace(-1.0, 1.0, 200))
    phi = hermite_family(0.3, 0.05)
    exact = float(np.sum(phi(dense_spectrum(H, vectors=False).eigenvalues)))
    errors = [
        abs(trace_phi(H, phi, method="kpm", kpm_order=order, probes=2, damping="none").value - exact)
        for order in (64, 128, 256)
    ]
    assert errors[1] < errors[0]
    assert errors[2] < errors[1]
    assert errors[2] < 1e-8 * exact
