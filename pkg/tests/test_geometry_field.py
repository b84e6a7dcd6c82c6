import math

import numpy as np
import pytest

from src.errors import FluxQuantizationError, InputError
from src.geometry_field import (
    make_field,
    make_flat_torus,
    make_potential,
    plane_flux,
    sample_grid,
    skew_matrix_at,
    volume_density_kappa,
)


def test_flat_torus_rejects_bad_input():
    with pytest.raises(InputError):
        make_flat_torus(1, [1.0])
    with pytest.raises(InputError):
        make_flat_torus(5, [1.0] * 5)
    with pytest.raises(InputError):
        make_flat_torus(2, [1.0])
    with pytest.raises(InputError):
        make_flat_torus(2, [1.0, -1.0])


def test_geometry_basics():
    geom = make_flat_torus(3, [1.0, 2.0, 0.5])
    assert geom.volume == pytest.approx(1.0)
    assert geom.min_length == 0.5
    assert geom.periodic_distance([0.1, 0.0, 0.0], [0.9, 0.0, 0.0]) == pytest.approx(0.2)
    wrapped = geom.wrap(np.array([[1.25, -0.5, 0.75]]))
    assert wrapped[0] == pytest.approx([0.25, 1.5, 0.25])


def test_sample_grid_shape(torus2):
    points = sample_grid(torus2, 5)
    assert points.shape == (25, 2)
    assert points.min() == 0.0
    assert points.max() == pytest.approx(0.8)


def test_flux_key_sets_quantized_mean_field(torus2):
    field = make_field(torus2, {"flux.12": 2})
    assert field.mean_field[0, 1] == pytest.approx(4.0 * math.pi)
    assert field.mean_field[1, 0] == pytest.approx(-4.0 * math.pi)
    assert field.flux_integers == {(0, 1): 2}
    assert field.mode == "constant"
    assert not field.is_zero


def test_flux_on_a_rectangle_scales_with_area():
    geom = make_flat_torus(2, [1.0, 2.0])
    field = make_field(geom, {"flux.12": 1})
    assert field.mean_field[0, 1] == pytest.approx(math.pi)
    assert plane_flux(field, 0, 1) == pytest.approx(2.0 * math.pi)


def test_non_integral_flux_is_rejected(torus2):
    with pytest.raises(FluxQuantizationError):
        make_field(torus2, {"B.12": 3.0})
    with pytest.raises(FluxQuantizationError):
        make_field(torus2, {"flux.12": 0.5})


def test_conflicting_plane_values_are_rejected(torus2):
    with pytest.raises(InputError):
        make_field(torus2, {"B.12": 2.0 * math.pi, "B.21": 2.0 * math.pi})
    with pytest.raises(InputError):
        make_field(torus2, {"B.11": 1.0})
    with pytest.raises(InputError):
        make_field(torus2, {"C.12": 1.0})


def test_zero_field(free_field):
    assert free_field.is_zero
    assert free_field.flux_integers == {(0, 1): 0}
    assert free_field.max_abs() == 0.0


def test_fourier_perturbation_keeps_flux(torus2):
    spec = {
        "flux.12": 1,
        "perturbations": {"12": [{"k": [1, 0], "re": 0.5}, {"k": [-1, 0], "re": 0.5}]},
    }
    field = make_field(torus2, spec)
    assert field.mode == "smooth-periodic"
    assert field.flux_integers == {(0, 1): 1}
    at_origin = field.coefficients(np.zeros(2))
    assert at_origin[0, 1] == pytest.approx(2.0 * math.pi + 1.0)
    assert at_origin[1, 0] == pytest.approx(-(2.0 * math.pi + 1.0))
    half = field.coefficients(np.array([0.5, 0.0]))
    assert half[0, 1] == pytest.approx(2.0 * math.pi - 1.0)
    assert field.max_abs() == pytest.approx(2.0 * math.pi + 1.0)


def test_perturbation_needs_conjugate_partner(torus2):
    with pytest.raises(InputError):
        make_field(torus2, {"perturbations": {"12": [{"k": [1, 0], "re": 0.5}]}})


def test_zero_mode_perturbation_is_rejected(torus2):
    with pytest.raises(InputError):
        make_field(torus2, {"perturbations": {"12": [{"k": [0, 0], "re": 0.5}]}})


def test_non_closed_perturbation_is_rejected():
    geom = make_flat_torus(3, [1.0, 1.0, 1.0])
    spec = {"perturbations": {"12": [{"k": [0, 0, 1], "re": 0.5}, {"k": [0, 0, -1], "re": 0.5}]}}
    with pytest.raises(InputError):
        make_field(geom, spec)


def test_skew_matrix_at_point(landau_field):
    M = skew_matrix_at(landau_field, [0.3, 0.7])
    assert M == pytest.approx(np.array([[0.0, 2.0 * math.pi], [-2.0 * math.pi, 0.0]]))


def test_volume_density_is_one_inside_injectivity_radius(torus2):
    assert volume_density_kappa(torus2, [0.5, 0.5], [0.1, 0.2]) == 1.0
    with pytest.raises(InputError):
        volume_density_kappa(torus2, [0.5, 0.5], [0.5, 0.0])


def test_potential_modes(torus2):
    potential = make_potential(torus2, {"modes": [{"k": [1, 0], "re": 0.25}, {"k": [-1, 0], "re": 0.25}]})
    assert potential.rank == 1
    assert potential.values(np.array([0.0, 0.3]))[0, 0].real == pytest.approx(0.5)
    assert potential.values(np.array([0.5, 0.3]))[0, 0].real == pytest.approx(-0.5)
    assert potential.eigenvalues(np.array([[0.25, 0.0]]))[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_matrix_potential(torus2):
    potential = make_potential(torus2, {"rank": 2, "constant": [[1.0, 0.5], [0.5, -1.0]]})
    values = potential.eigenvalues(np.zeros((1, 2)))[0]
    assert values == pytest.approx([-math.sqrt(1.25), math.sqrt(1.25)])


def test_potential_validation(torus2):
    with pytest.raises(InputError):
        make_potential(torus2, {"rank": 2, "constant": [[0.0, 1.0], [0.0, 0.0]]})
    with pytest.raises(InputError):
        make_potential(torus2, {"modes": [{"k": [1, 0], "re": 0.25}]})
    with pytest.raises(InputError):
        make_potential(torus2, {"shift": 1.0})
    with pytest.raises(InputError):
        make_potential(torus2, {"rank": 0})


def test_skew_matrix_at_for_a_variable_field(torus2):
    # 2 pi (1 + cos 2 pi x1 cos 2 pi x2) with unit flux
    quarter = 0.5 * math.pi
    modes = [{"k": [s1, s2], "re": quarter} for s1 in (1, -1) for s2 in (1, -1)]
    field = make_field(torus2, {"flux.12": 1, "perturbations": {"12": modes}})
    assert field.flux_integers == {(0, 1): 1}
    assert skew_matrix_at(field, [0.0, 0.0]) == pytest.approx(np.array([[0.0, 4.0 * math.pi], [-4.0 * math.pi, 0.0]]))
    assert skew_matrix_at(field, [0.25, 0.0])[0, 1] == pytest.approx(2.0 * math.pi)
