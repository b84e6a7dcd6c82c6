import math

import numpy as np
import pytest

from src.errors import FluxQuantizationError, InputError, UnderResolvedGridError
from src.functional_calculus import bump_function
from src.geometry_field import FieldData, make_field, make_flat_torus, make_potential
from src.operator_assembly import (
    assemble_hp,
    assemble_model_operator,
    dump_triplets,
    gauge_transform,
    model_grid,
    plaquette_phase,
    required_grid,
    vector_potential_links,
)
from src.spectral_engine import trace_phi


def _eigenvalues(op):
    return np.linalg.eigvalsh(op.matrix.toarray())


def test_free_lattice_spectrum(torus2, free_field, no_potential):
    n, p = 6, 2
    op = assemble_hp(torus2, free_field, no_potential, p, (n, n))
    h = 1.0 / n
    axis = 4.0 / h**2 * np.sin(np.pi * np.arange(n) / n) ** 2
    expected = np.sort((axis[:, None] + axis[None, :]).ravel()) / p
    assert _eigenvalues(op) == pytest.approx(expected, abs=1e-9)
    assert op.size == 36
    assert op.cell_volume == pytest.approx(h * h)


def test_operator_is_hermitian_with_perturbations(torus2):
    field = make_field(
        torus2,
        {"flux.12": 1, "perturbations": {"12": [{"k": [1, 1], "re": 0.3, "im": 0.2}, {"k": [-1, -1], "re": 0.3, "im": -0.2}]}},
    )
    potential = make_potential(torus2, {"modes": [{"k": [0, 1], "re": 0.1}, {"k": [0, -1], "re": 0.1}]})
    op = assemble_hp(torus2, field, potential, 4, (16, 16))
    assert op.hermiticity_defect() < 1e-12


def test_plaquettes_carry_the_constant_flux(torus2, landau_field, no_potential):
    p, n = 3, 12
    op = assemble_hp(torus2, landau_field, no_potential, p, (n, n))
    expected = np.exp(-1j * p * 2.0 * math.pi / n**2)
    for site in [(0, 0), (5, 7), (n - 1, 3), (4, n - 1), (n - 1, n - 1)]:
        assert plaquette_phase(op, 0, 1, site) == pytest.approx(expected, abs=1e-12)


def test_lowest_landau_level(torus2, landau_field, no_potential):
    p = 4
    op = assemble_hp(torus2, landau_field, no_potential, p, (32, 32))
    values = _eigenvalues(op)
    # p flux quanta: p-fold degenerate level at B = 2 pi
    assert values[:p] == pytest.approx([2.0 * math.pi] * p, rel=0.03)
    assert values[p] > 1.5 * 2.0 * math.pi


def test_gauge_transform_keeps_spectrum_and_plaquettes(torus2, landau_field, no_potential):
    op = assemble_hp(torus2, landau_field, no_potential, 2, (8, 8))
    moved = gauge_transform(op, lambda x: 0.3 * np.sin(2.0 * math.pi * x[:, 0]) + 0.1 * np.cos(2.0 * math.pi * x[:, 1]))
    assert _eigenvalues(moved) == pytest.approx(_eigenvalues(op), abs=1e-10)
    assert moved.hermiticity_defect() < 1e-12
    assert plaquette_phase(moved, 0, 1, (2, 3)) == pytest.approx(plaquette_phase(op, 0, 1, (2, 3)), abs=1e-12)
    assert not np.allclose(moved.matrix.toarray(), op.matrix.toarray())


def test_under_resolved_grid(torus2, landau_field, no_potential):
    assert required_grid(torus2, landau_field, 64) == (26, 26)
    with pytest.raises(UnderResolvedGridError) as info:
        assemble_hp(torus2, landau_field, no_potential, 64, (8, 8))
    assert info.value.required == (26, 26)


def test_assembly_input_checks(torus2, landau_field, no_potential):
    with pytest.raises(InputError):
        assemble_hp(torus2, landau_field, no_potential, 0, (16, 16))
    with pytest.raises(InputError):
        assemble_hp(torus2, landau_field, no_potential, 2, (16, 16, 16))
    broken = FieldData(geometry=torus2, mean_field=np.array([[0.0, 3.0], [-3.0, 0.0]]), flux_integers={(0, 1): 0})
    with pytest.raises(FluxQuantizationError):
        assemble_hp(torus2, broken, no_potential, 1, (16, 16))


def test_matrix_valued_potential_block_structure(torus2, free_field):
    potential = make_potential(torus2, {"rank": 2, "constant": [[1.0, 0.5], [0.5, -1.0]]})
    op = assemble_hp(torus2, free_field, potential, 1, (4, 4))
    assert op.size == 32
    values = _eigenvalues(op)
    assert values[0] == pytest.approx(-math.sqrt(1.25))
    assert values[1] == pytest.approx(math.sqrt(1.25))


def test_site_index(torus2, landau_field, no_potential):
    op = assemble_hp(torus2, landau_field, no_potential, 1, (8, 8))
    assert op.site_index([0.25, 0.5]) == 2 * 8 + 4
    with pytest.raises(InputError):
        op.site_index([0.3, 0.5])


def test_model_grid_is_odd_and_centered():
    n, h = model_grid(6.0, 40)
    assert n == 41
    assert h == pytest.approx(12.0 / 42)


def test_model_operator_lowest_level():
    a = 1.0
    M = np.array([[0.0, a], [-a, 0.0]])
    op = assemble_model_operator(M, np.zeros((1, 1)), 6.0, 47)
    assert op.p == "model"
    assert op.charge == 1.0
    assert op.site_index([0.0, 0.0]) == (47 * 47) // 2
    values = _eigenvalues(op)
    assert values[:5] == pytest.approx([a] * 5, rel=0.03)


def test_model_operator_checks():
    M = np.array([[0.0, 1.0], [-1.0, 0.0]])
    with pytest.raises(InputError):
        assemble_model_operator(M, np.zeros((1, 1)), 3.0, 21)
    with pytest.raises(InputError):
        assemble_model_operator(np.array([[0.0, 1.0], [1.0, 0.0]]), np.zeros((1, 1)), 8.0, 21)
    with pytest.raises(InputError):
        assemble_model_operator(M, np.array([[0.0, 1.0], [0.0, 0.0]]), 8.0, 21)
    # the box check can be switched off
    op = assemble_model_operator(M, np.zeros((1, 1)), 3.0, 21, check_box=False)
    assert op.grid == (21, 21)


def test_dump_triplets(tmp_path, torus2, landau_field, no_potential):
    op = assemble_hp(torus2, landau_field, no_potential, 1, (8, 8))
    path = tmp_path / "operator.txt"
    dump_triplets(op, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# shape 64 64 p=1 grid=8x8 rank=1"
    assert len(lines) == op.matrix.nnz + 1
    row, col, re, im = lines[1].split()
    assert (int(row), int(col)) == (0, 0)
    assert float(re) == pytest.approx(op.matrix[0, 0].real)


def test_vector_potential_links(torus2, landau_field, free_field):
    links = vector_potential_links(torus2, landau_field, 2, (8, 8))
    assert len(links) == 2
    assert all(np.allclose(np.abs(link), 1.0) for link in links)
    assert all(np.allclose(link, 1.0) for link in vector_potential_links(torus2, free_field, 2, (8, 8)))
    other = make_flat_torus(2, [1.0, 2.0])
    with pytest.raises(InputError):
        vector_potential_links(other, landau_field, 2, (8, 8))


def test_lowest_level_converges_at_second_order_in_the_spacing(torus2, landau_field, no_potential):
    lowest = [_eigenvalues(assemble_hp(torus2, landau_field, no_potential, 1, (n, n)))[0] for n in (12, 24, 48)]
    order = math.log2((lowest[1] - lowest[0]) / (lowest[2] - lowest[1]))
    assert order >= 1.9
    assert lowest[2] == pytest.approx(2.0 * math.pi, rel=1e-2)


@pytest.mark.parametrize("c, p", [(1, 2), (1, 4), (2, 2)])
def test_lowest_level_holds_p_times_flux_states(torus2, no_potential, c, p):
    field = make_field(torus2, {"flux.12": c})
    op = assemble_hp(torus2, field, no_potential, p, (16, 16))
    # plateau covers the lowest level 2 pi c; support ends before the next one
    phi = bump_function(math.pi * c, 4.0 * math.pi * c)
    assert trace_phi(op, phi, method="dense").value == pytest.approx(p * c, abs=1e-6)
