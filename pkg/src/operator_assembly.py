"""Sparse lattice discretizations of H_p on the torus and of the model operator.

Both operators share one builder: a gauge-covariant (2d+1)-point Laplacian
whose hopping from site x to x + h_j e_j carries the Peierls factor
exp(-i p * integral of A_j along the edge), plus a block-diagonal potential.
Matrix rows are ordered site-major, fibre-minor.
"""

import logging
from dataclasses import dataclass, field as dc_field
from itertools import combinations
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from src.errors import FluxQuantizationError, InputError, UnderResolvedGridError
from src.geometry_field import FieldData, Geometry, PotentialData, wave_vector

logger = logging.getLogger(__name__)

MODEL = "model"
HERMITIAN_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    matrix: sp.csr_matrix
    grid: tuple
    spacings: tuple
    p: Union[int, str]
    rank: int
    coordinates: np.ndarray
    link_phases: tuple
    periodic: bool
    meta: dict = dc_field(default_factory=dict)

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.grid))

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return len(self.grid)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    @property
    def charge(self) -> float:
        """Multiplier of the gauge function in gauge transforms (p, or 1 for the model)."""
        return 1.0 if self.p == MODEL else float(self.p)

    def site_index(self, point: Sequence[float], atol: Optional[float] = None) -> int:
        """Linear index of the lattice site at ``point``; fails if no site is there."""
        point = np.asarray(point, dtype=float)
        distances = np.linalg.norm(self.coordinates - point, axis=1)
        index = int(np.argmin(distances))
        tolerance = 1e-6 * min(self.spacings) if atol is None else atol
        if distances[index] > tolerance:
            raise InputError(
                f"point {point.tolist()} is not a lattice site (nearest at distance {distances[index]:.3g})",
                "operator_assembly.site_index",
            )
        return index

    def hermiticity_defect(self) -> float:
        diff = self.matrix - self.matrix.getH()
        return float(abs(diff).max()) if diff.nnz else 0.0


def site_coordinates(grid: Sequence[int], spacings: Sequence[float], origin: Sequence[float]) -> np.ndarray:
    axes = [origin[i] + spacings[i] * np.arange(grid[i]) for i in range(len(grid))]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def covariant_laplacian(grid: Sequence[int], spacings: Sequence[float], link_phases: Sequence[np.ndarray], periodic: bool) -> sp.csr_matrix:
    """(2d+1)-point magnetic Laplacian; ``link_phases[j]`` is the hop factor x -> x + e_j."""
    grid = tuple(int(n) for n in grid)
    n_sites = int(np.prod(grid))
    index = np.arange(n_sites).reshape(grid)
    rows, cols, vals = [], [], []
    diagonal = np.full(n_sites, sum(2.0 / h**2 for h in spacings))
    for j, h in enumerate(spacings):
        forward = np.roll(index, -1, axis=j)
        phases = np.asarray(link_phases[j]).reshape(grid)
        if periodic:
            keep = np.ones(grid, dtype=bool)
        else:
            keep = np.ones(grid, dtype=bool)
            last = [slice(None)] * len(grid)
            last[j] = -1
            keep[tuple(last)] = False
        src, dst, u = index[keep], forward[keep], phases[keep]
        hop = -1.0 / h**2
        rows += [src, dst]
        cols += [dst, src]
        vals += [hop * u, hop * np.conj(u)]
    off = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_sites, n_sites)
    )
    return (off + sp.diags(diagonal)).tocsr()


def _with_fibre(laplacian: sp.spmatrix, potential_blocks: np.ndarray, scale: float) -> sp.csr_matrix:
    """scale * laplacian (x) I_r + blockdiag(V(x)); ``potential_blocks`` has shape (N, r, r)."""
    n_sites, rank = potential_blocks.shape[0], potential_blocks.shape[-1]
    kinetic = sp.kron(laplacian, sp.identity(rank, format="csr"), format="csr") * scale
    if not np.any(potential_blocks):
        return kinetic.tocsr()
    if rank == 1:
        potential = sp.diags(potential_blocks[:, 0, 0])
    else:
        potential = sp.bsr_matrix(
            (np.ascontiguousarray(potential_blocks), np.arange(n_sites), np.arange(n_sites + 1)),
            shape=(n_sites * rank, n_sites * rank),
        )
    return (kinetic + potential).tocsr()


def required_grid(geom: Geometry, field: FieldData, p: int, resolution: float = 8.0) -> tuple:
    """Minimum points per axis resolving the magnetic length: resolution*sqrt(p*max|B|)*L_i/(2*pi)."""
    bmax = field.max_abs()
    return tuple(int(np.ceil(resolution * np.sqrt(p * bmax) * length / (2.0 * np.pi) - 1e-9)) for length in geom.side_lengths)


def _edge_integral_factor(q_j: np.ndarray, h: float) -> np.ndarray:
    """Integral of exp(i q_j t) over t in [0, h]."""
    q_j = np.asarray(q_j, dtype=float)
    safe = np.where(q_j == 0.0, 1.0, q_j)
    return np.where(q_j == 0.0, h, (np.exp(1j * safe * h) - 1.0) / (1j * safe))


def torus_link_angles(field: FieldData, grid: Sequence[int]) -> list:
    """Edge integrals of A along each direction, plus the wrap-around twist angle.

    Gauge: A = sum_{i<j} Bbar_ij x_i dx_j for the mean field and the Coulomb
    antiderivative A_j = -i sum_m q_m B_mj / |q|^2 of each Fourier mode.
    Crossing x_j = L_j adds the cocycle chi_j(y) = L_j sum_{k>j} Bbar_jk y_k.
    Returned angles multiply -p in the hop phase (twists already folded in).
    """
    geom = field.geometry
    d = geom.dim
    spacings = [L / n for L, n in zip(geom.side_lengths, grid)]
    coords = site_coordinates(grid, spacings, [0.0] * d).reshape(tuple(grid) + (d,))
    bbar = field.mean_field
    angles = []
    for j in range(d):
        h = spacings[j]
        theta = h * sum(bbar[i, j] * coords[..., i] for i in range(j)) if j > 0 else np.zeros(tuple(grid))
        theta = np.asarray(theta, dtype=float)
        for mode in field.modes:
            q = wave_vector(geom, mode.k)
            qq = float(q @ q)
            a_hat = -1j * (q @ mode.amplitude[:, j]) / qq
            theta = theta + (a_hat * np.exp(1j * (coords @ q)) * _edge_integral_factor(q[j], h)).real
        # wrap edges: psi(y + L_j e_j) = exp(i p chi_j(y)) psi(y)
        wrap = [slice(None)] * d
        wrap[j] = -1
        chi = geom.side_lengths[j] * sum(bbar[j, k] * coords[..., k] for k in range(j + 1, d)) if j < d - 1 else 0.0
        twist = np.zeros(tuple(grid))
        if j < d - 1:
            twist[tuple(wrap)] = np.asarray(chi)[tuple(wrap)]
        angles.append((theta, twist))
    return angles


def vector_potential_links(geom: Geometry, field: FieldData, p: int, grid: Sequence[int]) -> tuple:
    """Peierls hop factor per site and direction, wrap-around twists included."""
    if field.geometry != geom:
        raise InputError("field was built for a different geometry", "operator_assembly.vector_potential_links")
    return tuple(np.exp(-1j * p * theta + 1j * p * twist) for theta, twist in torus_link_angles(field, grid))


def assemble_hp(
    geom: Geometry,
    field: FieldData,
    potential: PotentialData,
    p: int,
    grid: Sequence[int],
    resolution: float = 8.0,
) -> DiscreteOperator:
    """Lattice H_p = (1/p) Delta^{L^p (x) E} + V on the torus with gauge-periodic boundary."""
    where = "operator_assembly.assemble_hp"
    grid = tuple(int(n) for n in grid)
    if len(grid) != geom.dim:
        raise InputError(f"grid {grid} does not match d={geom.dim}", where)
    if p < 1:
        raise InputError(f"tensor power p must be a positive integer, got {p}", where)
    if field.geometry != geom:
        raise InputError("field was built for a different geometry", where)
    for (i, j) in combinations(range(geom.dim), 2):
        expected = 2.0 * np.pi * field.flux_integers.get((i, j), 0) / (geom.side_lengths[i] * geom.side_lengths[j])
        if not np.isclose(field.mean_field[i, j], expected, rtol=1e-9, atol=1e-12):
            raise FluxQuantizationError(f"mean field of plane {i + 1}{j + 1} is not flux-quantized", where)
    minimum = required_grid(geom, field, p, resolution)
    if any(n < m for n, m in zip(grid, minimum)) or min(grid) < 3:
        raise UnderResolvedGridError(
            f"grid {list(grid)} under-resolves the magnetic length at p={p}; need at least {list(minimum)}",
            required=minimum,
            where=where,
        )

    spacings = tuple(L / n for L, n in zip(geom.side_lengths, grid))
    phases = vector_potential_links(geom, field, p, grid)
    laplacian = covariant_laplacian(grid, spacings, phases, periodic=True)
    coords = site_coordinates(grid, spacings, [0.0] * geom.dim)
    blocks = potential.values(coords)
    matrix = _with_fibre(laplacian, blocks, 1.0 / p)
    logger.info("assembled H_p: p=%d grid=%s size=%d nnz=%d", p, list(grid), matrix.shape[0], matrix.nnz)
    return DiscreteOperator(
        matrix=matrix,
        grid=grid,
        spacings=spacings,
        p=int(p),
        rank=potential.rank,
        coordinates=coords,
        link_phases=phases,
        periodic=True,
        meta={"side_lengths": list(geom.side_lengths), "flux_integers": {f"{i + 1}{j + 1}": c for (i, j), c in field.flux_integers.items()}},
    )


def model_grid(box_halfwidth: float, points: int) -> tuple:
    """Odd point count and spacing so the origin is a site of the Dirichlet box."""
    n = int(points)
    if n % 2 == 0:
        n += 1
    return n, 2.0 * box_halfwidth / (n + 1)


def assemble_model_operator(
    M: np.ndarray,
    V0: np.ndarray,
    box_halfwidth: float,
    grid: Union[int, Sequence[int]],
    check_box: bool = True,
) -> DiscreteOperator:
    """Dirichlet-box discretization of Delta^{(x0)} + V(x0).

    The connection is d - i A with the symmetric potential
    A_j(w) = -(1/2) sum_k M_jk w_k, whose curvature is M.
    """
    where = "operator_assembly.assemble_model_operator"
    M = np.atleast_2d(np.asarray(M, dtype=float))
    d = M.shape[0]
    if M.shape != (d, d):
        raise InputError(f"skew matrix must be square, got shape {M.shape}", where)
    if np.abs(M + M.T).max() > 1e-10 * max(1.0, float(np.abs(M).max())):
        raise InputError("skew matrix is not antisymmetric", where)
    V0 = np.atleast_2d(np.asarray(V0, dtype=complex))
    if np.abs(V0 - V0.conj().T).max() > 1e-12 * max(1.0, float(np.abs(V0).max())):
        raise InputError("V0 is not Hermitian", where)
    singular = np.linalg.svd(M, compute_uv=False)
    positive = singular[singular > 1e-8 * max(1.0, float(singular.max(initial=0.0)))]
    if check_box and positive.size and box_halfwidth < 6.0 / np.sqrt(positive.min()):
        raise InputError(
            f"box halfwidth {box_halfwidth:.4g} too small; need >= {6.0 / np.sqrt(positive.min()):.4g}", where
        )

    counts = [grid] * d if np.isscalar(grid) else list(grid)
    if len(counts) != d:
        raise InputError(f"grid {counts} does not match d={d}", where)
    sized = [model_grid(box_halfwidth, n) for n in counts]
    shape = tuple(n for n, _ in sized)
    spacings = tuple(h for _, h in sized)
    origin = [-0.5 * (n - 1) * h for n, h in sized]
    coords = site_coordinates(shape, spacings, origin)
    phases = []
    for j in range(d):
        # A is linear and A_j does not depend on w_j, so the edge integral is h * A_j(w)
        a_j = -0.5 * coords @ M[j]
        phases.append(np.exp(-1j * spacings[j] * a_j).reshape(shape))
    laplacian = covariant_laplacian(shape, spacings, phases, periodic=False)
    blocks = np.broadcast_to(V0, (coords.shape[0],) + V0.shape)
    matrix = _with_fibre(laplacian, blocks, 1.0)
    logger.info("assembled model operator: d=%d grid=%s box=%.4g size=%d", d, list(shape), box_halfwidth, matrix.shape[0])
    return DiscreteOperator(
        matrix=matrix,
        grid=shape,
        spacings=spacings,
        p=MODEL,
        rank=V0.shape[0],
        coordinates=coords,
        link_phases=tuple(phases),
        periodic=False,
        meta={"box_halfwidth": float(box_halfwidth)},
    )


def gauge_transform(op: DiscreteOperator, chi: Callable[[np.ndarray], np.ndarray]) -> DiscreteOperator:
    """Conjugate by the diagonal unitary exp(i p chi(x)); the spectrum is unchanged."""
    angles = op.charge * np.asarray(chi(op.coordinates), dtype=float)
    unitary = np.exp(1j * angles)
    fibre = np.repeat(unitary, op.rank)
    D = sp.diags(fibre)
    matrix = (D @ op.matrix @ D.getH()).tocsr()
    index = np.arange(op.n_sites).reshape(op.grid)
    grid_unitary = unitary.reshape(op.grid)
    phases = tuple(
        grid_unitary * op.link_phases[j] * np.conj(grid_unitary.ravel()[np.roll(index, -1, axis=j)])
        for j in range(op.dim)
    )
    return DiscreteOperator(
        matrix=matrix,
        grid=op.grid,
        spacings=op.spacings,
        p=op.p,
        rank=op.rank,
        coordinates=op.coordinates,
        link_phases=phases,
        periodic=op.periodic,
        meta=dict(op.meta, gauge_transformed=True),
    )


def plaquette_phase(op: DiscreteOperator, i: int, j: int, site: Sequence[int]) -> complex:
    """Product of hop factors around the (i, j) plaquette at multi-index ``site``."""
    grid = op.grid
    here = tuple(int(s) % n for s, n in zip(site, grid))

    def shifted(s, axis):
        out = list(s)
        out[axis] = (out[axis] + 1) % grid[axis]
        return tuple(out)

    u = op.link_phases
    return complex(
        u[i][here]
        * u[j][shifted(here, i)]
        * np.conj(u[i][shifted(here, j)])
        * np.conj(u[j][here])
    )


def dump_triplets(op: DiscreteOperator, path) -> None:
    """Sparse triplet text file: header, then 'row col re im' per stored entry."""
    coo = op.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# shape {coo.shape[0]} {coo.shape[1]} p={op.p} grid={'x'.join(map(str, op.grid))} rank={op.rank}\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {v.real:.17g} {v.imag:.17g}\n")
    logger.info("wrote %d triplets to %s", coo.nnz, path)
