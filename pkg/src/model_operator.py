"""Closed-form model data at a point: cyclotron frequencies, Landau ladder, f0 and F0.

With 2n = rank of the magnetic matrix and m = d - 2n kernel directions,

    f0 = (2 pi)^{-(d-n)} prod(a) sum_{k, mu} pi_mu * w_m(Lambda_{k, mu}),
    w_0(L) = phi(L),  w_m(L) = |S^{m-1}| int_0^inf phi(r^2 + L) r^{m-1} dr,

and Lambda_{k, mu} = sum_j (2 k_j + 1) a_j + V_mu.
"""

import logging
import math
from dataclasses import dataclass
from itertools import product
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import integrate, special
from scipy.linalg import schur

from src.errors import InputError, NumericalError
from src.functional_calculus import TestFunction
from src.geometry_field import FieldData, Geometry, PotentialData, sample_grid, skew_matrix_at
from src.operator_assembly import assemble_model_operator, model_grid
from src.spectral_engine import dense_spectrum, kernel_columns

logger = logging.getLogger(__name__)

LEVEL_MERGE_TOL = 1e-9
RADIAL_EPSREL = 1e-10
LADDER_TAIL_TOL = 1e-10
RECONSTRUCTION_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ModelPointData:
    M: np.ndarray
    a: tuple
    frame: np.ndarray
    V0: np.ndarray
    potential_values: tuple
    projections: tuple
    rank_tolerance: float

    @property
    def n(self) -> int:
        return len(self.a)

    @property
    def rank(self) -> int:
        return 2 * len(self.a)

    @property
    def dim(self) -> int:
        return self.M.shape[0]

    @property
    def kernel_dim(self) -> int:
        return self.dim - self.rank

    @property
    def fibre_rank(self) -> int:
        return self.V0.shape[0]

    @property
    def landau_prefactor(self) -> float:
        """(2 pi)^{-n} prod(a): the value P_Lambda(0, 0) of one ladder level."""
        return float(np.prod(self.a)) / (2.0 * math.pi) ** self.n if self.a else 1.0


@dataclass(frozen=True)
class LadderEntry:
    value: float
    members: tuple

    @property
    def multiplicity(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class LevelLadder:
    entries: tuple
    lambda_max: float
    tail_bound: float = 0.0
    empty: bool = False

    @property
    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.entries])

    @property
    def multiplicities(self) -> np.ndarray:
        return np.array([e.multiplicity for e in self.entries], dtype=int)


def b_eigenstructure(M: np.ndarray, rank_tolerance: Optional[float] = None, V0: Optional[np.ndarray] = None) -> ModelPointData:
    """Cyclotron frequencies a_1 >= ... >= a_n > 0 and an orthonormal frame with
    frame.T @ M @ frame = blockdiag([[0, a_j], [-a_j, 0]], 0)."""
    where = "model_operator.b_eigenstructure"
    M = np.atleast_2d(np.asarray(M, dtype=float))
    d = M.shape[0]
    if M.shape != (d, d):
        raise InputError(f"skew matrix must be square, got shape {M.shape}", where)
    norm = float(np.linalg.norm(M, 2)) if M.size else 0.0
    if np.abs(M + M.T).max(initial=0.0) > 1e-10 * max(1.0, norm):
        raise InputError("skew matrix is not antisymmetric", where)
    tol = 1e-8 * max(1.0, norm) if rank_tolerance is None else float(rank_tolerance)

    T, Q = schur(M, output="real")
    planes, kernel = [], []
    i = 0
    while i < d:
        if i + 1 < d and abs(T[i + 1, i]) > 0.0:
            upper, lower = T[i, i + 1], T[i + 1, i]
            a = 0.5 * (abs(upper) + abs(lower))
            e, f = Q[:, i], Q[:, i + 1]
            if upper < 0.0:
                e, f = f, e
            planes.append((a, e, f))
            i += 2
        else:
            kernel.append(Q[:, i])
            i += 1

    rebuilt = np.zeros((d, d))
    for a, e, f in planes:
        rebuilt += a * (np.outer(e, f) - np.outer(f, e))
    defect = float(np.abs(M - rebuilt).max(initial=0.0))
    if defect > RECONSTRUCTION_TOL * max(1.0, norm):
        raise NumericalError(f"block decomposition does not reconstruct M (defect {defect:.3g})", where)

    planes.sort(key=lambda plane: -plane[0])
    kept = [plane for plane in planes if plane[0] > tol]
    for _, e, f in planes[len(kept):]:
        kernel += [e, f]
    columns = [v for _, e, f in kept for v in (e, f)] + kernel
    frame = np.stack(columns, axis=1) if columns else np.zeros((0, 0))

    V0 = np.zeros((1, 1)) if V0 is None else np.atleast_2d(np.asarray(V0, dtype=complex))
    if np.abs(V0 - V0.conj().T).max() > 1e-12 * max(1.0, float(np.abs(V0).max())):
        raise InputError("V0 is not Hermitian", where)
    values, vectors = np.linalg.eigh(V0)
    projections = tuple(np.outer(vectors[:, mu], vectors[:, mu].conj()) for mu in range(values.size))
    return ModelPointData(
        M=M,
        a=tuple(float(plane[0]) for plane in kept),
        frame=frame,
        V0=V0,
        potential_values=tuple(float(v) for v in values),
        projections=projections,
        rank_tolerance=tol,
    )


def _ladder_members(a: Sequence[float], v_mu: float, lambda_max: float, mu: int) -> list:
    base = sum(a) + v_mu
    if base > lambda_max:
        return []
    if not a:
        return [(base, ((), mu))]
    bounds = [int(math.floor((lambda_max - base) / (2.0 * a_j) + 1e-12)) for a_j in a]
    members = []
    for k in product(*(range(b + 1) for b in bounds)):
        value = base + 2.0 * sum(kj * aj for kj, aj in zip(k, a))
        if value <= lambda_max + 1e-12:
            members.append((value, (tuple(k), mu)))
    return members


def lambda_levels(data: ModelPointData, lambda_max: float, tail_bound: float = 0.0) -> LevelLadder:
    """All (k, mu) with Lambda_{k, mu} <= lambda_max, coincident values merged."""
    if not np.isfinite(lambda_max):
        raise InputError("lambda_max must be finite", "model_operator.lambda_levels")
    raw = []
    for mu, v_mu in enumerate(data.potential_values):
        raw += _ladder_members(data.a, v_mu, lambda_max, mu)
    raw.sort(key=lambda item: (item[0], item[1]))
    entries = []
    for value, member in raw:
        if entries and abs(value - entries[-1][0]) <= LEVEL_MERGE_TOL:
            entries[-1][1].append(member)
        else:
            entries.append((value, [member]))
    ladder = LevelLadder(
        entries=tuple(LadderEntry(value=v, members=tuple(m)) for v, m in entries),
        lambda_max=float(lambda_max),
        tail_bound=float(tail_bound),
        empty=not entries,
    )
    if ladder.empty:
        logger.warning("empty Landau ladder below lambda_max=%.6g (lowest level %.6g)", lambda_max, sum(data.a) + min(data.potential_values))
    return ladder


def _level_count(data: ModelPointData, lam: float) -> int:
    return sum(len(_ladder_members(data.a, v, lam, mu)) for mu, v in enumerate(data.potential_values))


def auto_lambda_max(data: ModelPointData, phi: TestFunction, tol: float = LADDER_TAIL_TOL) -> float:
    """Cutoff with prefactor * #levels(2L) * (2L)^{m/2} * sup_{>=L}|phi| < tol."""
    lowest = sum(data.a) + min(data.potential_values)
    if phi.decay == "zero":
        return lowest
    if phi.decay == "compact":
        return max(float(phi.support[1]), lowest)
    prefactor = data.landau_prefactor
    lam = max(phi.upper_cutoff(tol), lowest + 2.0 * max(data.a, default=1.0))
    for _ in range(200):
        reach = 2.0 * abs(lam) + 1.0
        bound = prefactor * max(_level_count(data, reach), 1) * reach ** (0.5 * data.kernel_dim) * phi.tail_bound(lam)
        if bound < tol:
            return float(lam)
        lam = lam + max(1.0, 0.5 * abs(lam))
    raise NumericalError("could not certify a ladder cutoff", "model_operator.auto_lambda_max")


def sphere_area(m: int) -> float:
    """Surface area of the unit (m-1)-sphere in R^m."""
    return 2.0 * math.pi ** (0.5 * m) / math.gamma(0.5 * m)


def _radial_upper(phi: TestFunction, level: float) -> float:
    cutoff = phi.upper_cutoff(1e-18)
    return math.sqrt(max(cutoff - level, 0.0)) + 1.0


def radial_weight(phi: TestFunction, level: float, m: int) -> float:
    """|S^{m-1}| int_0^inf phi(r^2 + level) r^{m-1} dr (phi(level) when m = 0)."""
    if m == 0:
        return float(phi(level))
    upper = _radial_upper(phi, level)
    value, error = integrate.quad(
        lambda r: float(phi(r * r + level)) * r ** (m - 1),
        0.0,
        upper,
        epsrel=RADIAL_EPSREL,
        epsabs=0.0,
        limit=400,
    )
    if error > max(1e-9 * abs(value), 1e-15):
        raise NumericalError(
            f"radial quadrature at level {level:.6g} did not converge (error {error:.3g})", "model_operator.f0_point"
        )
    return sphere_area(m) * value


def f0_point(
    data: ModelPointData,
    phi: TestFunction,
    d: Optional[int] = None,
    lambda_max: Optional[float] = None,
    ladder: Optional[LevelLadder] = None,
) -> np.ndarray:
    """Leading coefficient f0(x0) as an r x r Hermitian matrix."""
    d = data.dim if d is None else int(d)
    if d != data.dim:
        raise InputError(f"dimension {d} does not match the skew matrix ({data.dim})", "model_operator.f0_point")
    r = data.fibre_rank
    if phi.decay == "zero":
        return np.zeros((r, r), dtype=complex)
    if ladder is None:
        ladder = lambda_levels(data, auto_lambda_max(data, phi) if lambda_max is None else lambda_max)
    m = data.kernel_dim
    total = np.zeros((r, r), dtype=complex)
    for entry in ladder.entries:
        weight = radial_weight(phi, entry.value, m)
        for _, mu in entry.members:
            total += weight * data.projections[mu]
    return total * data.landau_prefactor / (2.0 * math.pi) ** m


def _radial_weight_substituted(phi: TestFunction, level: float, m: int) -> float:
    """Same radial weight through s = r^2: (|S^{m-1}|/2) int_0^inf phi(level + s) s^{m/2 - 1} ds."""
    if m == 0:
        return float(phi(level))
    upper = _radial_upper(phi, level) ** 2
    value, error = integrate.quad(
        lambda s: float(phi(level + s)),
        0.0,
        upper,
        weight="alg",
        wvar=(0.5 * m - 1.0, 0.0),
        epsrel=RADIAL_EPSREL,
        epsabs=0.0,
        limit=400,
    )
    if error > max(1e-9 * abs(value), 1e-15):
        raise NumericalError(f"substituted radial quadrature did not converge at level {level:.6g}", "model_operator.model_kernel_diag_analytic")
    return 0.5 * sphere_area(m) * value


def model_kernel_diag_analytic(data: ModelPointData, phi: TestFunction, d: Optional[int] = None) -> np.ndarray:
    """K_{phi(H^(x0))}(0, 0) from separation of variables, cross-checked against f0_point."""
    where = "model_operator.model_kernel_diag_analytic"
    shared = f0_point(data, phi, d)
    if phi.decay == "zero":
        return shared
    ladder = lambda_levels(data, auto_lambda_max(data, phi))
    m = data.kernel_dim
    independent = np.zeros_like(shared)
    for entry in ladder.entries:
        for _, mu in entry.members:
            # per-level projection kernel on the diagonal times the kernel-direction transform at 0
            independent += data.landau_prefactor * _radial_weight_substituted(phi, entry.value, m) / (2.0 * math.pi) ** m * data.projections[mu]
    gap = float(np.abs(independent - shared).max())
    if gap > 1e-8 * max(1e-300, float(np.abs(shared).max())) and gap > 1e-14:
        raise NumericalError(f"diagonal kernel recomputation disagrees with f0 by {gap:.3g}", where)
    return shared


def landau_projection_kernel_abs(a: float, k: int, w) -> np.ndarray:
    """|P_k(u, u')| for the level-k Landau projection on R^2 at separation w = u - u'."""
    w = np.asarray(w, dtype=float)
    r2 = np.sum(w * w, axis=-1) if w.ndim else w * w
    return (a / (2.0 * math.pi)) * np.abs(special.eval_laguerre(k, 0.5 * a * r2)) * np.exp(-0.25 * a * r2)


def _landau_projection_kernel(a: float, k: int, r2: float) -> float:
    """Gauge-stripped level-k projection kernel: (a/2pi) L_k(a r^2/2) exp(-a r^2/4)."""
    return (a / (2.0 * math.pi)) * float(special.eval_laguerre(k, 0.5 * a * r2)) * math.exp(-0.25 * a * r2)


def _radial_transform(phi: TestFunction, level: float, m: int, distance: float) -> float:
    """(2 pi)^{-m} int_{R^m} exp(i xi.u) phi(|xi|^2 + level) dxi at |u| = distance."""
    if m == 0:
        return float(phi(level))
    if distance < 1e-12:
        return radial_weight(phi, level, m) / (2.0 * math.pi) ** m
    order = 0.5 * m - 1.0
    upper = _radial_upper(phi, level)
    value, _ = integrate.quad(
        lambda r: float(phi(r * r + level)) * special.jv(order, r * distance) * r ** (0.5 * m),
        0.0,
        upper,
        epsrel=RADIAL_EPSREL,
        epsabs=1e-15,
        limit=800,
    )
    return (2.0 * math.pi) ** (-0.5 * m) * distance ** (1.0 - 0.5 * m) * value


def model_kernel_abs_analytic(data: ModelPointData, phi: TestFunction, d: Optional[int], Z, Zp) -> np.ndarray:
    """Entrywise |F0(Z, Z')|; gauge-invariant, so no phase convention enters."""
    r = data.fibre_rank
    if phi.decay == "zero":
        return np.zeros((r, r))
    w = np.asarray(Z, dtype=float) - np.asarray(Zp, dtype=float)
    y = data.frame.T @ w if data.frame.size else w
    n = data.n
    plane_r2 = [float(y[2 * j] ** 2 + y[2 * j + 1] ** 2) for j in range(n)]
    kernel_distance = float(np.linalg.norm(y[2 * n:]))
    ladder = lambda_levels(data, auto_lambda_max(data, phi))
    total = np.zeros((r, r), dtype=complex)
    for entry in ladder.entries:
        transverse = _radial_transform(phi, entry.value, data.kernel_dim, kernel_distance)
        for k, mu in entry.members:
            planes = math.prod(_landau_projection_kernel(a_j, k_j, r2) for a_j, k_j, r2 in zip(data.a, k, plane_r2))
            total += planes * transverse * data.projections[mu]
    return np.abs(total)


def model_spacing_grid(box_halfwidth: float, spacing: float) -> tuple:
    """Odd point count whose Dirichlet spacing equals ``spacing``; the box grows to fit."""
    half_count = max(2, int(math.ceil(box_halfwidth / spacing - 1e-9)))
    return 2 * half_count - 1, half_count * spacing


def default_model_box(data: ModelPointData) -> float:
    """Box halfwidth with room for the magnetic length: max(8, 8/sqrt(a_min)), 12 without field."""
    return max(8.0, 8.0 / math.sqrt(min(data.a))) if data.a else 12.0


def _kernel_on_lattice(op, phi: TestFunction, pairs: Sequence[tuple]) -> np.ndarray:
    sources = sorted({op.site_index(zp) for _, zp in pairs})
    columns = kernel_columns(op, phi, sources)
    slot = {s: i for i, s in enumerate(sources)}
    return np.stack([columns[slot[op.site_index(zp)], op.site_index(z)] for z, zp in pairs])


def model_kernel_pairs(
    data: ModelPointData,
    phi: TestFunction,
    pairs: Sequence[tuple],
    box: float,
    grid: Optional[int] = None,
    spacing: Optional[float] = None,
    extrapolate: bool = True,
    check_box: bool = True,
) -> np.ndarray:
    """F0(Z, Z') for each (Z, Z') pair from Dirichlet-box discretizations, shape (m, r, r).

    With ``extrapolate`` the kernel is also computed at half the spacing and
    the two are combined as (4 K_{h/2} - K_h)/3.
    """
    where = "model_operator.model_kernel_numeric"
    pairs = [(np.atleast_1d(np.asarray(z, dtype=float)), np.atleast_1d(np.asarray(zp, dtype=float))) for z, zp in pairs]
    reach = max(max(np.abs(z).max(), np.abs(zp).max()) for z, zp in pairs)
    if reach > 0.5 * box:
        raise InputError(f"points must lie inside half the box ({0.5 * box:.4g})", where)
    if spacing is None:
        if grid is None:
            raise InputError("give either grid or spacing", where)
        count, spacing = model_grid(box, grid)
        halfwidth = box
    else:
        count, halfwidth = model_spacing_grid(box, spacing)
    if phi.decay == "zero":
        return np.zeros((len(pairs), data.fibre_rank, data.fibre_rank), dtype=complex)
    coarse_op = assemble_model_operator(data.M, data.V0, halfwidth, count, check_box=check_box)
    coarse = _kernel_on_lattice(coarse_op, phi, pairs)
    if not extrapolate:
        return coarse
    fine_op = assemble_model_operator(data.M, data.V0, halfwidth, 2 * count + 1, check_box=check_box)
    fine = _kernel_on_lattice(fine_op, phi, pairs)
    logger.debug("model kernel at spacing %.4g: max coarse/fine gap %.3g", spacing, float(np.abs(fine - coarse).max()))
    return (4.0 * fine - coarse) / 3.0


def model_kernel_numeric(
    data: ModelPointData,
    phi: TestFunction,
    Z,
    Zp,
    box: float,
    grid: Optional[int] = None,
    spacing: Optional[float] = None,
    extrapolate: bool = True,
    check_box: bool = True,
) -> np.ndarray:
    """F0(Z, Z') as an r x r matrix; the numeric oracle for off-diagonal comparisons."""
    return model_kernel_pairs(data, phi, [(Z, Zp)], box, grid, spacing, extrapolate, check_box)[0]


def _origin_spectrum(M: np.ndarray, halfwidth: float, count: int, check_box: bool) -> tuple:
    """Eigenvalues and |u(0)|^2 / cell of one scalar Dirichlet-box factor."""
    op = assemble_model_operator(M, np.zeros((1, 1)), halfwidth, count, check_box=check_box)
    spectrum = dense_spectrum(op)
    origin = op.site_index(np.zeros(op.dim))
    return spectrum.eigenvalues, np.abs(spectrum.eigenvectors[origin]) ** 2 / op.cell_volume


def _separable_diag(data: ModelPointData, phi: TestFunction, halfwidth: float, count: int, check_box: bool) -> np.ndarray:
    factors = [_origin_spectrum(np.array([[0.0, a], [-a, 0.0]]), halfwidth, count, check_box) for a in data.a]
    factors += [_origin_spectrum(np.zeros((1, 1)), halfwidth, count, check_box)] * data.kernel_dim
    # factor energies are >= 0; drop those that push every combination past the tail of phi
    upper = phi.upper_cutoff(1e-18) - min(data.potential_values)
    floor = sum(float(values.min()) for values, _ in factors)
    energies, weights = np.zeros(1), np.ones(1)
    for values, origin_weights in factors:
        keep = (origin_weights > 1e-300) & (values - values.min() <= upper - floor)
        energies = (energies[:, None] + values[keep][None, :]).ravel()
        weights = (weights[:, None] * origin_weights[keep][None, :]).ravel()
    total = np.zeros((data.fibre_rank, data.fibre_rank), dtype=complex)
    for mu, v_mu in enumerate(data.potential_values):
        total += float(np.sum(phi(energies + v_mu) * weights)) * data.projections[mu]
    return total


def model_kernel_diag_separable(
    data: ModelPointData,
    phi: TestFunction,
    box: float,
    spacing: float,
    extrapolate: bool = True,
    check_box: bool = True,
) -> np.ndarray:
    """F0(0, 0) from the box discretization in the canonical frame, one factor per plane.

    The box operator is a Kronecker sum of 2D Landau factors and 1D free
    factors, so its diagonal at the origin is a sum over products of factor
    eigenpairs. Intended for d >= 4 where the full box grid is out of reach.
    """
    if phi.decay == "zero":
        return np.zeros((data.fibre_rank, data.fibre_rank), dtype=complex)
    count, halfwidth = model_spacing_grid(box, spacing)
    coarse = _separable_diag(data, phi, halfwidth, count, check_box)
    if not extrapolate:
        return coarse
    fine = _separable_diag(data, phi, halfwidth, 2 * count + 1, check_box)
    return (4.0 * fine - coarse) / 3.0


def f0_field(
    geom: Geometry,
    field: FieldData,
    potential: PotentialData,
    phi: TestFunction,
    per_axis: int,
) -> pd.DataFrame:
    """trace f0 over a uniform x0-grid; columns x1..xd, a1..a_{d//2}, trace_f0."""
    points = sample_grid(geom, per_axis)
    memo: dict = {}
    rows = []
    for x0 in points:
        data = b_eigenstructure(skew_matrix_at(field, x0), V0=potential.values(x0))
        key = (tuple(round(a, 12) for a in data.a), tuple(round(v, 12) for v in data.potential_values))
        if key not in memo:
            memo[key] = float(np.trace(f0_point(data, phi, geom.dim)).real)
        row = {f"x{i + 1}": float(x0[i]) for i in range(geom.dim)}
        for j in range(geom.dim // 2):
            row[f"a{j + 1}"] = data.a[j] if j < data.n else 0.0
        row["trace_f0"] = memo[key]
        rows.append(row)
    logger.info("f0 field over %d points (%d distinct model points)", len(rows), len(memo))
    return pd.DataFrame(rows)
