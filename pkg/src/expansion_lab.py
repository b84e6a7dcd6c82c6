"""p-sweeps, half-power fits and the kernel comparisons against the model operator.

Every lattice quantity that is compared with a continuum value is computed on
two grids and combined by Richardson extrapolation in h^2, so the second-order
stencil bias does not masquerade as a semiclassical remainder.
"""

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import scipy.linalg as la

from src.config import Config
from src.database import fetch_record, store_record
from src.errors import InputError, NumericalError
from src.functional_calculus import TestFunction
from src.geometry_field import FieldData, Geometry, PotentialData, sample_grid, skew_matrix_at, volume_density_kappa, wave_vector
from src.model_operator import b_eigenstructure, default_model_box, f0_point, model_kernel_pairs
from src.operator_assembly import assemble_hp, required_grid
from src.spectral_engine import kernel_columns, trace_phi

logger = logging.getLogger(__name__)

FIT_CONDITION_CAP = 1e12
SWEEP_FINE_RATIO = 1.5
KERNEL_FINE_RATIO = 2


def richardson_h2(coarse, fine, ratio: float):
    """Eliminate the h^2 term from values at spacings h and h/ratio."""
    r2 = ratio * ratio
    return (r2 * np.asarray(fine) - np.asarray(coarse)) / (r2 - 1.0)


def grid_for_p(geom: Geometry, field: FieldData, p: int, resolution: float = 8.0, min_points: int = 32) -> tuple:
    """Points per axis: the resolution rule rounded up to a multiple of 8; >= min_points without field."""
    grid = []
    for n in required_grid(geom, field, p, resolution):
        n = 8 * int(math.ceil(max(n, 8) / 8.0))
        if field.is_zero:
            n = max(n, min_points)
        grid.append(n)
    return tuple(grid)


def _scaled_grid(grid: Sequence[int], ratio: float) -> tuple:
    return tuple(int(round(n * ratio)) for n in grid)


def _first_set(*candidates):
    return next(c for c in candidates if c is not None)


@dataclass(frozen=True, eq=False)
class _Problem:
    geom: Geometry
    field: FieldData
    potential: PotentialData
    phi: TestFunction


def _problem(config: Config, phi: Optional[TestFunction] = None) -> _Problem:
    geom = config.build_geometry()
    return _Problem(geom, config.build_field(geom), config.build_potential(geom), phi or config.build_phi())


def _trace_on_grid(config: Config, prob: _Problem, p: int, grid: tuple):
    engine = config.engine
    op = assemble_hp(prob.geom, prob.field, prob.potential, p, grid, resolution=config.sweep["resolution"])
    return trace_phi(
        op,
        prob.phi,
        method=engine["trace_method"],
        kpm_order=engine["kpm_order"],
        probes=engine["probes"],
        seed=engine["seed"],
        damping=engine["damping"],
        cap=engine["dense_cap"],
    )


def _sweep_entry(config: Config, p: int) -> dict:
    prob = _problem(config)
    sweep = config.sweep
    grid = grid_for_p(prob.geom, prob.field, p, sweep["resolution"], sweep["min_points"])
    scale = p ** (-0.5 * prob.geom.dim)
    coarse = _trace_on_grid(config, prob, p, grid)
    row = {
        "p": int(p),
        "grid": "x".join(map(str, grid)),
        "method": coarse.method,
        "T_coarse": scale * coarse.value,
    }
    if not sweep["extrapolate"]:
        row.update({"T": row["T_coarse"], "stderr": scale * coarse.stderr, "grid_fine": "", "T_fine": float("nan"), "grid_agreement": float("nan")})
        return row
    fine_grid = _scaled_grid(grid, SWEEP_FINE_RATIO)
    fine = _trace_on_grid(config, prob, p, fine_grid)
    t_fine = scale * fine.value
    r2 = SWEEP_FINE_RATIO**2
    row.update(
        {
            "grid_fine": "x".join(map(str, fine_grid)),
            "T_fine": t_fine,
            "T": float(richardson_h2(row["T_coarse"], t_fine, SWEEP_FINE_RATIO)),
            "stderr": scale * math.sqrt((r2 * fine.stderr) ** 2 + coarse.stderr**2) / (r2 - 1.0),
            "grid_agreement": abs(t_fine - row["T_coarse"]) / max(abs(t_fine), 1e-300),
        }
    )
    logger.info("p=%d grid %s: T=%.10g (coarse %.10g, fine %.10g)", p, row["grid"], row["T"], row["T_coarse"], t_fine)
    return row


SWEEP_COLUMNS = ["p", "T", "stderr", "grid", "grid_fine", "T_coarse", "T_fine", "grid_agreement", "method"]


def trace_sweep(config: Config, p_list: Optional[Sequence[int]] = None, workers: int = 1, cache_dir: Optional[str] = None) -> pd.DataFrame:
    """T(p) = p^{-d/2} tr phi(H_p) for each p; cached entries are replayed, only missing p run."""
    where = "expansion_lab.trace_sweep"
    p_list = list(config.sweep["p_list"] if p_list is None else p_list)
    if not p_list:
        raise InputError("p_list is empty", where)
    if sorted(set(p_list)) != p_list:
        raise InputError(f"p_list must be strictly increasing, got {p_list}", where)
    geom = config.build_geometry()
    field = config.build_field(geom)
    largest = grid_for_p(geom, field, p_list[-1], config.sweep["resolution"], config.sweep["min_points"])
    size = int(np.prod(_scaled_grid(largest, SWEEP_FINE_RATIO if config.sweep["extrapolate"] else 1.0))) * config.build_potential(geom).rank
    if config.engine["trace_method"] == "dense" and size > config.engine["dense_cap"]:
        raise InputError(f"largest p={p_list[-1]} needs size {size} above the dense cap {config.engine['dense_cap']}", where)

    sections = ("geometry", "field", "potential", "phi", "engine", "sweep")
    keys = {p: config.cache_key("trace_sweep", *sections, extra={"p": p}) for p in p_list}
    rows = {}
    if cache_dir:
        for p in p_list:
            payload = fetch_record(keys[p], cache_dir)
            if payload is not None:
                rows[p] = json.loads(payload)
        if rows:
            logger.info("trace_sweep cache hits for p=%s", sorted(rows))
    missing = [p for p in p_list if p not in rows]
    if missing:
        if workers > 1 and len(missing) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                computed = list(pool.map(_sweep_entry, [config] * len(missing), missing))
        else:
            computed = [_sweep_entry(config, p) for p in missing]
        for p, row in zip(missing, computed):
            rows[p] = row
            if cache_dir:
                store_record(keys[p], "trace_sweep", json.dumps(row, sort_keys=True), cache_dir)
    return pd.DataFrame([rows[p] for p in p_list], columns=SWEEP_COLUMNS)


@dataclass(frozen=True, eq=False)
class ExpansionFit:
    p_values: np.ndarray
    observed: np.ndarray
    coefficients: np.ndarray
    stderrs: np.ndarray
    residual_norm: float
    condition_number: float
    j: int
    residual_cap: Optional[float] = None

    @property
    def within_cap(self) -> bool:
        return self.residual_cap is None or self.residual_norm <= self.residual_cap

    def predict(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return sum(c * p ** (-0.5 * r) for r, c in enumerate(self.coefficients))

    def as_record(self) -> dict:
        return {
            "j": self.j,
            "p": [int(p) for p in self.p_values],
            "T": [float(t) for t in self.observed],
            "coefficients": [float(c) for c in self.coefficients],
            "stderrs": [float(s) for s in self.stderrs],
            "residual_norm": self.residual_norm,
            "condition_number": self.condition_number,
        }


def fit_half_power_expansion(table, j: int = 2, weights: Optional[Sequence[float]] = None, residual_cap: Optional[float] = None) -> ExpansionFit:
    """Least squares T(p) ~ sum_{r<=j} c_r p^{-r/2} by QR with column scaling."""
    where = "expansion_lab.fit_half_power_expansion"
    if isinstance(table, pd.DataFrame):
        p_values, observed = table["p"].to_numpy(dtype=float), table["T"].to_numpy(dtype=float)
    else:
        p_values, observed = (np.asarray(v, dtype=float) for v in table)
    if j < 0:
        raise InputError(f"expansion order j must be >= 0, got {j}", where)
    if p_values.size < j + 2:
        raise InputError(f"need at least {j + 2} rows for j={j}, got {p_values.size}", where)
    w = np.ones_like(p_values) if weights is None else np.asarray(weights, dtype=float)
    root_w = np.sqrt(w)
    basis = np.stack([p_values ** (-0.5 * r) for r in range(j + 1)], axis=1)
    scales = np.linalg.norm(basis, axis=0)
    scaled = basis / scales * root_w[:, None]
    q, r = np.linalg.qr(scaled)
    condition = float(np.linalg.cond(r))
    if not np.isfinite(condition) or condition > FIT_CONDITION_CAP:
        raise NumericalError(f"fit matrix is rank-deficient (condition number {condition:.3g})", where)
    solution = la.solve_triangular(r, q.T @ (observed * root_w))
    coefficients = solution / scales
    residual = basis @ coefficients - observed
    dof = p_values.size - (j + 1)
    sigma2 = float(np.sum(w * residual**2) / dof) if dof > 0 else 0.0
    r_inv = la.solve_triangular(r, np.eye(j + 1))
    covariance = sigma2 * (r_inv @ r_inv.T) / np.outer(scales, scales)
    fit = ExpansionFit(
        p_values=p_values,
        observed=observed,
        coefficients=coefficients,
        stderrs=np.sqrt(np.clip(np.diag(covariance), 0.0, None)),
        residual_norm=float(np.linalg.norm(residual)),
        condition_number=condition,
        j=int(j),
        residual_cap=residual_cap,
    )
    logger.info("fit j=%d: c=%s residual %.3g cond %.3g", j, np.array2string(coefficients, precision=8), fit.residual_norm, condition)
    return fit


def _f0_trace(prob: _Problem, x0: np.ndarray, memo: dict) -> float:
    data = b_eigenstructure(skew_matrix_at(prob.field, x0), V0=prob.potential.values(x0))
    key = (tuple(round(a, 12) for a in data.a), tuple(round(v, 12) for v in data.potential_values))
    if key not in memo:
        memo[key] = float(np.trace(f0_point(data, prob.phi, prob.geom.dim)).real)
    return memo[key]


def leading_integral(
    geom: Geometry,
    field: FieldData,
    potential: PotentialData,
    phi: TestFunction,
    points_per_axis: int = 16,
    rtol: float = 1e-4,
) -> float:
    """Integral of tr f0 over the torus; periodic trapezoid at n and 2n points per axis."""
    where = "expansion_lab.leading_integral"
    if phi.decay == "zero":
        return 0.0
    prob = _Problem(geom, field, potential, phi)
    memo: dict = {}
    values = []
    for n in (points_per_axis, 2 * points_per_axis):
        samples = [_f0_trace(prob, x0, memo) for x0 in sample_grid(geom, n)]
        values.append(float(np.mean(samples)) * geom.volume)
    coarse, fine = values
    gap = abs(fine - coarse) / max(abs(fine), 1e-300)
    if gap > rtol:
        raise NumericalError(f"quadrature mesh too coarse: refinements differ by {gap:.3g} (> {rtol:g})", where)
    logger.info("leading integral %.12g (%d distinct model points)", fine, len(memo))
    return fine


def _torus_kernel_pairs(config: Config, prob: _Problem, p: int, grid: tuple, pairs: Sequence[tuple]) -> np.ndarray:
    """K_{phi(H_p)}(x, x') for absolute torus points, shape (m, r, r)."""
    op = assemble_hp(prob.geom, prob.field, prob.potential, p, grid, resolution=config.sweep["resolution"])
    wrap = prob.geom.wrap
    sources = sorted({op.site_index(wrap(xp)) for _, xp in pairs})
    slot = {s: i for i, s in enumerate(sources)}
    columns = kernel_columns(op, prob.phi, sources)
    return np.stack([columns[slot[op.site_index(wrap(xp))], op.site_index(wrap(x))] for x, xp in pairs])


def _extrapolated_torus_kernel(config: Config, prob: _Problem, p: int, pairs: Sequence[tuple], extrapolate: bool) -> tuple:
    grid = grid_for_p(prob.geom, prob.field, p, config.sweep["resolution"], config.sweep["min_points"])
    coarse = _torus_kernel_pairs(config, prob, p, grid, pairs)
    if not extrapolate:
        return coarse, coarse, grid
    fine = _torus_kernel_pairs(config, prob, p, _scaled_grid(grid, KERNEL_FINE_RATIO), pairs)
    return richardson_h2(coarse, fine, KERNEL_FINE_RATIO), coarse, grid


def _f0_matrix(prob: _Problem, x0) -> np.ndarray:
    data = b_eigenstructure(skew_matrix_at(prob.field, x0), V0=prob.potential.values(np.asarray(x0, dtype=float)))
    return f0_point(data, prob.phi, prob.geom.dim)


def diagonal_compare(config: Config, p: int, x0_list: Sequence[Sequence[float]], phi: Optional[TestFunction] = None) -> pd.DataFrame:
    """|p^{-d/2} K(x0, x0) - f0(x0)| per point (entrywise max over the fibre)."""
    prob = _problem(config, phi)
    points = [np.asarray(x0, dtype=float) for x0 in x0_list]
    if not points:
        raise InputError("x0_list is empty", "expansion_lab.diagonal_compare")
    extrapolate = config.sweep["extrapolate"]
    kernel, coarse, grid = _extrapolated_torus_kernel(config, prob, p, [(x, x) for x in points], extrapolate)
    scale = p ** (-0.5 * prob.geom.dim)
    rows = []
    for x0, k_ext, k_coarse in zip(points, kernel, coarse):
        f0 = _f0_matrix(prob, x0)
        lhs = scale * k_ext
        error = float(np.abs(lhs - f0).max())
        row = {f"x{i + 1}": float(x0[i]) for i in range(prob.geom.dim)}
        row.update(
            {
                "p": int(p),
                "grid": "x".join(map(str, grid)),
                "lhs": float(lhs[0, 0].real),
                "lhs_coarse": float(scale * k_coarse[0, 0].real),
                "f0": float(f0[0, 0].real),
                "abs_error": error,
                "rel_error": error / max(float(np.abs(f0).max()), 1e-300),
            }
        )
        rows.append(row)
    return pd.DataFrame(rows)


def _perturbation_gauge(field: FieldData, x0: np.ndarray) -> tuple:
    """A(x0) and the symmetric part of dA(x0) for the Fourier part of the connection."""
    geom = field.geometry
    d = geom.dim
    value = np.zeros(d)
    gradient = np.zeros((d, d))
    for mode in field.modes:
        q = wave_vector(geom, mode.k)
        a_hat = -1j * (q @ mode.amplitude) / float(q @ q)
        wave = np.exp(1j * float(q @ x0))
        value += (a_hat * wave).real
        gradient += (1j * np.outer(a_hat, q) * wave).real
    return value, 0.5 * (gradient + gradient.T)


def landau_gauge_phase(field: FieldData, x0: np.ndarray, w: np.ndarray) -> float:
    """chi(w) with A_lattice = A_symmetric + d chi near x0 (exact for the constant part)."""
    bbar = field.mean_field
    d = field.geometry.dim
    chi = 0.0
    for i in range(d):
        for j in range(i + 1, d):
            chi += bbar[i, j] * (x0[i] * w[j] + 0.5 * w[i] * w[j])
    if field.modes:
        value, sym = _perturbation_gauge(field, x0)
        chi += float(value @ w) + 0.5 * float(w @ sym @ w)
    return chi


@dataclass(frozen=True, eq=False)
class KernelComparison:
    p: int
    x0: tuple
    N: int
    gauge: str
    table: pd.DataFrame = dc_field(repr=False)

    @property
    def max_error(self) -> float:
        return float(self.table["err"].max()) if len(self.table) else 0.0

    @property
    def max_statistic(self) -> float:
        return float(self.table["s_stat"].max()) if len(self.table) else 0.0


def rescaled_kernel_compare(
    config: Config,
    p: int,
    x0: Optional[Sequence[float]] = None,
    pair_list: Optional[Sequence] = None,
    phi: Optional[TestFunction] = None,
    N: Optional[int] = None,
    gauge: Optional[str] = None,
) -> KernelComparison:
    """p^{-d/2} K_{phi(H_p)}(x0+Z, x0+Z') against F0(sqrt(p) Z, sqrt(p) Z') pair by pair.

    The model operator is discretized with spacing sqrt(p)*h so both lattices
    correspond site by site; "aligned" gauge undoes the Landau-to-symmetric
    gauge change, "abs" compares moduli.
    """
    where = "expansion_lab.rescaled_kernel_compare"
    prob = _problem(config, phi)
    geom = prob.geom
    d = geom.dim
    if x0 is None:
        x0 = config.kernel["x0"] or [0.5 * L for L in geom.side_lengths]
    x0 = np.asarray(x0, dtype=float)
    pair_list = config.kernel["pairs"] if pair_list is None else pair_list
    N = int(config.kernel["N"] if N is None else N)
    gauge = config.kernel["gauge"] if gauge is None else gauge
    if gauge not in ("aligned", "abs"):
        raise InputError(f"gauge must be aligned or abs, got {gauge!r}", where)
    if not pair_list:
        raise InputError("pair list is empty", where)
    pairs = [(np.asarray(z, dtype=float), np.asarray(zp, dtype=float)) for z, zp in pair_list]

    grid = grid_for_p(geom, prob.field, p, config.sweep["resolution"], config.sweep["min_points"])
    spacings = [L / n for L, n in zip(geom.side_lengths, grid)]
    if max(spacings) - min(spacings) > 1e-12 * max(spacings):
        raise InputError("rescaled comparison needs equal lattice spacings on every axis", where)
    data = b_eigenstructure(skew_matrix_at(prob.field, x0), V0=prob.potential.values(x0))
    box = float(config.model["box"] or default_model_box(data))
    root_p = math.sqrt(p)
    lengths = np.asarray(geom.side_lengths)
    for z, zp in pairs:
        for point in (z, zp):
            volume_density_kappa(geom, x0, point)
            if root_p * np.abs(point).max() > 0.5 * box:
                raise InputError(f"pair point {point.tolist()} outside the model box at p={p}", where)
            if np.any(x0 + point < 0.0) or np.any(x0 + point >= lengths):
                raise InputError(f"x0 + Z = {(x0 + point).tolist()} leaves the fundamental domain", where)

    extrapolate = config.sweep["extrapolate"]
    lattice, _, _ = _extrapolated_torus_kernel(config, prob, p, [(x0 + z, x0 + zp) for z, zp in pairs], extrapolate)
    model = model_kernel_pairs(
        data,
        prob.phi,
        [(root_p * z, root_p * zp) for z, zp in pairs],
        box,
        spacing=root_p * spacings[0],
        extrapolate=extrapolate,
        check_box=False,
    )
    scale = p ** (-0.5 * d)
    rows = []
    for (z, zp), k_lat, rhs in zip(pairs, lattice, model):
        kappa = math.sqrt(volume_density_kappa(geom, x0, z) * volume_density_kappa(geom, x0, zp))
        lhs = scale * k_lat * kappa
        if gauge == "aligned":
            lhs = lhs * np.exp(-1j * p * (landau_gauge_phase(prob.field, x0, z) - landau_gauge_phase(prob.field, x0, zp)))
            err = float(np.abs(lhs - rhs).max())
        else:
            err = float(np.abs(np.abs(lhs) - np.abs(rhs)).max())
        separation = root_p * float(np.linalg.norm(z - zp))
        row = {f"Z{i + 1}": float(z[i]) for i in range(d)}
        row.update({f"Zp{i + 1}": float(zp[i]) for i in range(d)})
        row.update(
            {
                "lhs_re": float(lhs[0, 0].real),
                "lhs_im": float(lhs[0, 0].imag),
                "rhs_re": float(rhs[0, 0].real),
                "rhs_im": float(rhs[0, 0].imag),
                "err": err,
                "s_stat": err * (1.0 + separation) ** N * root_p,
            }
        )
        rows.append(row)
    logger.info("kernel compare p=%d at x0=%s: max err %.3g", p, x0.tolist(), max(r["err"] for r in rows))
    return KernelComparison(p=int(p), x0=tuple(float(v) for v in x0), N=N, gauge=gauge, table=pd.DataFrame(rows))


def loglog_slope(p_values: Sequence[float], values: Sequence[float]) -> float:
    values = np.asarray(values, dtype=float)
    floor = np.finfo(float).tiny
    return float(np.polyfit(np.log(np.asarray(p_values, dtype=float)), np.log(np.maximum(np.abs(values), floor)), 1)[0])


def offdiag_decay_check(
    config: Config,
    p_list: Optional[Sequence[int]] = None,
    phi: Optional[TestFunction] = None,
    x: Optional[Sequence[float]] = None,
    x_prime: Optional[Sequence[float]] = None,
    epsilon: Optional[float] = None,
    threshold: float = -3.0,
) -> tuple:
    """|K_{phi(H_p)}(x, x')| against p for d(x, x') > epsilon, with the fitted log-log slope."""
    where = "expansion_lab.offdiag_decay_check"
    prob = _problem(config, phi)
    geom = prob.geom
    decay = config.decay
    p_list = list(decay["p_list"] if p_list is None else p_list)
    # unset points default to the origin and its antipode
    x = np.asarray(_first_set(x, decay["x"], [0.0] * geom.dim), dtype=float)
    x_prime = np.asarray(_first_set(x_prime, decay["x_prime"], [0.5 * L for L in geom.side_lengths]), dtype=float)
    epsilon = float(decay["epsilon"] if epsilon is None else epsilon)
    if len(p_list) < 2:
        raise InputError("decay check needs at least two p values", where)
    distance = geom.periodic_distance(x, x_prime)
    if distance <= epsilon:
        raise InputError(f"points too close: d(x, x')={distance:.6g} <= epsilon={epsilon:.6g}", where)
    values = []
    for p in p_list:
        grid = grid_for_p(geom, prob.field, p, config.sweep["resolution"], config.sweep["min_points"])
        kernel = _torus_kernel_pairs(config, prob, p, grid, [(x, x_prime)])[0]
        values.append(float(np.abs(kernel).max()))
        logger.info("decay p=%d grid %s: |K|=%.6g", p, "x".join(map(str, grid)), values[-1])
    slope = loglog_slope(p_list, values)
    table = pd.DataFrame({"p": p_list, "abs_kernel": values, "slope": [slope] * len(p_list)})
    summary = {"slope": slope, "distance": distance, "threshold": threshold, "passes": bool(slope <= threshold)}
    return table, summary


def snap_to_lattice(Z: Sequence[float], spacing: float) -> np.ndarray:
    return np.round(np.asarray(Z, dtype=float) / spacing) * spacing


def remainder_slope(
    config: Config,
    p_list: Optional[Sequence[int]] = None,
    x0: Optional[Sequence[float]] = None,
    pair: Optional[Sequence] = None,
    phi: Optional[TestFunction] = None,
) -> tuple:
    """Slope of log|lhs - rhs| against log p for a fixed rescaled pair (W, W').

    Z = W / sqrt(p) is snapped to the torus lattice at each p; the snapped
    rescaled separation is reported.
    """
    geom = config.build_geometry()
    field = config.build_field(geom)
    p_list = list(config.kernel["p_list"] if p_list is None else p_list)
    pair = config.kernel["rescaled_pair"] if pair is None else pair
    if pair is None:
        raise InputError("remainder slope needs a rescaled pair", "expansion_lab.remainder_slope")
    w, wp = (np.asarray(v, dtype=float) for v in pair)
    rows = []
    for p in p_list:
        grid = grid_for_p(geom, field, p, config.sweep["resolution"], config.sweep["min_points"])
        h = geom.side_lengths[0] / grid[0]
        z, zp = snap_to_lattice(w / math.sqrt(p), h), snap_to_lattice(wp / math.sqrt(p), h)
        comparison = rescaled_kernel_compare(config, p, x0, [(z, zp)], phi)
        rows.append({"p": int(p), "separation": math.sqrt(p) * float(np.linalg.norm(z - zp)), "err": comparison.max_error})
    table = pd.DataFrame(rows)
    slope = loglog_slope(table["p"], table["err"])
    table["slope"] = slope
    return table, slope


def scaling_ratio(config: Config, p: int, phi: Optional[TestFunction] = None) -> float:
    """tr phi(H_{2p}) / tr phi(H_p), both dense."""
    prob = _problem(config, phi)
    traces = []
    for q in (p, 2 * p):
        grid = grid_for_p(prob.geom, prob.field, q, config.sweep["resolution"], config.sweep["min_points"])
        op = assemble_hp(prob.geom, prob.field, prob.potential, q, grid, resolution=config.sweep["resolution"])
        traces.append(trace_phi(op, prob.phi, method="dense", cap=config.engine["dense_cap"]).value)
    if traces[0] == 0.0:
        raise NumericalError(f"tr phi(H_p) vanishes at p={p}", "expansion_lab.scaling_ratio")
    return traces[1] / traces[0]
