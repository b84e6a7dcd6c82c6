"""Eigendecompositions, phi(H), traces (dense and KPM) and kernel columns."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np
import scipy.linalg as la
from numpy.polynomial import chebyshev as cheb

from src.errors import InputError, NumericalError, SizeCapError

if TYPE_CHECKING:
    from src.functional_calculus import TestFunction

logger = logging.getLogger(__name__)

DENSE_CAP = 20000
EIG_KERNEL_CAP = 2048
LANCZOS_STEPS = 48
SPECTRAL_PAD = 0.05
MIN_KPM_ORDER = 16
CHEBYSHEV_TAIL_TOL = 1e-14
CHEBYSHEV_MAX_ORDER = 1 << 15


@dataclass(frozen=True, eq=False)
class SpectrumResult:
    eigenvalues: np.ndarray
    eigenvectors: Optional[np.ndarray] = None
    residuals: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return int(self.eigenvalues.size)


@dataclass(frozen=True)
class TraceEstimate:
    value: float
    method: str
    stderr: float = 0.0
    chebyshev_order: int = 0
    probe_count: int = 0
    bounds: tuple = ()

    def as_record(self) -> dict:
        return {
            "value": self.value,
            "method": self.method,
            "stderr": self.stderr,
            "chebyshev_order": self.chebyshev_order,
            "probe_count": self.probe_count,
        }


def _matrix_of(op):
    return getattr(op, "matrix", op)


def _dense(op, cap: int, where: str) -> np.ndarray:
    matrix = _matrix_of(op)
    size = matrix.shape[0]
    if size > cap:
        raise SizeCapError(f"matrix size {size} exceeds dense cap {cap}", where)
    dense = matrix.toarray() if hasattr(matrix, "toarray") else np.asarray(matrix)
    return np.atleast_2d(dense)


def dense_spectrum(op, vectors: bool = True, cap: int = DENSE_CAP) -> SpectrumResult:
    where = "spectral_engine.dense_spectrum"
    matrix = _dense(op, cap, where)
    if not vectors:
        return SpectrumResult(eigenvalues=la.eigvalsh(matrix))
    values, vecs = la.eigh(matrix)
    residuals = np.linalg.norm(matrix @ vecs - vecs * values, axis=0)
    scale = max(1.0, float(np.abs(values).max(initial=0.0)))
    worst = float(residuals.max(initial=0.0))
    if worst > 1e-8 * scale:
        logger.warning("eigenpair residual %.3g above 1e-8*|H| (%.3g)", worst, scale)
    logger.info("dense spectrum of size %d: [%.6g, %.6g]", values.size, values[0], values[-1])
    return SpectrumResult(eigenvalues=values, eigenvectors=vecs, residuals=residuals)


class MatrixFunction:
    """phi(H) = V diag(phi(lambda)) V^* held in factored form."""

    def __init__(self, spectrum: SpectrumResult, phi: "TestFunction"):
        if spectrum.eigenvectors is None:
            raise InputError("matrix function needs eigenvectors", "spectral_engine.apply_phi_eig")
        self.spectrum = spectrum
        self.weights = np.asarray(phi(spectrum.eigenvalues), dtype=float)
        self._vectors = spectrum.eigenvectors

    @property
    def size(self) -> int:
        return self.spectrum.size

    def entry(self, i: int, j: int) -> complex:
        v = self._vectors
        return complex(np.sum(self.weights * v[i] * v[j].conj()))

    def columns(self, indices: Sequence[int]) -> np.ndarray:
        """phi(H)[:, indices] as an (n, m) array."""
        indices = np.asarray(indices, dtype=int)
        if indices.size and (indices.min() < 0 or indices.max() >= self.size):
            raise InputError(f"column index out of range [0, {self.size})", "spectral_engine.columns")
        v = self._vectors
        return v @ (self.weights[:, None] * v[indices].conj().T)

    def column(self, j: int) -> np.ndarray:
        return self.columns([j])[:, 0]

    def diagonal(self) -> np.ndarray:
        return np.einsum("ik,k,ik->i", self._vectors, self.weights, self._vectors.conj()).real

    def matrix(self) -> np.ndarray:
        v = self._vectors
        return (v * self.weights) @ v.conj().T

    def trace(self) -> float:
        return float(np.sum(self.weights))


def apply_phi_eig(op, phi: "TestFunction", spectrum: Optional[SpectrumResult] = None, cap: int = DENSE_CAP) -> MatrixFunction:
    if spectrum is None or spectrum.eigenvectors is None:
        spectrum = dense_spectrum(op, vectors=True, cap=cap)
    return MatrixFunction(spectrum, phi)


def rademacher_probe(n: int, seed: int, index: int) -> np.ndarray:
    """+-1 vector from a counter-based stream keyed by (probe index, seed)."""
    bits = np.random.Generator(np.random.Philox(key=np.array([index, seed], dtype=np.uint64)))
    return bits.integers(0, 2, size=n).astype(float) * 2.0 - 1.0


def jackson_kernel(order: int) -> np.ndarray:
    n = np.arange(order)
    q = math.pi / (order + 1)
    return ((order - n + 1) * np.cos(q * n) + np.sin(q * n) / math.tan(q)) / (order + 1)


def gershgorin_bounds(op) -> tuple:
    matrix = _matrix_of(op)
    if hasattr(matrix, "tocsr"):
        matrix = matrix.tocsr()
        diag = matrix.diagonal().real
        radius = np.asarray(abs(matrix).sum(axis=1)).ravel() - np.abs(matrix.diagonal())
    else:
        matrix = np.atleast_2d(np.asarray(matrix))
        diag = np.diag(matrix).real
        radius = np.abs(matrix).sum(axis=1) - np.abs(np.diag(matrix))
    return float((diag - radius).min()), float((diag + radius).max())


def spectral_bounds(op, steps: int = LANCZOS_STEPS, seed: int = 0) -> tuple:
    """Lanczos extremes widened by the Ritz residual and padded 5%, clipped to Gershgorin."""
    matrix = _matrix_of(op)
    n = matrix.shape[0]
    g_lo, g_hi = gershgorin_bounds(op)
    steps = max(1, min(steps, n))
    basis = np.zeros((n, steps), dtype=complex)
    alphas, betas = [], []
    q = rademacher_probe(n, seed, 0).astype(complex)
    q /= np.linalg.norm(q)
    beta = 0.0
    previous = np.zeros(n, dtype=complex)
    for k in range(steps):
        basis[:, k] = q
        w = matrix @ q
        alpha = float(np.vdot(q, w).real)
        w = w - alpha * q - beta * previous
        # full reorthogonalization
        w -= basis[:, : k + 1] @ (basis[:, : k + 1].conj().T @ w)
        alphas.append(alpha)
        beta = float(np.linalg.norm(w))
        if k == steps - 1 or beta < 1e-12 * max(1.0, abs(alpha)):
            break
        betas.append(beta)
        previous, q = q, w / beta
    tri_values, tri_vectors = la.eigh_tridiagonal(np.array(alphas), np.array(betas)) if len(alphas) > 1 else (
        np.array(alphas),
        np.ones((1, 1)),
    )
    residual_lo = beta * abs(tri_vectors[-1, 0])
    residual_hi = beta * abs(tri_vectors[-1, -1])
    lo, hi = tri_values[0] - residual_lo, tri_values[-1] + residual_hi
    pad = SPECTRAL_PAD * max(hi - lo, 1e-3 * max(1.0, abs(hi), abs(lo)))
    lo, hi = max(lo - pad, g_lo), min(hi + pad, g_hi)
    if not hi > lo:
        lo, hi = g_lo - 0.5, g_hi + 0.5
    logger.debug("spectral bounds [%.6g, %.6g] (gershgorin [%.6g, %.6g])", lo, hi, g_lo, g_hi)
    return float(lo), float(hi)


def _chebyshev_coefficients(phi: "TestFunction", bounds: tuple, degree: int) -> np.ndarray:
    center, half = 0.5 * (bounds[0] + bounds[1]), 0.5 * (bounds[1] - bounds[0])
    return cheb.chebinterpolate(lambda x: phi(center + half * x), degree)


def _chebyshev_sum(matrix, bounds: tuple, coefficients: np.ndarray, block: np.ndarray) -> np.ndarray:
    """sum_n c_n T_n(H~) block by the three-term recurrence, H~ mapped onto [-1, 1]."""
    center, half = 0.5 * (bounds[0] + bounds[1]), 0.5 * (bounds[1] - bounds[0])

    def scaled(v):
        return (matrix @ v - center * v) / half

    t_prev = block
    total = coefficients[0] * t_prev
    if coefficients.size == 1:
        return total
    t_curr = scaled(block)
    total = total + coefficients[1] * t_curr
    for c in coefficients[2:]:
        t_prev, t_curr = t_curr, 2.0 * scaled(t_curr) - t_prev
        total = total + c * t_curr
    return total


def chebyshev_apply(
    op,
    phi: "TestFunction",
    vectors: np.ndarray,
    bounds: Optional[tuple] = None,
    tol: float = CHEBYSHEV_TAIL_TOL,
    max_order: int = CHEBYSHEV_MAX_ORDER,
) -> np.ndarray:
    """phi(H) @ vectors without diagonalization, doubling the degree until the coefficient tail is below tol."""
    where = "spectral_engine.chebyshev_apply"
    matrix = _matrix_of(op)
    if bounds is None:
        # Gershgorin encloses the spectrum rigorously; T_n grows outside [-1, 1]
        lo, hi = gershgorin_bounds(op)
        bounds = (lo, hi) if hi - lo > 1e-12 * max(1.0, abs(hi)) else (lo - 0.5, hi + 0.5)
    degree = 64
    while True:
        coefficients = _chebyshev_coefficients(phi, bounds, degree)
        scale = max(float(np.abs(coefficients).max(initial=0.0)), 1e-300)
        if np.abs(coefficients[-8:]).max() <= tol * max(scale, 1.0):
            break
        degree *= 2
        if degree > max_order:
            raise NumericalError(f"Chebyshev expansion did not converge below degree {max_order}", where)
    cut = np.nonzero(np.abs(coefficients) > 0.1 * tol * max(scale, 1.0))[0]
    coefficients = coefficients[: (cut[-1] + 1 if cut.size else 1)]
    logger.debug("chebyshev_apply: degree %d on [%.6g, %.6g]", coefficients.size - 1, *bounds)
    vectors = np.asarray(vectors, dtype=complex)
    return _chebyshev_sum(matrix, bounds, coefficients, vectors)


def _kpm_probe_sample(matrix, bounds: tuple, coefficients: np.ndarray, seed: int, index: int) -> float:
    probe = rademacher_probe(matrix.shape[0], seed, index)
    return float(np.vdot(probe, _chebyshev_sum(matrix, bounds, coefficients, probe.astype(complex))).real)


def trace_phi(
    op,
    phi: "TestFunction",
    method: str = "dense",
    kpm_order: int = 128,
    probes: int = 32,
    seed: int = 0,
    damping: str = "jackson",
    workers: Optional[int] = None,
    cap: int = DENSE_CAP,
    spectrum: Optional[SpectrumResult] = None,
) -> TraceEstimate:
    where = "spectral_engine.trace_phi"
    if method not in ("dense", "kpm"):
        raise InputError(f"unknown trace method {method!r}", where)
    if method == "kpm":
        if kpm_order < MIN_KPM_ORDER:
            raise InputError(f"kpm_order must be >= {MIN_KPM_ORDER}, got {kpm_order}", where)
        if probes < 1:
            raise InputError(f"probes must be >= 1, got {probes}", where)
        if damping not in ("jackson", "none"):
            raise InputError(f"unknown KPM damping {damping!r}", where)
    if phi.decay == "zero":
        return TraceEstimate(value=0.0, method=method, chebyshev_order=kpm_order if method == "kpm" else 0, probe_count=probes if method == "kpm" else 0)

    if method == "dense":
        values = spectrum.eigenvalues if spectrum is not None else dense_spectrum(op, vectors=False, cap=cap).eigenvalues
        return TraceEstimate(value=float(np.sum(phi(values))), method="dense")

    matrix = _matrix_of(op)
    bounds = spectral_bounds(op, seed=seed)
    coefficients = _chebyshev_coefficients(phi, bounds, kpm_order - 1)
    if damping == "jackson":
        coefficients = coefficients * jackson_kernel(kpm_order)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        samples = np.array(list(pool.map(lambda i: _kpm_probe_sample(matrix, bounds, coefficients, seed, i), range(probes))))
    value = float(samples.sum() / probes)
    if probes > 1:
        stderr = float(samples.std(ddof=1) / math.sqrt(probes))
    else:
        logger.warning("single KPM probe: stderr reported as 0")
        stderr = 0.0
    logger.info("kpm trace %.10g +- %.3g (order %d, %d probes)", value, stderr, kpm_order, probes)
    return TraceEstimate(value=value, method="kpm", stderr=stderr, chebyshev_order=kpm_order, probe_count=probes, bounds=bounds)


def kernel_columns(
    op,
    phi: "TestFunction",
    site_indices: Sequence[int],
    method: str = "auto",
    function: Optional[MatrixFunction] = None,
    eig_cap: int = EIG_KERNEL_CAP,
) -> np.ndarray:
    """Kernel blocks K(x, x_s) for each requested site s, shape (m, n_sites, r, r).

    Values are phi(H) entries divided by the lattice cell volume so they
    approximate the continuum kernel against dx.
    """
    where = "spectral_engine.kernel_columns"
    rank = int(getattr(op, "rank", 1))
    n_sites = _matrix_of(op).shape[0] // rank
    sites = np.atleast_1d(np.asarray(site_indices, dtype=int))
    if sites.size and (sites.min() < 0 or sites.max() >= n_sites):
        raise InputError(f"site index out of range [0, {n_sites})", where)
    if method == "auto":
        method = "eig" if function is not None or n_sites * rank <= eig_cap else "chebyshev"
    flat = (sites[:, None] * rank + np.arange(rank)[None, :]).ravel()
    if method == "eig":
        function = function if function is not None else apply_phi_eig(op, phi)
        cols = function.columns(flat)
    elif method == "chebyshev":
        unit = np.zeros((n_sites * rank, flat.size), dtype=complex)
        unit[flat, np.arange(flat.size)] = 1.0
        cols = chebyshev_apply(op, phi, unit)
    else:
        raise InputError(f"unknown kernel method {method!r}", where)
    cell = float(getattr(op, "cell_volume", 1.0))
    # cols[(x, a), (s, b)] -> out[s, x, a, b]
    blocks = cols.reshape(n_sites, rank, sites.size, rank).transpose(2, 0, 1, 3)
    return blocks / cell


def kernel_column(op, phi: "TestFunction", site_index: int, method: str = "auto", function: Optional[MatrixFunction] = None) -> np.ndarray:
    """K(., x_site); a vector for rank 1, an (n_sites, r, r) array otherwise."""
    blocks = kernel_columns(op, phi, [site_index], method=method, function=function)[0]
    return blocks[:, 0, 0] if blocks.shape[-1] == 1 else blocks
