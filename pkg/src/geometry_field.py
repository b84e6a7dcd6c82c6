"""Flat tori, quantized magnetic 2-forms and matrix potentials.

Fields are a constant flux-carrying part plus a finite Fourier series of
zero-mean perturbations; potentials are a constant Hermitian matrix plus
Fourier modes. Everything here is immutable and pure.
"""

import logging
from dataclasses import dataclass, field as dc_field
from itertools import combinations
from typing import Mapping, Optional, Sequence

import numpy as np

from src.errors import FluxQuantizationError, InputError

logger = logging.getLogger(__name__)

SUPPORTED_DIMS = (2, 3, 4)
FLUX_QUADRATURE_POINTS = 256
FLUX_RTOL = 1e-9


@dataclass(frozen=True)
class Geometry:
    dim: int
    side_lengths: tuple

    @property
    def volume(self) -> float:
        return float(np.prod(self.side_lengths))

    @property
    def min_length(self) -> float:
        return float(min(self.side_lengths))

    def wrap(self, points: np.ndarray) -> np.ndarray:
        """Map points into the fundamental domain [0, L_1) x ... x [0, L_d)."""
        lengths = np.asarray(self.side_lengths)
        return np.mod(np.asarray(points, dtype=float), lengths)

    def periodic_distance(self, x: Sequence[float], y: Sequence[float]) -> float:
        lengths = np.asarray(self.side_lengths)
        diff = np.mod(np.asarray(x, float) - np.asarray(y, float) + lengths / 2, lengths) - lengths / 2
        return float(np.linalg.norm(diff))


def make_flat_torus(d: int, side_lengths: Sequence[float]) -> Geometry:
    where = "geometry_field.make_flat_torus"
    if d not in SUPPORTED_DIMS:
        raise InputError(f"unsupported dimension {d} (expected 2 <= d <= 4)", where)
    lengths = tuple(float(x) for x in side_lengths)
    if len(lengths) != d:
        raise InputError(f"expected {d} side lengths, got {len(lengths)}", where)
    if any(not np.isfinite(x) or x <= 0 for x in lengths):
        raise InputError(f"side lengths must be positive, got {list(lengths)}", where)
    return Geometry(dim=d, side_lengths=lengths)


@dataclass(frozen=True, eq=False)
class FourierMode:
    """One term amplitude * exp(i q.x) with q = 2*pi*k/L."""

    k: tuple
    amplitude: np.ndarray


def wave_vector(geom: Geometry, k: Sequence[int]) -> np.ndarray:
    return 2.0 * np.pi * np.asarray(k, dtype=float) / np.asarray(geom.side_lengths)


def _fourier_sum(geom: Geometry, modes: Sequence[FourierMode], points: np.ndarray, shape: tuple) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    out = np.zeros(points.shape[:-1] + shape, dtype=complex)
    for mode in modes:
        phase = np.exp(1j * (points @ wave_vector(geom, mode.k)))
        out += phase[..., None, None] * mode.amplitude
    return out


def _check_reality(modes: Sequence[FourierMode], where: str) -> None:
    by_k = {m.k: m.amplitude for m in modes}
    for k, amp in by_k.items():
        partner = by_k.get(tuple(-x for x in k))
        scale = max(1.0, float(np.abs(amp).max()))
        if partner is None or np.abs(partner - np.conj(amp)).max() > 1e-12 * scale:
            raise InputError(f"mode k={list(k)} has no conjugate partner at k={[-x for x in k]}", where)


def _parse_modes(geom: Geometry, entries: Sequence[Mapping], shape: tuple, where: str) -> dict:
    amplitudes: dict = {}
    for entry in entries:
        try:
            k = tuple(int(x) for x in entry["k"])
            re = np.asarray(entry.get("re", 0.0), dtype=float)
            im = np.asarray(entry.get("im", 0.0), dtype=float)
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"malformed Fourier mode {entry!r}: {e}", where) from e
        if len(k) != geom.dim:
            raise InputError(f"wave-vector {list(k)} has wrong length for d={geom.dim}", where)
        if not any(k):
            raise InputError("zero-mode perturbations are not allowed; put constant parts in the constant block", where)
        value = np.broadcast_to(re + 1j * im, shape).astype(complex)
        amplitudes[k] = amplitudes.get(k, np.zeros(shape, dtype=complex)) + value
    return amplitudes


@dataclass(frozen=True, eq=False)
class FieldData:
    geometry: Geometry
    mean_field: np.ndarray
    modes: tuple = ()
    flux_integers: Mapping = dc_field(default_factory=dict)

    @property
    def mode(self) -> str:
        return "smooth-periodic" if self.modes else "constant"

    @property
    def is_zero(self) -> bool:
        return not self.modes and not np.any(self.mean_field)

    def coefficients(self, points: np.ndarray) -> np.ndarray:
        """B_ij at each point; ``points`` has shape (..., d), result (..., d, d)."""
        points = np.asarray(points, dtype=float)
        d = self.geometry.dim
        values = np.broadcast_to(self.mean_field, points.shape[:-1] + (d, d)).astype(float)
        if self.modes:
            values = values + _fourier_sum(self.geometry, self.modes, points, (d, d)).real
        return values

    def max_abs(self) -> float:
        if not self.modes:
            return float(np.abs(self.mean_field).max())
        per_axis = 32 if self.geometry.dim <= 3 else 12
        return float(np.abs(self.coefficients(sample_grid(self.geometry, per_axis))).max())


def sample_grid(geom: Geometry, per_axis: int) -> np.ndarray:
    axes = [np.arange(per_axis) * (length / per_axis) for length in geom.side_lengths]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, geom.dim)


def _plane_key(key: str, prefix: str, d: int, where: str) -> tuple:
    digits = key[len(prefix):].replace(",", "")
    if len(digits) != 2 or not digits.isdigit():
        raise InputError(f"field key {key!r} must look like '{prefix}ij'", where)
    i, j = int(digits[0]) - 1, int(digits[1]) - 1
    if not (0 <= i < d and 0 <= j < d) or i == j:
        raise InputError(f"field key {key!r} does not name a coordinate 2-plane of a {d}-torus", where)
    return i, j


def plane_flux(field: FieldData, i: int, j: int, points: int = FLUX_QUADRATURE_POINTS) -> float:
    """Trapezoidal flux of B_ij over the (i, j) coordinate 2-torus through the origin."""
    geom = field.geometry
    ti = np.arange(points) * (geom.side_lengths[i] / points)
    tj = np.arange(points) * (geom.side_lengths[j] / points)
    grid = np.zeros((points, points, geom.dim))
    grid[..., i], grid[..., j] = np.meshgrid(ti, tj, indexing="ij")
    values = field.coefficients(grid)[..., i, j]
    return float(values.mean() * geom.side_lengths[i] * geom.side_lengths[j])


def _check_closed(geom: Geometry, modes: Sequence[FourierMode], where: str) -> None:
    for mode in modes:
        q = wave_vector(geom, mode.k)
        amp = mode.amplitude
        scale = max(1.0, float(np.abs(amp).max() * np.abs(q).max()))
        for a, b, c in combinations(range(geom.dim), 3):
            cyclic = q[a] * amp[b, c] + q[b] * amp[c, a] + q[c] * amp[a, b]
            if abs(cyclic) > 1e-9 * scale:
                raise InputError(f"perturbation at k={list(mode.k)} is not closed (dB != 0)", where)


def make_field(geom: Geometry, spec: Optional[Mapping]) -> FieldData:
    """Build a FieldData from a config block and verify flux quantization.

    Accepted keys: ``B.ij`` (constant coefficient), ``flux.ij`` (integer flux
    quantum, B = 2*pi*c/(L_i L_j)) and ``perturbations`` mapping ``"ij"`` to a
    list of ``{k, re, im}`` Fourier modes.
    """
    where = "geometry_field.make_field"
    d = geom.dim
    spec = dict(spec or {})
    mean = np.zeros((d, d))
    assigned = np.zeros((d, d), dtype=bool)

    for key, value in spec.items():
        if key == "perturbations":
            continue
        if key.startswith("B."):
            i, j = _plane_key(key, "B.", d, where)
            b = float(value)
        elif key.startswith("flux."):
            i, j = _plane_key(key, "flux.", d, where)
            if float(value) != int(value):
                raise FluxQuantizationError(f"flux quantum {key}={value} must be an integer", where)
            b = 2.0 * np.pi * int(value) / (geom.side_lengths[i] * geom.side_lengths[j])
        else:
            raise InputError(f"unknown field key {key!r}", where)
        if assigned[i, j] and not np.isclose(mean[i, j], b, rtol=1e-12, atol=0.0):
            raise InputError(f"conflicting values for plane {i + 1}{j + 1}", where)
        if assigned[j, i] and not np.isclose(mean[j, i], -b, rtol=1e-12, atol=0.0):
            raise InputError(f"antisymmetry violated: B.{i + 1}{j + 1} != -B.{j + 1}{i + 1}", where)
        mean[i, j], mean[j, i] = b, -b
        assigned[i, j] = assigned[j, i] = True

    amplitudes: dict = {}
    for plane, entries in dict(spec.get("perturbations") or {}).items():
        i, j = _plane_key(str(plane), "", d, where)
        for k, amp in _parse_modes(geom, entries, (), where).items():
            block = amplitudes.setdefault(k, np.zeros((d, d), dtype=complex))
            block[i, j] += amp
            block[j, i] -= amp
    modes = tuple(FourierMode(k=k, amplitude=a) for k, a in sorted(amplitudes.items()))
    if modes:
        _check_reality(modes, where)
        _check_closed(geom, modes, where)

    draft = FieldData(geometry=geom, mean_field=mean, modes=modes)
    fluxes = {}
    for i, j in combinations(range(d), 2):
        flux = plane_flux(draft, i, j)
        quanta = flux / (2.0 * np.pi)
        nearest = round(quanta)
        if abs(quanta - nearest) > FLUX_RTOL * max(1.0, abs(quanta)):
            raise FluxQuantizationError(
                f"flux {flux:.10g}/2π not integral in plane {i + 1}{j + 1} ({quanta:.10g} quanta)", where
            )
        fluxes[(i, j)] = int(nearest)
    logger.info("field %s with flux integers %s", draft.mode, {f"{i + 1}{j + 1}": c for (i, j), c in fluxes.items()})
    return FieldData(geometry=geom, mean_field=mean, modes=modes, flux_integers=fluxes)


def skew_matrix_at(field: FieldData, x0: Sequence[float]) -> np.ndarray:
    m = field.coefficients(np.asarray(x0, dtype=float))
    return 0.5 * (m - m.T)


def volume_density_kappa(geom: Geometry, x0: Sequence[float], Z: Sequence[float]) -> float:
    """Riemannian volume density in normal coordinates; identically 1 on flat tori."""
    radius = float(np.linalg.norm(np.asarray(Z, dtype=float)))
    if radius >= 0.5 * geom.min_length:
        raise InputError(
            f"|Z|={radius:.6g} outside the injectivity radius {0.5 * geom.min_length:.6g}",
            "geometry_field.volume_density_kappa",
        )
    return 1.0


@dataclass(frozen=True, eq=False)
class PotentialData:
    geometry: Geometry
    rank: int
    constant: np.ndarray
    modes: tuple = ()

    @property
    def is_zero(self) -> bool:
        return not self.modes and not np.any(self.constant)

    def values(self, points: np.ndarray) -> np.ndarray:
        """V(x) at each point; ``points`` has shape (..., d), result (..., r, r)."""
        points = np.asarray(points, dtype=float)
        r = self.rank
        out = np.broadcast_to(self.constant, points.shape[:-1] + (r, r)).astype(complex)
        if self.modes:
            out = out + _fourier_sum(self.geometry, self.modes, points, (r, r))
        return out

    def eigenvalues(self, points: np.ndarray) -> np.ndarray:
        return np.linalg.eigvalsh(self.values(points))


def make_potential(geom: Geometry, spec: Optional[Mapping]) -> PotentialData:
    where = "geometry_field.make_potential"
    spec = dict(spec or {})
    unknown = set(spec) - {"rank", "constant", "modes"}
    if unknown:
        raise InputError(f"unknown potential keys {sorted(unknown)}", where)
    rank = int(spec.get("rank", 1))
    if rank < 1:
        raise InputError(f"potential rank must be positive, got {rank}", where)
    constant = np.asarray(spec.get("constant", 0.0), dtype=complex)
    if constant.ndim == 0:
        constant = constant * np.eye(rank)
    if constant.shape != (rank, rank):
        raise InputError(f"constant potential must be {rank}x{rank}, got shape {constant.shape}", where)

    amplitudes = _parse_modes(geom, spec.get("modes") or [], (rank, rank), where)
    modes = tuple(FourierMode(k=k, amplitude=a) for k, a in sorted(amplitudes.items()))
    potential = PotentialData(geometry=geom, rank=rank, constant=constant, modes=modes)

    samples = potential.values(sample_grid(geom, 8 if geom.dim <= 3 else 4))
    deviation = np.abs(samples - np.conj(np.swapaxes(samples, -1, -2))).max()
    if deviation > 1e-12 * max(1.0, float(np.abs(samples).max())):
        raise InputError(f"potential is not Hermitian (max deviation {deviation:.3g})", where)
    return potential
