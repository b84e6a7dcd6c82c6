"""Test functions, almost-analytic extensions and the Helffer-Sjostrand oracle.

phi(H) = -(1/pi) * integral over C of dbar(phi~)(z) (z - H)^{-1} dA(z)

The integral is evaluated on the upper half-plane only; the lower half is the
adjoint of the upper half because every family here is real on the real axis.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np
from numpy.polynomial import Polynomial
from scipy.optimize import brentq

from src.errors import InputError, NumericalError

logger = logging.getLogger(__name__)

FAMILIES = ("gaussian", "gaussian_poly", "bump", "exp", "zero", "sum", "product")
SMOOTH_ORDER_CAP = 40
DEFAULT_BUMP_ORDER = 8
GAUSSIAN_SUPPORT_WIDTHS = 10.0
DEFAULT_CUTOFF_SCALE = 0.25


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Real test function phi with derivatives, tail bounds and a support hint.

    ``decay`` is "two-sided" (Schwartz), "one-sided" (decays only as
    lambda -> +inf, e.g. exp(-t lambda)), "compact" or "zero".
    """

    __test__ = False

    family: str
    params: Mapping
    derivative_rule: Callable[[np.ndarray, int], np.ndarray] = dc_field(repr=False)
    tail_rule: Callable[[float], float] = dc_field(repr=False)
    support: tuple = (-np.inf, np.inf)
    decay: str = "two-sided"
    max_order: int = SMOOTH_ORDER_CAP

    def __call__(self, lam) -> np.ndarray:
        return self.derivative(lam, 0)

    def derivative(self, lam, k: int = 1) -> np.ndarray:
        if k < 0 or k > self.max_order:
            raise InputError(
                f"{self.family} test function has derivatives up to order {self.max_order}, asked for {k}",
                "functional_calculus.derivative",
            )
        return self.derivative_rule(np.asarray(lam, dtype=float), int(k))

    def tail_bound(self, lam: float) -> float:
        """sup of |phi| over [lam, +inf)."""
        return float(self.tail_rule(float(lam)))

    def support_hint(self) -> tuple:
        """Interval outside which phi is negligible (below about 1e-18 relative)."""
        return self.support

    def upper_cutoff(self, eps: float = 1e-16) -> float:
        """Smallest lambda found with tail_bound(lambda) < eps."""
        if self.decay == "zero":
            return -np.inf
        if np.isfinite(self.support[1]) and self.decay == "compact":
            return float(self.support[1])
        start = float(self.support[0]) if np.isfinite(self.support[0]) else 0.0
        if self.tail_bound(start) < eps:
            return start
        step = 1.0
        while self.tail_bound(start + step) >= eps:
            step *= 2.0
            if step > 1e12:
                raise NumericalError(f"{self.family} tail never drops below {eps}", "functional_calculus.upper_cutoff")

        def gap(lam: float) -> float:
            return math.log(self.tail_bound(lam) + 1e-300) - math.log(eps)

        return float(brentq(gap, start + step / 2.0 if step > 1.0 else start, start + step, xtol=1e-10))

    def scaled(self, factor: float) -> "TestFunction":
        factor = float(factor)
        return TestFunction(
            family=self.family,
            params=dict(self.params, amplitude=self.params.get("amplitude", 1.0) * factor),
            derivative_rule=lambda lam, k: factor * self.derivative_rule(lam, k),
            tail_rule=lambda lam: abs(factor) * self.tail_rule(lam),
            support=self.support,
            decay="zero" if factor == 0.0 else self.decay,
            max_order=self.max_order,
        )

    def __add__(self, other: "TestFunction") -> "TestFunction":
        return combine_sum([self, other])

    def __mul__(self, other):
        if isinstance(other, TestFunction):
            return combine_product([self, other])
        return self.scaled(other)

    __rmul__ = __mul__


def zero_function() -> TestFunction:
    return TestFunction(
        family="zero",
        params={},
        derivative_rule=lambda lam, k: np.zeros_like(lam, dtype=float),
        tail_rule=lambda lam: 0.0,
        support=(0.0, 0.0),
        decay="zero",
    )


def hermite_family(center: float, width: float, degree: int = 0, amplitude: float = 1.0) -> TestFunction:
    """amplitude * u^degree * exp(-u^2/2) with u = (lambda - center)/width.

    d^k/dlambda^k = amplitude * width^{-k} * q_k(u) exp(-u^2/2), q_{k+1} = q_k' - u q_k.
    """
    polys = [Polynomial.basis(degree)]
    u_poly = Polynomial([0.0, 1.0])
    for _ in range(SMOOTH_ORDER_CAP):
        polys.append(polys[-1].deriv() - u_poly * polys[-1])

    def rule(lam: np.ndarray, k: int) -> np.ndarray:
        u = (lam - center) / width
        return amplitude * width ** (-k) * polys[k](u) * np.exp(-0.5 * u * u)

    peak_u = math.sqrt(degree)

    def tail(lam: float) -> float:
        u = max((lam - center) / width, peak_u)
        return abs(amplitude) * (u**degree if degree else 1.0) * math.exp(-0.5 * u * u)

    reach = (GAUSSIAN_SUPPORT_WIDTHS + 0.5 * degree) * width
    return TestFunction(
        family="gaussian" if degree == 0 else "gaussian_poly",
        params={"center": center, "width": width, "degree": degree, "amplitude": amplitude},
        derivative_rule=rule,
        tail_rule=tail,
        support=(center - reach, center + reach),
        decay="two-sided",
    )


def exp_function(t: float = 1.0, amplitude: float = 1.0) -> TestFunction:
    def rule(lam: np.ndarray, k: int) -> np.ndarray:
        return amplitude * (-t) ** k * np.exp(-t * lam)

    return TestFunction(
        family="exp",
        params={"t": t, "amplitude": amplitude},
        derivative_rule=rule,
        tail_rule=lambda lam: abs(amplitude) * math.exp(-t * lam),
        support=(-np.inf, np.inf),
        decay="one-sided",
        max_order=64,
    )


def smoothstep(order: int) -> Polynomial:
    """S_N(x) = x^{N+1} sum_n C(N+n, n) C(2N+1, N-n) (-x)^n; C^N at 0 and 1."""
    coef = np.zeros(2 * order + 2)
    for n in range(order + 1):
        coef[order + 1 + n] = math.comb(order + n, n) * math.comb(2 * order + 1, order - n) * (-1) ** n
    return Polynomial(coef)


def bump_function(
    a: float,
    b: float,
    order: int = DEFAULT_BUMP_ORDER,
    ramp: Optional[float] = None,
    ramp_fraction: float = 0.25,
    amplitude: float = 1.0,
) -> TestFunction:
    """Plateau bump: 0 outside [a, b], amplitude on [a + ramp, b - ramp], C^order ramps."""
    where = "functional_calculus.bump_function"
    if not a < b:
        raise InputError(f"bump support needs a < b, got [{a}, {b}]", where)
    width = ramp_fraction * (b - a) if ramp is None else float(ramp)
    if not 0.0 < width <= 0.5 * (b - a):
        raise InputError(f"bump ramp width {width} must lie in (0, (b-a)/2]", where)
    if order < 1:
        raise InputError(f"bump order must be >= 1, got {order}", where)
    step = smoothstep(order)
    step_derivs = [step]
    for _ in range(order + 1):
        step_derivs.append(step_derivs[-1].deriv())

    def ramp_value(x: np.ndarray, j: int) -> np.ndarray:
        inside = (x > 0.0) & (x < 1.0)
        poly = step_derivs[j] if j < len(step_derivs) else Polynomial([0.0])
        out = np.where(inside, poly(np.clip(x, 0.0, 1.0)), 0.0)
        if j == 0:
            out = np.where(x >= 1.0, 1.0, out)
        return out

    def rule(lam: np.ndarray, k: int) -> np.ndarray:
        x = (lam - a) / width
        y = (b - lam) / width
        total = np.zeros_like(lam, dtype=float)
        for j in range(k + 1):
            total = total + (
                math.comb(k, j)
                * ramp_value(x, j)
                * width ** (-j)
                * ramp_value(y, k - j)
                * (-1.0 / width) ** (k - j)
            )
        return amplitude * total

    return TestFunction(
        family="bump",
        params={"support": [a, b], "order": order, "ramp": width, "amplitude": amplitude},
        derivative_rule=rule,
        tail_rule=lambda lam: abs(amplitude) if lam < b else 0.0,
        support=(a, b),
        decay="compact",
        max_order=order,
    )


def plateau_window(lo: float, hi: float, ramp: float, order: int = DEFAULT_BUMP_ORDER + 4) -> TestFunction:
    """Equal to 1 on [lo, hi] and 0 outside [lo - ramp, hi + ramp]."""
    return bump_function(lo - ramp, hi + ramp, order=order, ramp=ramp)


def combine_sum(terms: Sequence[TestFunction]) -> TestFunction:
    terms = [t for t in terms if t.decay != "zero"]
    if not terms:
        return zero_function()
    if len(terms) == 1:
        return terms[0]
    lo = min(t.support[0] for t in terms)
    hi = max(t.support[1] for t in terms)
    decays = {t.decay for t in terms}
    decay = "one-sided" if "one-sided" in decays else "two-sided" if "two-sided" in decays else "compact"
    return TestFunction(
        family="sum",
        params={"terms": [dict(t.params, family=t.family) for t in terms]},
        derivative_rule=lambda lam, k: sum(t.derivative_rule(lam, k) for t in terms),
        tail_rule=lambda lam: sum(t.tail_rule(lam) for t in terms),
        support=(lo, hi),
        decay=decay,
        max_order=min(t.max_order for t in terms),
    )


def combine_product(factors: Sequence[TestFunction]) -> TestFunction:
    if any(f.decay == "zero" for f in factors):
        return zero_function()
    if len(factors) == 1:
        return factors[0]
    first, rest = factors[0], combine_product(factors[1:])

    def rule(lam: np.ndarray, k: int) -> np.ndarray:
        return sum(math.comb(k, j) * first.derivative_rule(lam, j) * rest.derivative_rule(lam, k - j) for j in range(k + 1))

    lo = max(first.support[0], rest.support[0])
    hi = min(first.support[1], rest.support[1])
    decays = {first.decay, rest.decay}
    if "compact" in decays:
        decay = "compact"
    elif np.isfinite(lo) and np.isfinite(hi):
        decay = "two-sided"
    else:
        decay = "one-sided" if decays == {"one-sided"} else "two-sided"
    return TestFunction(
        family="product",
        params={"factors": [dict(first.params, family=first.family), dict(rest.params, family=rest.family)]},
        derivative_rule=rule,
        tail_rule=lambda lam: first.tail_rule(lam) * rest.tail_rule(lam),
        support=(lo, hi),
        decay=decay,
        max_order=min(first.max_order, rest.max_order),
    )


_FAMILY_KEYS = {
    "gaussian": {"center", "width", "amplitude"},
    "gaussian_poly": {"center", "width", "degree", "amplitude"},
    "bump": {"support", "order", "ramp_fraction", "amplitude"},
    "exp": {"t", "amplitude"},
    "zero": set(),
    "sum": {"terms", "amplitude"},
    "product": {"factors", "amplitude"},
}


def make_test_function(spec: Union[Mapping, TestFunction]) -> TestFunction:
    """Build a TestFunction from a ``phi`` config block."""
    where = "functional_calculus.make_test_function"
    if isinstance(spec, TestFunction):
        return spec
    spec = dict(spec or {})
    family = spec.pop("family", None)
    if family not in _FAMILY_KEYS:
        raise InputError(f"unknown test-function family {family!r}; expected one of {list(FAMILIES)}", where)
    unknown = set(spec) - _FAMILY_KEYS[family]
    if unknown:
        raise InputError(f"unknown key {sorted(unknown)[0]} for family {family}", where)
    amplitude = float(spec.get("amplitude", 1.0))

    if family in ("gaussian", "gaussian_poly"):
        if "width" not in spec:
            raise InputError(f"{family} needs 'width'", where)
        width = float(spec["width"])
        if not width > 0.0:
            raise InputError(f"gaussian width must be positive, got {width}", where)
        degree = int(spec.get("degree", 0)) if family == "gaussian_poly" else 0
        if degree < 0:
            raise InputError(f"gaussian_poly degree must be >= 0, got {degree}", where)
        return hermite_family(float(spec.get("center", 0.0)), width, degree, amplitude)
    if family == "bump":
        support = spec.get("support")
        if support is None or len(support) != 2:
            raise InputError("bump needs 'support': [a, b]", where)
        return bump_function(
            float(support[0]),
            float(support[1]),
            order=int(spec.get("order", DEFAULT_BUMP_ORDER)),
            ramp_fraction=float(spec.get("ramp_fraction", 0.25)),
            amplitude=amplitude,
        )
    if family == "exp":
        t = float(spec.get("t", 1.0))
        if not t > 0.0:
            raise InputError(f"exp rate t must be positive, got {t}", where)
        return exp_function(t, amplitude)
    if family == "zero":
        return zero_function()
    if family == "sum":
        combined = combine_sum([make_test_function(term) for term in spec.get("terms") or []])
    else:
        factors = spec.get("factors") or []
        if not factors:
            raise InputError("product needs at least one factor", where)
        combined = combine_product([make_test_function(factor) for factor in factors])
    return combined if amplitude == 1.0 else combined.scaled(amplitude)


def _smooth_cutoff_parts(t: np.ndarray) -> tuple:
    """chi(t) and chi'(t): 1 on [-1, 1], 0 outside [-2, 2], exp(-1/u) gluing."""
    tau = np.abs(t)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        u_in = 2.0 - tau
        u_out = tau - 1.0
        g_in = np.where(u_in > 0.0, np.exp(-1.0 / np.where(u_in > 0.0, u_in, 1.0)), 0.0)
        g_out = np.where(u_out > 0.0, np.exp(-1.0 / np.where(u_out > 0.0, u_out, 1.0)), 0.0)
        dg_in = np.where(u_in > 0.0, g_in / np.where(u_in > 0.0, u_in, 1.0) ** 2, 0.0)
        dg_out = np.where(u_out > 0.0, g_out / np.where(u_out > 0.0, u_out, 1.0) ** 2, 0.0)
        denom = g_in + g_out
        chi = np.where(tau <= 1.0, 1.0, np.where(tau >= 2.0, 0.0, g_in / np.where(denom > 0, denom, 1.0)))
        ramp = (tau > 1.0) & (tau < 2.0)
        dchi_dtau = np.where(ramp, -(dg_in * g_out + g_in * dg_out) / np.where(denom > 0, denom, 1.0) ** 2, 0.0)
    return chi, np.sign(t) * dchi_dtau


@dataclass(frozen=True, eq=False)
class AlmostAnalytic:
    """phi~(mu + i nu) = chi(nu / (s <mu>)) sum_{k<=l} phi^(k)(mu) (i nu)^k / k!."""

    base: TestFunction
    order: int
    cutoff_scale: float
    mu_range: tuple

    def _taylor(self, mu: np.ndarray, nu: np.ndarray) -> np.ndarray:
        total = np.zeros(np.broadcast(mu, nu).shape, dtype=complex)
        for k in range(self.order + 1):
            total = total + self.base.derivative(mu, k) * (1j * nu) ** k / math.factorial(k)
        return total

    def _scaled_height(self, mu: np.ndarray, nu: np.ndarray) -> tuple:
        bracket = np.sqrt(1.0 + mu * mu)
        return nu / (self.cutoff_scale * bracket), bracket

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        mu, nu = z.real, z.imag
        t, _ = self._scaled_height(mu, nu)
        chi, _ = _smooth_cutoff_parts(t)
        return chi * self._taylor(mu, nu)

    def dbar(self, z) -> np.ndarray:
        """(1/2)(d/dmu + i d/dnu) phi~, in closed form."""
        z = np.asarray(z, dtype=complex)
        mu, nu = z.real, z.imag
        t, bracket = self._scaled_height(mu, nu)
        chi, dchi = _smooth_cutoff_parts(t)
        ell = self.order
        remainder = self.base.derivative(mu, ell + 1) * (1j * nu) ** ell / math.factorial(ell)
        s = self.cutoff_scale
        dt = -nu * mu / (s * bracket**3) + 1j / (s * bracket)
        cutoff_part = np.where(dchi != 0.0, dchi * dt, 0.0)
        taylor = self._taylor(mu, nu) if np.any(cutoff_part != 0.0) else 0.0
        return 0.5 * (chi * remainder + taylor * cutoff_part)

    @property
    def nu_max(self) -> float:
        lo, hi = self.mu_range
        return 2.0 * self.cutoff_scale * math.sqrt(1.0 + max(lo * lo, hi * hi))


def almost_analytic_extension(
    phi: TestFunction,
    order: int,
    cutoff_scale: float = DEFAULT_CUTOFF_SCALE,
    mu_range: Optional[Sequence[float]] = None,
) -> AlmostAnalytic:
    """Taylor extension of order ``order`` cut off by chi(nu / (s <mu>)).

    s = ``cutoff_scale``; s = 1 is the textbook cutoff chi(nu / <mu>). The
    default 0.25 gives the same dbar decay with smaller Taylor terms in the
    quadrature box, and is also what the ``hs.cutoff_scale`` config key uses.
    """
    where = "functional_calculus.almost_analytic_extension"
    if order < 2:
        raise InputError(f"extension order must be >= 2, got {order}", where)
    if order + 1 > phi.max_order:
        raise InputError(f"{phi.family} has derivatives to order {phi.max_order}, extension needs {order + 1}", where)
    if not cutoff_scale > 0.0:
        raise InputError(f"cutoff scale must be positive, got {cutoff_scale}", where)
    box = tuple(mu_range) if mu_range is not None else phi.support_hint()
    return AlmostAnalytic(base=phi, order=int(order), cutoff_scale=float(cutoff_scale), mu_range=(float(box[0]), float(box[1])))


def dbar_decay_slope(ext: AlmostAnalytic, nu_range: Sequence[float] = (1e-3, 1e-1), samples: int = 9, mu_points: int = 401) -> float:
    """Log-log slope of max_mu |dbar phi~(mu + i nu)| against nu."""
    lo, hi = ext.mu_range
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise InputError("extension has an unbounded mu range", "functional_calculus.dbar_decay_slope")
    mu = np.linspace(lo, hi, mu_points)
    nus = np.geomspace(nu_range[0], nu_range[1], samples)
    peaks = np.array([np.abs(ext.dbar(mu + 1j * nu)).max() for nu in nus])
    if np.any(peaks <= 0.0):
        return math.inf
    return float(np.polyfit(np.log(nus), np.log(peaks), 1)[0])


@dataclass(frozen=True)
class HSQuadrature:
    """Midpoint mesh over [mu_lo, mu_hi] x [nu_min, 2 s <mu>] (nu rescaled per mu row)."""

    mu_points: int = 400
    nu_points: int = 400
    nu_min: float = 1e-3
    workers: Optional[int] = None

    @classmethod
    def from_mapping(cls, values: Optional[Union[Mapping, "HSQuadrature"]]) -> "HSQuadrature":
        if isinstance(values, HSQuadrature):
            return values
        values = dict(values or {})
        mesh = values.get("mesh", [cls.mu_points, cls.nu_points])
        return cls(
            mu_points=int(mesh[0]),
            nu_points=int(mesh[1]),
            nu_min=float(values.get("nu_min", cls.nu_min)),
            workers=values.get("workers"),
        )


def _dense_hermitian(op, where: str) -> np.ndarray:
    matrix = getattr(op, "matrix", op)
    matrix = matrix.toarray() if hasattr(matrix, "toarray") else np.asarray(matrix)
    matrix = np.atleast_2d(matrix).astype(complex)
    if matrix.shape[0] != matrix.shape[1]:
        raise InputError(f"operator must be square, got {matrix.shape}", where)
    defect = np.abs(matrix - matrix.conj().T).max() if matrix.size else 0.0
    if defect > 1e-10 * max(1.0, float(np.abs(matrix).max())):
        raise InputError(f"operator is not Hermitian (defect {defect:.3g})", where)
    return matrix


def gershgorin_interval(matrix: np.ndarray) -> tuple:
    diag = np.real(np.diag(matrix))
    radius = np.abs(matrix).sum(axis=1) - np.abs(np.diag(matrix))
    return float((diag - radius).min()), float((diag + radius).max())


def _windowed_extension(ext: AlmostAnalytic, matrix: np.ndarray) -> AlmostAnalytic:
    """Give ext a compact mu box, windowing phi on the Gershgorin interval when needed."""
    lo, hi = ext.mu_range
    if np.isfinite(lo) and np.isfinite(hi):
        return ext
    spec_lo, spec_hi = gershgorin_interval(matrix)
    ramp = max(1.0, 0.25 * (spec_hi - spec_lo))
    window = plateau_window(spec_lo - 0.05 * ramp, spec_hi + 0.05 * ramp, ramp)
    windowed = combine_product([ext.base, window])
    logger.debug("windowed %s on [%.4g, %.4g]", ext.base.family, spec_lo, spec_hi)
    return almost_analytic_extension(windowed, ext.order, ext.cutoff_scale, windowed.support_hint())


def _resolvent_row(matrix: np.ndarray, ext: AlmostAnalytic, mu: float, dmu: float, quad: HSQuadrature, power: int) -> np.ndarray:
    """sum over nu nodes of dbar phi~(z) (z - H)^{-power} dmu dnu for one mu column of the mesh."""
    bracket = math.sqrt(1.0 + mu * mu)
    nu_top = 2.0 * ext.cutoff_scale * bracket
    if quad.nu_min >= nu_top:
        return np.zeros_like(matrix)
    edges = np.linspace(quad.nu_min, nu_top, quad.nu_points + 1)
    nus = 0.5 * (edges[1:] + edges[:-1])
    weights = ext.dbar(mu + 1j * nus) * (edges[1] - edges[0]) * dmu
    keep = weights != 0.0
    if not np.any(keep):
        return np.zeros_like(matrix)
    z = mu + 1j * nus[keep]
    eye = np.eye(matrix.shape[0])
    shifted = z[:, None, None] * eye - matrix
    try:
        resolvents = np.linalg.inv(shifted)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular resolvent at mu={mu:.6g}", "functional_calculus.apply_phi_hs") from exc
    if power > 1:
        resolvents = np.linalg.matrix_power(resolvents, power)
    return np.tensordot(weights[keep], resolvents, axes=1)


def _hs_integral(op, ext: AlmostAnalytic, quadrature, power: int, where: str) -> np.ndarray:
    matrix = _dense_hermitian(op, where)
    quad = HSQuadrature.from_mapping(quadrature)
    if quad.nu_min <= 0.0:
        raise InputError("nu_min must be positive; real-axis nodes are excluded", where)
    if ext.base.decay == "zero":
        return np.zeros_like(matrix)
    ext = _windowed_extension(ext, matrix)
    lo, hi = ext.mu_range
    edges = np.linspace(lo, hi, quad.mu_points + 1)
    mus = 0.5 * (edges[1:] + edges[:-1])
    dmu = edges[1] - edges[0]
    with ThreadPoolExecutor(max_workers=quad.workers) as pool:
        rows = list(pool.map(lambda mu: _resolvent_row(matrix, ext, float(mu), dmu, quad, power), mus))
    upper = np.zeros_like(matrix)
    for row in rows:
        upper = upper + row
    return upper


def apply_phi_hs(op, ext: AlmostAnalytic, quadrature=None) -> np.ndarray:
    """phi(H) through resolvent quadrature; an oracle independent of diagonalization."""
    where = "functional_calculus.apply_phi_hs"
    upper = _hs_integral(op, ext, quadrature, 1, where)
    result = -(upper + upper.conj().T) / math.pi
    logger.debug("HS result for %dx%d operator, order %d", result.shape[0], result.shape[1], ext.order)
    return result


def apply_phi_derivative_hs(op, ext: AlmostAnalytic, k: int, quadrature=None) -> np.ndarray:
    """phi^(k)(H) = -(k!/pi) * integral of dbar phi~(z) (z - H)^{-k-1} dA."""
    where = "functional_calculus.apply_phi_derivative_hs"
    if k < 0:
        raise InputError(f"derivative order must be >= 0, got {k}", where)
    if ext.order < k + 2:
        raise InputError(f"extension order {ext.order} too low for derivative {k}; need >= {k + 2}", where)
    upper = _hs_integral(op, ext, quadrature, k + 1, where)
    return -math.factorial(k) * (upper + upper.conj().T) / math.pi
