"""Acceptance suite run by ``scbl verify-all`` over the reference configs."""

import dataclasses
import logging
import math
import tempfile
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pandas as pd

from src.config import CODE_VERSION, Config, parse_config
from src.database import dispose_engines
from src.errors import ConfigError, LabError
from src.expansion_lab import (
    fit_half_power_expansion,
    grid_for_p,
    leading_integral,
    offdiag_decay_check,
    remainder_slope,
    trace_sweep,
)
from src.functional_calculus import (
    HSQuadrature,
    almost_analytic_extension,
    apply_phi_hs,
    bump_function,
    make_test_function,
)
from src.model_operator import (
    b_eigenstructure,
    f0_point,
    model_kernel_diag_separable,
    model_kernel_numeric,
)
from src.operator_assembly import assemble_hp
from src.reports import FLOAT_FORMAT, dumps_json
from src.spectral_engine import apply_phi_eig, trace_phi

logger = logging.getLogger(__name__)

REFERENCE_CONFIGS = (
    "landau_t2",
    "free_t2",
    "landau_t3",
    "variable_t2",
    "decay_free",
    "decay_landau",
    "model_check",
)


@dataclass
class CriterionResult:
    criterion: int
    name: str
    passed: bool
    measured: dict = dc_field(default_factory=dict)
    tolerance: dict = dc_field(default_factory=dict)
    detail: str = ""

    @property
    def status(self) -> str:
        return "pass" if self.passed else "fail"

    def as_record(self) -> dict:
        return {
            "criterion": self.criterion,
            "name": self.name,
            "status": self.status,
            "measured": self.measured,
            "tolerance": self.tolerance,
            "detail": self.detail,
        }


@dataclass
class SuiteContext:
    configs: dict
    workers: int = 1
    cache_dir: Optional[str] = None
    records: list = dc_field(default_factory=list)

    def config(self, name: str) -> Config:
        return self.configs[name]


def load_reference_configs(config_dir) -> dict:
    directory = Path(config_dir)
    if not directory.is_dir():
        raise ConfigError(f"{directory} is not a directory of reference configs", "cli.verify_all")
    missing = [name for name in REFERENCE_CONFIGS if not (directory / f"{name}.json").is_file()]
    if missing:
        raise ConfigError(f"missing reference config {missing[0]}.json in {directory}", "cli.verify_all")
    return {name: parse_config(directory / f"{name}.json") for name in REFERENCE_CONFIGS}


def landau_trace_2d(a: float, t: float = 1.0) -> float:
    """(a/2pi) sum_k exp(-t (2k+1) a): p^{-1} tr exp(-t H_p) on the unit T^2 with constant B = a."""
    return (a / (2.0 * math.pi)) * math.exp(-t * a) / (1.0 - math.exp(-2.0 * t * a))


def _relative(value: float, target: float) -> float:
    return abs(value - target) / abs(target)


def _sweep_and_fit(ctx: SuiteContext, config: Config):
    sweep = trace_sweep(config, workers=ctx.workers, cache_dir=ctx.cache_dir)
    fit = fit_half_power_expansion(sweep, j=config.sweep["j"], residual_cap=config.sweep["residual_cap"])
    return sweep, fit


def _grid_spread(sweep: pd.DataFrame) -> float:
    """Largest relative gap between the fine-grid and extrapolated traces."""
    gap = (sweep["T_fine"] - sweep["T"]).abs() / sweep["T"].abs()
    return float(gap.max()) if gap.notna().all() else 0.0


def check_landau_trace(ctx: SuiteContext) -> CriterionResult:
    config = ctx.config("landau_t2")
    sweep, fit = _sweep_and_fit(ctx, config)
    a = abs(config.build_field().mean_field[0, 1])
    target = landau_trace_2d(a, float(config.phi.get("t", 1.0)))
    tol = 0.02
    per_p = {str(int(p)): _relative(t, target) for p, t in zip(sweep["p"], sweep["T"])}
    c0_error = _relative(fit.coefficients[0], target)
    spread = _grid_spread(sweep)
    passed = max(per_p.values()) <= tol and c0_error <= tol and spread <= 0.5 * tol
    return CriterionResult(
        1,
        "landau_trace_exactness",
        passed,
        measured={"target": target, "c0": float(fit.coefficients[0]), "c0_rel_error": c0_error, "T_rel_error": per_p, "grid_spread": spread},
        tolerance={"rel": tol, "grid_spread": 0.5 * tol},
    )


def check_flux_degeneracy(ctx: SuiteContext) -> CriterionResult:
    base = ctx.config("landau_t2")
    tol = 1e-6
    measured = {}
    worst = 0.0
    for c in (1, 2):
        config = dataclasses.replace(
            base,
            field={"flux.12": c},
            phi={"family": "bump", "support": [math.pi * c, 4.0 * math.pi * c]},
        )
        geom = config.build_geometry()
        field = config.build_field(geom)
        potential = config.build_potential(geom)
        phi = config.build_phi()
        for p in (8, 16):
            grid = grid_for_p(geom, field, p, config.sweep["resolution"], config.sweep["min_points"])
            op = assemble_hp(geom, field, potential, p, grid, resolution=config.sweep["resolution"])
            count = trace_phi(op, phi, method="dense", cap=config.engine["dense_cap"]).value
            error = abs(count - p * c)
            measured[f"c={c},p={p}"] = {"trace": count, "expected": p * c, "abs_error": error}
            worst = max(worst, error)
    return CriterionResult(2, "flux_quantum_degeneracy", worst <= tol, measured=measured, tolerance={"abs": tol})


def check_weyl_term(ctx: SuiteContext) -> CriterionResult:
    free = ctx.config("free_t2")
    _, free_fit = _sweep_and_fit(ctx, free)
    target_free = 1.0 / (4.0 * math.pi)
    free_error = _relative(free_fit.coefficients[0], target_free)

    torus3 = ctx.config("landau_t3")
    _, fit3 = _sweep_and_fit(ctx, torus3)
    geom = torus3.build_geometry()
    integral = leading_integral(
        geom, torus3.build_field(geom), torus3.build_potential(geom), torus3.build_phi(), torus3.sweep["integral_points"]
    )
    error3 = _relative(fit3.coefficients[0], integral)
    return CriterionResult(
        3,
        "weyl_term_degenerate_rank",
        free_error <= 0.02 and error3 <= 0.07,
        measured={
            "free_c0": float(free_fit.coefficients[0]),
            "free_target": target_free,
            "free_rel_error": free_error,
            "t3_c0": float(fit3.coefficients[0]),
            "t3_c0_stderr": float(fit3.stderrs[0]),
            "t3_leading_integral": integral,
            "t3_rel_error": error3,
        },
        tolerance={"free_rel": 0.02, "t3_rel": 0.07},
    )


def check_variable_potential(ctx: SuiteContext) -> CriterionResult:
    config = ctx.config("variable_t2")
    _, fit = _sweep_and_fit(ctx, config)
    geom = config.build_geometry()
    integral = leading_integral(
        geom, config.build_field(geom), config.build_potential(geom), config.build_phi(), config.sweep["integral_points"]
    )
    c0 = float(fit.coefficients[0])
    error = _relative(c0, integral)
    residual_cap = config.sweep["residual_cap"] * abs(c0)
    return CriterionResult(
        4,
        "variable_potential",
        error <= 0.05 and fit.residual_norm <= residual_cap,
        measured={
            "c0": c0,
            "coefficients": fit.coefficients,
            "stderrs": fit.stderrs,
            "leading_integral": integral,
            "rel_error": error,
            "residual_norm": fit.residual_norm,
            "condition_number": fit.condition_number,
        },
        tolerance={"rel": 0.05, "residual": residual_cap},
    )


_TEST_MATRICES = {
    "a=(1)": np.array([[0.0, 1.0], [-1.0, 0.0]]),
    "a=(2,1)": np.array(
        [
            [0.0, 2.0, 0.0, 0.0],
            [-2.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0, 0.0],
        ]
    ),
}


def check_leading_identity(ctx: SuiteContext) -> CriterionResult:
    config = ctx.config("model_check")
    phi = config.build_phi()
    box = float(config.model["box"] or 8.0)
    spacing = 2.0 * box / (config.model["grid"] + 1)
    tol = 1e-3
    measured = {}
    worst = 0.0
    for label, M in _TEST_MATRICES.items():
        data = b_eigenstructure(M)
        analytic = float(f0_point(data, phi).real[0, 0])
        if data.dim == 2:
            numeric = float(model_kernel_numeric(data, phi, [0.0, 0.0], [0.0, 0.0], box, spacing=spacing, extrapolate=config.model["extrapolate"]).real[0, 0])
        else:
            numeric = float(model_kernel_diag_separable(data, phi, box, spacing, extrapolate=config.model["extrapolate"]).real[0, 0])
        error = _relative(numeric, analytic)
        measured[label] = {"f0": analytic, "numeric": numeric, "rel_error": error}
        worst = max(worst, error)
    return CriterionResult(5, "leading_coefficient_identity", worst <= tol, measured=measured, tolerance={"rel": tol})


def check_projection_diagonal(ctx: SuiteContext) -> CriterionResult:
    config = ctx.config("model_check")
    a = 1.0
    data = b_eigenstructure(np.array([[0.0, a], [-a, 0.0]]))
    box = float(config.model["box"] or 8.0)
    spacing = 2.0 * box / (config.model["grid"] + 1)
    # plateau around Lambda = a, zero at the next level 3a
    phi = bump_function(0.2 * a, 1.8 * a)
    value = float(model_kernel_numeric(data, phi, [0.0, 0.0], [0.0, 0.0], box, spacing=spacing, extrapolate=config.model["extrapolate"]).real[0, 0])
    target = a / (2.0 * math.pi)
    tol = 1e-3
    return CriterionResult(
        6,
        "landau_projection_diagonal",
        abs(value - target) <= tol,
        measured={"kernel_diagonal": value, "target": target, "abs_error": abs(value - target)},
        tolerance={"abs": tol},
    )


def random_hermitian(n: int, seed: int) -> np.ndarray:
    """GUE-like sample scaled to a spectrum of order [-2, 2]."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return (g + g.conj().T) / (2.0 * math.sqrt(n))


def check_hs_oracle(ctx: SuiteContext) -> CriterionResult:
    config = ctx.config("model_check")
    phi = make_test_function({"family": "gaussian", "center": 0.0, "width": 1.0})
    quadrature = HSQuadrature.from_mapping({**config.hs, "workers": ctx.workers})
    floor = 1e-10
    tol = 1e-6
    errors_by_order = {2: [], 4: [], 6: []}
    for seed in range(10):
        H = random_hermitian(32, seed)
        exact = apply_phi_eig(H, phi).matrix()
        norm = np.linalg.norm(exact)
        for order in errors_by_order:
            ext = almost_analytic_extension(phi, order, cutoff_scale=config.hs["cutoff_scale"])
            errors_by_order[order].append(float(np.linalg.norm(apply_phi_hs(H, ext, quadrature) - exact) / norm))
    worst = {order: max(values) for order, values in errors_by_order.items()}
    monotone = all(
        max(worst[hi], floor) <= max(worst[lo], floor) for lo, hi in ((2, 4), (4, 6))
    )
    return CriterionResult(
        7,
        "helffer_sjostrand_oracle",
        worst[6] <= tol and monotone,
        measured={"max_rel_error": {f"l={k}": v for k, v in worst.items()}, "monotone": monotone},
        tolerance={"rel": tol, "floor": floor},
    )


def check_remainder_order(ctx: SuiteContext) -> CriterionResult:
    config = ctx.config("variable_t2")
    table, slope = remainder_slope(config)
    separations = table["separation"]
    in_window = bool(((separations >= 1.0) & (separations <= 4.0)).all())
    return CriterionResult(
        8,
        "remainder_order",
        abs(slope + 0.5) <= 0.15 and in_window,
        measured={"slope": slope, "p": table["p"].tolist(), "err": table["err"].tolist(), "separation": separations.tolist()},
        tolerance={"slope": -0.5, "band": 0.15, "separation": [1.0, 4.0]},
    )


def check_offdiag_decay(ctx: SuiteContext) -> CriterionResult:
    measured = {}
    passed = True
    for name in ("decay_free", "decay_landau"):
        table, summary = offdiag_decay_check(ctx.config(name))
        measured[name] = {"slope": summary["slope"], "distance": summary["distance"], "abs_kernel": table["abs_kernel"].tolist()}
        passed = passed and summary["passes"]
    return CriterionResult(9, "offdiag_rapid_decay", passed, measured=measured, tolerance={"slope_max": -3.0})


def _sweep_csv(config: Config, workers: int, cache_dir: Optional[str]) -> str:
    return trace_sweep(config, workers=workers, cache_dir=cache_dir).to_csv(index=False, float_format=FLOAT_FORMAT)


def check_determinism(ctx: SuiteContext) -> CriterionResult:
    """Rerun the other criteria against a cold cache; the serialized report must match byte for byte.

    The criteria already run in this suite (``ctx.records``) are the first
    run; a standalone call runs them twice. The sweep CSV with a cold cache,
    the warm cache and no cache is compared as well.
    """
    others = [(CRITERIA.index(check) + 1, check) for check in CRITERIA if check is not check_determinism]
    numbers = {number for number, _ in others}
    first = [record for record in ctx.records if record["criterion"] in numbers]
    with tempfile.TemporaryDirectory(prefix="scbl-cache-") as scratch:
        cold = dataclasses.replace(ctx, cache_dir=scratch, records=[])
        second = [run_criterion(check, number, cold).as_record() for number, check in others]
        if len(first) != len(others):
            first = [run_criterion(check, number, dataclasses.replace(ctx, records=[])).as_record() for number, check in others]
        config = ctx.config("landau_t2")
        sweeps = {
            "cold": _sweep_csv(config, ctx.workers, scratch),
            "warm": _sweep_csv(config, ctx.workers, scratch),
        }
        dispose_engines()
    sweeps["uncached"] = _sweep_csv(config, ctx.workers, None)
    reports_text = [dumps_json(report_document(records)) for records in (first, second)]
    report_identical = reports_text[0] == reports_text[1]
    cache_identical = len(set(sweeps.values())) == 1
    return CriterionResult(
        10,
        "determinism_and_cache",
        report_identical and cache_identical,
        measured={
            "report_identical": report_identical,
            "report_bytes": [len(text.encode("utf-8")) for text in reports_text],
            "cache_identical": cache_identical,
            "sweep_bytes": {k: len(v) for k, v in sweeps.items()},
        },
        detail="report.json carries no timestamps; repeated runs must match byte for byte",
    )


CRITERIA: list = [
    check_landau_trace,
    check_flux_degeneracy,
    check_weyl_term,
    check_variable_potential,
    check_leading_identity,
    check_projection_diagonal,
    check_hs_oracle,
    check_remainder_order,
    check_offdiag_decay,
    check_determinism,
]


def run_criterion(check: Callable[[SuiteContext], CriterionResult], number: int, ctx: SuiteContext) -> CriterionResult:
    try:
        result = check(ctx)
    except (LabError, np.linalg.LinAlgError) as e:
        logger.error("criterion %d failed with %s", number, e)
        return CriterionResult(number, check.__name__.replace("check_", ""), False, detail=f"error: {e}")
    logger.info("criterion %d %s: %s", result.criterion, result.name, result.status)
    return result


def report_document(records: list) -> dict:
    return {
        "code_version": CODE_VERSION,
        "configs": list(REFERENCE_CONFIGS),
        "criteria": list(records),
        "passed": all(record["status"] == "pass" for record in records),
    }


def verify_all(config_dir, workers: int = 1, cache_dir: Optional[str] = None) -> dict:
    """Run every criterion in order; the report lists one record per criterion."""
    ctx = SuiteContext(configs=load_reference_configs(config_dir), workers=workers, cache_dir=cache_dir)
    for i, check in enumerate(CRITERIA):
        ctx.records.append(run_criterion(check, i + 1, ctx).as_record())
    return report_document(ctx.records)
