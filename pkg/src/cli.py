"""Command runner: ``scbl <command> --config <path> [--out DIR] [--workers N] [--cache DIR] [--seed N]``."""

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from src import reports
from src.config import Config, parse_config
from src.errors import AcceptanceError, LabError
from src.expansion_lab import (
    fit_half_power_expansion,
    grid_for_p,
    leading_integral,
    offdiag_decay_check,
    rescaled_kernel_compare,
    trace_sweep,
)
from src.geometry_field import skew_matrix_at
from src.model_operator import b_eigenstructure, f0_field, f0_point, lambda_levels, auto_lambda_max, model_kernel_diag_analytic
from src.operator_assembly import assemble_hp, dump_triplets
from src.spectral_engine import dense_spectrum
from src.verification import verify_all

logger = logging.getLogger(__name__)

COMMANDS = (
    "assemble",
    "spectrum",
    "trace-sweep",
    "fit-expansion",
    "model-f0",
    "kernel-compare",
    "decay-check",
    "verify-all",
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_ACCEPTANCE = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scbl", description="Semiclassical Bochner-Schroedinger lab on flat tori.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="experiment JSON (a directory of reference configs for verify-all)")
    parser.add_argument("--out", default=None, help="output directory (default: config 'output', then SCBL_OUT)")
    parser.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    parser.add_argument("--cache", default=None, help="cache directory (default: config 'cache', then SCBL_CACHE)")
    parser.add_argument("--seed", type=int, default=None, help="override engine.seed")
    parser.add_argument("--p", type=int, default=None, help="semiclassical parameter for assemble/spectrum/kernel-compare")
    parser.add_argument("--verbose", action="store_true")
    return parser


def _output_dir(args, config: Config) -> Path:
    base = Path(args.out or config.output_dir)
    out = base / config.name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _operator(config: Config, p: int):
    geom = config.build_geometry()
    field = config.build_field(geom)
    grid = grid_for_p(geom, field, p, config.sweep["resolution"], config.sweep["min_points"])
    return assemble_hp(geom, field, config.build_potential(geom), p, grid, resolution=config.sweep["resolution"])


def cmd_assemble(config: Config, args, out: Path) -> None:
    p = args.p or config.kernel["p"]
    op = _operator(config, p)
    dump_triplets(op, out / f"operator_p{p}.txt")
    reports.write_json(
        {
            "p": p,
            "grid": list(op.grid),
            "spacings": list(op.spacings),
            "size": op.size,
            "rank": op.rank,
            "nnz": int(op.matrix.nnz),
            "hermiticity_defect": op.hermiticity_defect(),
            "meta": op.meta,
        },
        out / "assemble.json",
    )


def cmd_spectrum(config: Config, args, out: Path) -> None:
    p = args.p or config.kernel["p"]
    op = _operator(config, p)
    spectrum = dense_spectrum(op, vectors=False, cap=config.engine["dense_cap"])
    reports.write_csv(pd.DataFrame({"index": np.arange(spectrum.size), "eigenvalue": spectrum.eigenvalues}), out / "spectrum.csv")


def cmd_trace_sweep(config: Config, args, out: Path) -> pd.DataFrame:
    sweep = trace_sweep(config, workers=args.workers, cache_dir=config.cache_dir)
    reports.write_csv(sweep, out / "sweep.csv")
    reports.save_figure(reports.sweep_figure(sweep), out / "sweep.svg")
    return sweep


def cmd_fit_expansion(config: Config, args, out: Path) -> None:
    sweep = trace_sweep(config, workers=args.workers, cache_dir=config.cache_dir)
    reports.write_csv(sweep, out / "sweep.csv")
    fit = fit_half_power_expansion(sweep, j=config.sweep["j"], residual_cap=config.sweep["residual_cap"])
    document = fit.as_record()
    document["residual_cap"] = config.sweep["residual_cap"]
    document["within_residual_cap"] = fit.within_cap
    if not fit.within_cap:
        logger.warning("fit residual %.3g above cap %.3g", fit.residual_norm, config.sweep["residual_cap"])
    reports.write_json(document, out / "fit.json")
    reports.save_figure(reports.sweep_figure(sweep, fit.coefficients), out / "sweep.svg")


def cmd_model_f0(config: Config, args, out: Path) -> None:
    geom = config.build_geometry()
    field = config.build_field(geom)
    potential = config.build_potential(geom)
    phi = config.build_phi()
    table = f0_field(geom, field, potential, phi, config.f0["points_per_axis"])
    reports.write_csv(table, out / "f0.csv")
    x0 = np.asarray(config.kernel["x0"] or [0.5 * L for L in geom.side_lengths], dtype=float)
    data = b_eigenstructure(skew_matrix_at(field, x0), V0=potential.values(x0))
    ladder = lambda_levels(data, auto_lambda_max(data, phi))
    reports.write_json(
        {
            "x0": x0,
            "a": list(data.a),
            "kernel_dim": data.kernel_dim,
            "levels": ladder.values[:16],
            "multiplicities": ladder.multiplicities[:16],
            "f0": f0_point(data, phi, geom.dim).real,
            "f0_crosscheck": model_kernel_diag_analytic(data, phi, geom.dim).real,
            "leading_integral": leading_integral(geom, field, potential, phi, config.sweep["integral_points"]),
        },
        out / "model_f0.json",
    )


def cmd_kernel_compare(config: Config, args, out: Path) -> None:
    p = args.p or config.kernel["p"]
    comparison = rescaled_kernel_compare(config, p)
    reports.write_csv(comparison.table, out / "kernel_compare.csv")
    reports.save_figure(reports.kernel_figure(comparison.table), out / "kernel_compare.svg")


def cmd_decay_check(config: Config, args, out: Path) -> None:
    table, summary = offdiag_decay_check(config)
    reports.write_csv(table, out / "decay.csv")
    reports.write_json(summary, out / "decay.json")
    reports.save_figure(reports.decay_figure(table), out / "decay.svg")


HANDLERS = {
    "assemble": cmd_assemble,
    "spectrum": cmd_spectrum,
    "trace-sweep": cmd_trace_sweep,
    "fit-expansion": cmd_fit_expansion,
    "model-f0": cmd_model_f0,
    "kernel-compare": cmd_kernel_compare,
    "decay-check": cmd_decay_check,
}


def _load_config(args) -> Config:
    config = parse_config(args.config)
    if args.seed is not None:
        config.engine = {**config.engine, "seed": args.seed}
    if args.cache:
        config = dataclasses.replace(config, cache_dir=args.cache)
    return config


def run_command(args) -> int:
    if args.command == "verify-all":
        out = Path(args.out or os.getenv("SCBL_OUT", "results"))
        report = verify_all(args.config, workers=args.workers, cache_dir=args.cache or os.getenv("SCBL_CACHE"))
        reports.write_json(report, out / "report.json")
        if not report["passed"]:
            failed = [c["criterion"] for c in report["criteria"] if c["status"] != "pass"]
            raise AcceptanceError(f"criteria {failed} failed", "cli.verify_all")
        return EXIT_OK
    config = _load_config(args)
    HANDLERS[args.command](config, args, _output_dir(args, config))
    return EXIT_OK


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, LabError):
        return error.exit_code
    if isinstance(error, np.linalg.LinAlgError):
        return EXIT_NUMERICAL
    return 1


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run_command(args)
    except (LabError, np.linalg.LinAlgError) as e:
        logger.error("%s: %s", args.command, e)
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
