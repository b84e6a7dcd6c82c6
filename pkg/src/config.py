"""Experiment configuration: JSON file -> validated Config with defaults recorded."""

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from dotenv import load_dotenv

from src.errors import ConfigError, InputError
from src.functional_calculus import TestFunction, make_test_function
from src.geometry_field import FieldData, Geometry, PotentialData, make_field, make_flat_torus, make_potential

load_dotenv()

logger = logging.getLogger(__name__)

CODE_VERSION = "scbl-0.1.0"
DEFAULT_OUT = "results"
DEFAULT_CACHE = ".scbl_cache"

REQUIRED_BLOCKS = ("geometry", "field", "phi")

# block -> key -> (accepted types, default); a default of None means optional with no value
BLOCK_SCHEMAS = {
    "engine": {
        "dense_cap": (int, 20000),
        "trace_method": (str, "dense"),
        "kpm_order": (int, 128),
        "probes": (int, 32),
        "seed": (int, 0),
        "damping": (str, "jackson"),
    },
    "hs": {
        "order": (int, 4),
        "mesh": (list, [400, 400]),
        "nu_min": ((int, float), 1e-3),
        "cutoff_scale": ((int, float), 0.25),
    },
    "sweep": {
        "p_list": (list, [8, 16, 32]),
        "j": (int, 2),
        "resolution": ((int, float), 8.0),
        "min_points": (int, 32),
        "extrapolate": (bool, True),
        "residual_cap": ((int, float), 1e-3),
        "integral_points": (int, 16),
    },
    "model": {
        "box": ((int, float), None),
        "grid": (int, 96),
        "extrapolate": (bool, True),
    },
    "kernel": {
        "p": (int, 16),
        "p_list": (list, [8, 16, 32, 64]),
        "x0": (list, None),
        "pairs": (list, []),
        "rescaled_pair": (list, None),
        "N": (int, 4),
        "gauge": (str, "aligned"),
    },
    "decay": {
        "p_list": (list, [32, 64, 128]),
        "x": (list, None),
        "x_prime": (list, None),
        "epsilon": ((int, float), 0.25),
    },
    "f0": {
        "points_per_axis": (int, 16),
    },
}

TOP_LEVEL_KEYS = set(REQUIRED_BLOCKS) | set(BLOCK_SCHEMAS) | {"name", "potential", "output", "cache", "acceptance"}


@dataclass(eq=False)
class Config:
    name: str
    geometry: dict
    field: dict
    potential: dict
    phi: dict
    engine: dict
    hs: dict
    sweep: dict
    model: dict
    kernel: dict
    decay: dict
    f0: dict
    acceptance: dict
    output_dir: str
    cache_dir: str
    defaults_applied: list = dc_field(default_factory=list)
    source: Optional[str] = None

    def build_geometry(self) -> Geometry:
        return make_flat_torus(int(self.geometry["d"]), self.geometry["lengths"])

    def build_field(self, geom: Optional[Geometry] = None) -> FieldData:
        return make_field(geom or self.build_geometry(), self.field)

    def build_potential(self, geom: Optional[Geometry] = None) -> PotentialData:
        return make_potential(geom or self.build_geometry(), self.potential)

    def build_phi(self, override: Optional[Mapping] = None) -> TestFunction:
        return make_test_function(override if override is not None else self.phi)

    def section(self, *names: str) -> dict:
        return {name: getattr(self, name) for name in names}

    def cache_key(self, operation: str, *names: str, extra: Optional[Mapping] = None) -> str:
        """sha256 over the canonical JSON of the named sections, the operation and the code version."""
        payload = {"sections": self.section(*names), "extra": dict(extra or {}), "operation": operation, "version": CODE_VERSION}
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _check_type(block: str, key: str, value: Any, types) -> None:
    expected = types if isinstance(types, tuple) else (types,)
    if isinstance(value, bool) and bool not in expected:
        raise ConfigError(f"{block}.{key} has type bool, expected {'/'.join(t.__name__ for t in expected)}", "cli.parse_config")
    if not isinstance(value, expected):
        raise ConfigError(
            f"{block}.{key} has type {type(value).__name__}, expected {'/'.join(t.__name__ for t in expected)}",
            "cli.parse_config",
        )


def _fill_block(raw: Mapping, block: str, defaults_applied: list) -> dict:
    schema = BLOCK_SCHEMAS[block]
    values = raw.get(block, {})
    if not isinstance(values, Mapping):
        raise ConfigError(f"block {block} must be an object", "cli.parse_config")
    for key in values:
        if key not in schema:
            raise ConfigError(f"unknown key {block}.{key}", "cli.parse_config")
    filled = {}
    for key, (types, default) in schema.items():
        if key in values and values[key] is not None:
            _check_type(block, key, values[key], types)
            filled[key] = values[key]
        else:
            filled[key] = default
            if default is not None:
                defaults_applied.append(f"{block}.{key}")
    return filled


def config_from_mapping(raw: Mapping, source: Optional[str] = None) -> Config:
    where = "cli.parse_config"
    if not isinstance(raw, Mapping):
        raise ConfigError("config root must be a JSON object", where)
    for key in raw:
        if key not in TOP_LEVEL_KEYS:
            raise ConfigError(f"unknown key {key}", where)
    for block in REQUIRED_BLOCKS:
        if block not in raw:
            raise ConfigError(f"missing required block {block}", where)

    geometry = dict(raw["geometry"])
    unknown = set(geometry) - {"d", "lengths"}
    if unknown:
        raise ConfigError(f"unknown key geometry.{sorted(unknown)[0]}", where)
    if "d" not in geometry:
        raise ConfigError("missing required field geometry.d", where)
    _check_type("geometry", "d", geometry["d"], int)
    defaults_applied: list = []
    if "lengths" not in geometry:
        geometry["lengths"] = [1.0] * geometry["d"]
        defaults_applied.append("geometry.lengths")
    _check_type("geometry", "lengths", geometry["lengths"], list)

    blocks = {block: _fill_block(raw, block, defaults_applied) for block in BLOCK_SCHEMAS}
    if "potential" not in raw:
        defaults_applied.append("potential")

    config = Config(
        name=str(raw.get("name") or (Path(source).stem if source else "experiment")),
        geometry=geometry,
        field=dict(raw["field"]),
        potential=dict(raw.get("potential") or {}),
        phi=dict(raw["phi"]),
        acceptance=dict(raw.get("acceptance") or {}),
        output_dir=str(raw.get("output") or os.getenv("SCBL_OUT", DEFAULT_OUT)),
        cache_dir=str(raw.get("cache") or os.getenv("SCBL_CACHE", DEFAULT_CACHE)),
        defaults_applied=defaults_applied,
        source=source,
        **blocks,
    )

    # Domain validation up front, before any computation
    try:
        geom = config.build_geometry()
        config.build_field(geom)
        config.build_potential(geom)
        config.build_phi()
    except InputError as exc:
        raise ConfigError(str(exc), where) from exc
    p_list = config.sweep["p_list"]
    if any(not isinstance(p, int) or isinstance(p, bool) or p < 1 for p in p_list):
        raise ConfigError("sweep.p_list must hold positive integers", where)
    if sorted(set(p_list)) != list(p_list):
        raise ConfigError("sweep.p_list must be strictly increasing", where)
    if config.engine["trace_method"] not in ("dense", "kpm"):
        raise ConfigError(f"engine.trace_method must be dense or kpm, got {config.engine['trace_method']}", where)
    if config.hs["order"] < 2:
        raise ConfigError("hs.order must be >= 2", where)

    if defaults_applied:
        logger.info("config %s: defaults applied for %s", config.name, ", ".join(defaults_applied))
    return config


def parse_config(path: Union[str, Path]) -> Config:
    where = "cli.parse_config"
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist", where)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}", where) from exc
    return config_from_mapping(raw, source=str(path))
