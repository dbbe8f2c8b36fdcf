"""Run configuration: strict parsing, defaulting, and canonical emission.

A run is described by one JSON document with material, geometry, system,
numerics, and output sections.  Parsing resolves every default, rejects
unknown keys, and enforces the physical invariants immediately, so a
RunConfig in hand is always valid.  The canonical form round-trips:
parse(emit(cfg)) == cfg, which is what makes provenance headers
re-runnable.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .kernels import KernelConfig
from .params import (DEFAULT_COUPLING, DEFAULT_GAP_A, GeometryConfig,
                     MaterialParams, SystemParams, check_speed, preset)

DEFAULT_THETA0_DEG = 44.9
DEFAULT_DELTA_RATIO = 0.9
DEFAULT_OUTDIR = "out"

_MODES = {
    "resonance_mode": ("surface", "bulk"),
    "sign_convention": ("dissipative", "literal"),
    "dipole_weight": ("inplane", "full"),
}


@dataclass(frozen=True)
class NumericsConfig:
    dt: float = 0.02
    samples_per_cycle: int = 128
    n_cycles: int = 30
    rtol: float = 1e-9
    atol: float = 1e-12
    t_max: float | None = None
    omega_tol: float = 1e-8
    n_theta: int = 64
    ir_cutoff: float = 1e-4
    omega_max: float | None = None
    resonance_mode: str = "surface"
    sign_convention: str = "dissipative"
    dipole_weight: str = "inplane"
    restart_each_cycle: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("numerics.dt", "must be > 0")
        if self.samples_per_cycle < 4:
            raise ConfigError("numerics.samples_per_cycle", "must be >= 4")
        if self.n_cycles < 1:
            raise ConfigError("numerics.n_cycles", "must be >= 1")
        for key in ("rtol", "atol", "omega_tol"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"numerics.{key}", "must be > 0")
        if self.t_max is not None and not self.t_max > 0:
            raise ConfigError("numerics.t_max", "must be > 0 when set")
        if self.n_theta < 8:
            raise ConfigError("numerics.n_theta", "must be >= 8")
        if self.ir_cutoff < 0:
            raise ConfigError("numerics.ir_cutoff", "must be >= 0")
        if self.omega_max is not None and not self.omega_max > 0:
            raise ConfigError("numerics.omega_max", "must be > 0 when set")
        for key, allowed in _MODES.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"numerics.{key}",
                                  f"must be one of {allowed}")
        if not isinstance(self.restart_each_cycle, bool):
            raise ConfigError("numerics.restart_each_cycle",
                              "must be a boolean")


@dataclass(frozen=True)
class OutputConfig:
    outdir: str = DEFAULT_OUTDIR
    cache_dir: str | None = None
    plot: bool = True

    def __post_init__(self):
        if not isinstance(self.outdir, str) or not self.outdir:
            raise ConfigError("output.outdir", "must be a non-empty string")
        if self.cache_dir is not None and not isinstance(self.cache_dir, str):
            raise ConfigError("output.cache_dir", "must be a string or null")
        if not isinstance(self.plot, bool):
            raise ConfigError("output.plot", "must be a boolean")


@dataclass(frozen=True)
class RunConfig:
    material: MaterialParams
    geometry: GeometryConfig
    system: SystemParams
    numerics: NumericsConfig = NumericsConfig()
    output: OutputConfig = OutputConfig()

    def __post_init__(self):
        check_speed(self.geometry, self.material)

    def kernel_config(self) -> KernelConfig:
        num = self.numerics
        return KernelConfig(material=self.material, geometry=self.geometry,
                            coupling_g=self.system.coupling_g,
                            resonance_mode=num.resonance_mode,
                            sign_convention=num.sign_convention,
                            dipole_weight=num.dipole_weight,
                            ir_cutoff=num.ir_cutoff,
                            omega_max=num.omega_max,
                            n_theta=num.n_theta,
                            omega_tol=num.omega_tol)

    def resolved_t_max(self) -> float:
        if self.numerics.t_max is not None:
            return self.numerics.t_max
        return self.numerics.n_cycles * self.system.period

    def canonical_dict(self) -> dict:
        num = dataclasses.asdict(self.numerics)
        out = dataclasses.asdict(self.output)
        return {
            "material": self.material.to_dict(),
            "geometry": {"alpha": self.geometry.alpha,
                         "gamma_dip": self.geometry.gamma_dip,
                         "gap_a": self.geometry.gap_a,
                         "u": self.geometry.u},
            "system": self.system.to_dict(),
            "numerics": num,
            "output": out,
        }

    def canonical_json(self) -> str:
        return json.dumps(self.canonical_dict(), sort_keys=True,
                          separators=(", ", ": "))

    def digest(self) -> str:
        return hashlib.sha256(
            self.canonical_json().encode()).hexdigest()[:16]


_SECTION_KEYS = {
    "material": {"preset", "omega_pl", "gamma_ratio", "omega0_ratio",
                 "label"},
    "geometry": {"alpha", "gamma_dip", "gap_a", "u"},
    "system": {"delta_ratio", "theta0", "theta0_deg", "coupling_g",
               "alpha_pol"},
    "numerics": {f.name for f in dataclasses.fields(NumericsConfig)},
    "output": {f.name for f in dataclasses.fields(OutputConfig)},
}


def _check_keys(section: str, given: dict) -> None:
    unknown = set(given) - _SECTION_KEYS[section]
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"{section}.{key}", "unknown key")


def _require_number(section: str, key: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key}", "must be a number")
    if not math.isfinite(value):
        raise ConfigError(f"{section}.{key}", "must be finite")
    return float(value)


def _material_from(section: dict) -> MaterialParams:
    _check_keys("material", section)
    if "preset" in section:
        extra = set(section) - {"preset"}
        if extra:
            raise ConfigError(f"material.{sorted(extra)[0]}",
                              "not allowed together with preset")
        if not isinstance(section["preset"], str):
            raise ConfigError("material.preset", "must be a string")
        return preset(section["preset"])
    missing = {"omega_pl", "gamma_ratio"} - set(section)
    if missing:
        raise ConfigError(f"material.{sorted(missing)[0]}",
                          "required without preset")
    return MaterialParams(
        omega_pl=_require_number("material", "omega_pl",
                                 section["omega_pl"]),
        gamma_ratio=_require_number("material", "gamma_ratio",
                                    section["gamma_ratio"]),
        omega0_ratio=_require_number("material", "omega0_ratio",
                                     section.get("omega0_ratio", 0.0)),
        label=str(section.get("label", "")))


def _geometry_from(section: dict) -> GeometryConfig:
    _check_keys("geometry", section)
    values = {"alpha": np.pi / 2, "gamma_dip": 0.0,
              "gap_a": DEFAULT_GAP_A, "u": 0.0}
    for key in values:
        if key in section:
            values[key] = _require_number("geometry", key, section[key])
    return GeometryConfig(**values)


def _system_from(section: dict) -> SystemParams:
    _check_keys("system", section)
    if "theta0" in section and "theta0_deg" in section:
        raise ConfigError("system.theta0_deg",
                          "give either theta0 or theta0_deg, not both")
    if "theta0" in section:
        theta0 = _require_number("system", "theta0", section["theta0"])
    else:
        deg = _require_number("system", "theta0_deg",
                              section.get("theta0_deg", DEFAULT_THETA0_DEG))
        theta0 = float(np.deg2rad(deg))
    alpha_pol = section.get("alpha_pol")
    if alpha_pol is not None:
        alpha_pol = _require_number("system", "alpha_pol", alpha_pol)
    return SystemParams(
        delta_ratio=_require_number("system", "delta_ratio",
                                    section.get("delta_ratio",
                                                DEFAULT_DELTA_RATIO)),
        theta0=theta0,
        coupling_g=_require_number("system", "coupling_g",
                                   section.get("coupling_g",
                                               DEFAULT_COUPLING)),
        alpha_pol=alpha_pol)


def _numerics_from(section: dict) -> NumericsConfig:
    _check_keys("numerics", section)
    kwargs = {}
    for f in dataclasses.fields(NumericsConfig):
        if f.name not in section:
            continue
        value = section[f.name]
        if f.name in _MODES:
            if not isinstance(value, str):
                raise ConfigError(f"numerics.{f.name}", "must be a string")
        elif f.name == "restart_each_cycle":
            if not isinstance(value, bool):
                raise ConfigError(f"numerics.{f.name}", "must be a boolean")
        elif f.name in ("samples_per_cycle", "n_cycles", "n_theta"):
            num = _require_number("numerics", f.name, value)
            if num != int(num):
                raise ConfigError(f"numerics.{f.name}",
                                  "must be an integer")
            value = int(num)
        elif f.name in ("t_max", "omega_max"):
            if value is not None:
                value = _require_number("numerics", f.name, value)
        else:
            value = _require_number("numerics", f.name, value)
        kwargs[f.name] = value
    return NumericsConfig(**kwargs)


def _output_from(section: dict) -> OutputConfig:
    _check_keys("output", section)
    kwargs = {}
    for key in ("outdir", "cache_dir", "plot"):
        if key in section:
            kwargs[key] = section[key]
    return OutputConfig(**kwargs)


def _apply_overrides(doc: dict, overrides) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ConfigError("--set", f"expected key.path=value: {item!r}")
        path, _, raw = item.partition("=")
        keys = path.strip().split(".")
        if len(keys) != 2 or not all(keys):
            raise ConfigError("--set",
                              f"key must be section.name: {path!r}")
        if keys[0] not in _SECTION_KEYS:
            raise ConfigError(keys[0], "unknown section")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings stay strings
        doc.setdefault(keys[0], {})[keys[1]] = value
    return doc


def parse_config(source: str | None = None,
                 overrides=()) -> RunConfig:
    """Build a RunConfig from a JSON file path or inline JSON text.

    `source` may be None (pure defaults), a path to a JSON file, or the
    JSON text itself (recognized by a leading '{').  `overrides` are
    `section.key=value` strings applied on top, flag > file > default.
    """
    if source is None:
        text = "{}"
        where = "<defaults>"
    elif source.lstrip().startswith("{"):
        text = source
        where = "<inline>"
    else:
        if not os.path.exists(source):
            raise ConfigError("config", f"no such file: {source}")
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
        where = source

    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            "config", f"{where}: invalid JSON at line {exc.lineno}, "
            f"column {exc.colno}: {exc.msg}")
    if not isinstance(doc, dict):
        raise ConfigError("config", f"{where}: top level must be an object")

    unknown = set(doc) - set(_SECTION_KEYS)
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown section")
    for section, content in doc.items():
        if not isinstance(content, dict):
            raise ConfigError(section, "section must be an object")

    doc = _apply_overrides(doc, overrides)

    material = _material_from(doc.get("material", {"preset": "reference-metal"}))
    return RunConfig(
        material=material,
        geometry=_geometry_from(doc.get("geometry", {})),
        system=_system_from(doc.get("system", {})),
        numerics=_numerics_from(doc.get("numerics", {})),
        output=_output_from(doc.get("output", {})))
