"""Scenario configuration: flat-sectioned key=value files, strict schema.

Format: INI-style sections, one key per line, lists comma-separated:

    [grid]
    dim = 1
    lower = -20
    upper = 20
    n = 1024
    periodic = true

Unknown sections or keys are rejected.  Every default lives in the DEFAULTS
table below (and is documented in the README); modules have no hidden
defaults of their own.  seed = -1 requests an entropy seed, which the run
report records; bandwidth = 0 requests the Silverman rule.
"""

from __future__ import annotations

import configparser
import copy
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

__all__ = [
    "ScenarioConfig",
    "DEFAULTS",
    "PRESETS",
    "load_config",
    "config_from_dict",
    "preset_config",
    "dump_config",
]

SCENARIO_KINDS = ("gaussian_packet", "harmonic_ground", "harmonic_coherent")
CLOSURE_KINDS = ("maxwellian", "raw_moments", "positional_temperature")
CLOSURE_ALIASES = {"raw": "raw_moments", "positional": "positional_temperature"}

DEFAULTS: dict[str, dict] = {
    "constants": {"hbar": 1.0, "mass": 1.0},
    "grid": {
        "dim": 1,
        "lower": [-20.0],
        "upper": [20.0],
        "n": [1024],
        "periodic": [True],
    },
    "scenario": {
        "kind": "gaussian_packet",
        "sigma0": [1.0],
        "k0": [0.0],
        "omega": [1.0],
        "displacement": [0.0],
        "center": [0.0],
    },
    "run": {
        "t_end": 1.0,
        "dt_field": 0.002,
        "dt_particle": 0.002,
        "snapshot_stride": 50,
    },
    "closure": {"kind": "maxwellian", "k_profile_file": "", "gauge_z_file": ""},
    "ensemble": {"n_particles": 10000, "seed": -1, "bandwidth": 0.0},
    "boundary": {"kinds": ["periodic"], "v_wall": [0.0], "f_wall": [0.0]},
    "output": {"directory": "out", "formats": ["csv"]},
}

# per-scenario presets applied by `--scenario`; everything else from DEFAULTS
PRESETS: dict[str, dict] = {
    "gaussian_packet": {
        "grid": {"lower": [-20.0], "upper": [20.0], "n": [1024]},
        "run": {"t_end": 4.0, "dt_field": 0.002, "dt_particle": 0.002, "snapshot_stride": 100},
    },
    "harmonic_ground": {
        "grid": {"lower": [-8.0], "upper": [8.0], "n": [2048]},
        "run": {"t_end": 6.4, "dt_field": 0.002, "dt_particle": 0.002, "snapshot_stride": 200},
    },
    "harmonic_coherent": {
        "grid": {"lower": [-8.0], "upper": [8.0], "n": [2048]},
        "scenario": {"displacement": [1.0]},
        "run": {"t_end": 6.4, "dt_field": 0.002, "dt_particle": 0.002, "snapshot_stride": 200},
    },
}

_LIST_KEYS = {
    ("grid", "lower"), ("grid", "upper"), ("grid", "n"), ("grid", "periodic"),
    ("scenario", "sigma0"), ("scenario", "k0"), ("scenario", "omega"),
    ("scenario", "displacement"), ("scenario", "center"),
    ("boundary", "kinds"), ("boundary", "v_wall"), ("boundary", "f_wall"),
    ("output", "formats"),
}


@dataclass
class ScenarioConfig:
    constants: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    scenario: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)
    closure: dict = field(default_factory=dict)
    ensemble: dict = field(default_factory=dict)
    boundary: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            name: copy.deepcopy(getattr(self, name))
            for name in DEFAULTS
        }

    def validate(self) -> None:
        d = int(self.grid["dim"])
        if d not in (1, 2, 3):
            raise ConfigError(f"grid.dim must be 1, 2 or 3, got {d}")
        for key in ("lower", "upper", "n", "periodic"):
            if len(self.grid[key]) != d:
                raise ConfigError(f"grid.{key} must carry {d} entries")
        if self.constants["hbar"] <= 0 or self.constants["mass"] <= 0:
            raise ConfigError("hbar and mass must be positive")
        if self.scenario["kind"] not in SCENARIO_KINDS:
            raise ConfigError(
                f"unknown scenario {self.scenario['kind']!r}; valid: {SCENARIO_KINDS}"
            )
        kind = self.closure["kind"]
        if kind in CLOSURE_ALIASES:
            self.closure["kind"] = kind = CLOSURE_ALIASES[kind]
        if kind not in CLOSURE_KINDS:
            raise ConfigError(f"unknown closure {kind!r}; valid: {CLOSURE_KINDS}")
        if any(s <= 0 for s in self.scenario["sigma0"]):
            raise ConfigError("scenario.sigma0 must be positive")
        if any(w <= 0 for w in self.scenario["omega"]):
            raise ConfigError("scenario.omega must be positive")
        run = self.run
        if run["t_end"] <= 0 or run["dt_field"] <= 0 or run["dt_particle"] <= 0:
            raise ConfigError("run times must be positive")
        if run["dt_particle"] > run["dt_field"] + 1e-15:
            raise ConfigError("run.dt_particle must not exceed run.dt_field")
        if int(run["snapshot_stride"]) < 1:
            raise ConfigError("run.snapshot_stride must be >= 1")
        if int(self.ensemble["n_particles"]) < 0:
            raise ConfigError("ensemble.n_particles must be >= 0")
        for key in ("kinds", "v_wall", "f_wall"):
            if len(self.boundary[key]) != d:
                raise ConfigError(f"boundary.{key} must carry {d} entries")
        for ax, bk in enumerate(self.boundary["kinds"]):
            if bk not in ("periodic", "wall"):
                raise ConfigError(f"boundary kind {bk!r} invalid")
            if bk == "wall" and self.grid["periodic"][ax]:
                raise ConfigError(f"axis {ax}: wall on a periodic axis")
            if bk == "periodic" and not self.grid["periodic"][ax]:
                raise ConfigError(f"axis {ax}: bounded axis needs a wall boundary")
        for key in ("k_profile_file", "gauge_z_file"):
            path = self.closure[key]
            if path and not os.path.exists(path):
                raise ConfigError(f"closure.{key} = {path!r} does not exist")

    def resolve_seed(self) -> int:
        seed = int(self.ensemble["seed"])
        if seed < 0:
            seed = int.from_bytes(os.urandom(8), "little") >> 1
            self.ensemble["seed"] = seed
        return seed


def _parse_scalar(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        pass
    return t


def _coerce(section: str, key: str, raw: str, template):
    if (section, key) in _LIST_KEYS:
        parts = [p for p in (s.strip() for s in raw.split(",")) if p]
        values = [_parse_scalar(p) for p in parts]
        elem = template[0] if template else 0.0
        if isinstance(elem, bool):
            return [bool(v) for v in values]
        if isinstance(elem, float):
            return [float(v) for v in values]
        if isinstance(elem, int):
            return [int(v) for v in values]
        return [str(v) for v in values]
    value = _parse_scalar(raw)
    if isinstance(template, bool):
        return bool(value)
    if isinstance(template, float) and not isinstance(value, str):
        return float(value)
    if isinstance(template, int) and isinstance(value, (int, float)) and not isinstance(template, bool):
        return int(value)
    return value


def config_from_dict(overrides: dict | None = None) -> ScenarioConfig:
    data = copy.deepcopy(DEFAULTS)
    for section, entries in (overrides or {}).items():
        if section not in data:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in entries.items():
            if key not in data[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            data[section][key] = copy.deepcopy(value)
    cfg = ScenarioConfig(**data)
    return cfg


def preset_config(scenario_kind: str) -> ScenarioConfig:
    if scenario_kind not in SCENARIO_KINDS:
        raise ConfigError(
            f"unknown scenario {scenario_kind!r}; valid: {SCENARIO_KINDS}"
        )
    overrides = copy.deepcopy(PRESETS.get(scenario_kind, {}))
    overrides.setdefault("scenario", {})["kind"] = scenario_kind
    return config_from_dict(overrides)


def load_config(path) -> ScenarioConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as fh:
        parser.read_file(fh)
    data = copy.deepcopy(DEFAULTS)
    for section in parser.sections():
        if section not in data:
            raise ConfigError(f"unknown config section [{section}] in {path}")
        for key, raw in parser.items(section):
            if key not in data[section]:
                raise ConfigError(f"unknown key {section}.{key} in {path}")
            data[section][key] = _coerce(section, key, raw, data[section][key])
    cfg = ScenarioConfig(**data)
    return cfg


def dump_config(cfg: ScenarioConfig, path) -> None:
    """Write the fully-resolved configuration (the report echoes the same)."""
    parser = configparser.ConfigParser()
    for section, entries in cfg.to_dict().items():
        parser.add_section(section)
        for key, value in entries.items():
            if isinstance(value, list):
                parser.set(section, key, ", ".join(str(v) for v in value))
            else:
                parser.set(section, key, str(value))
    with open(path, "w") as fh:
        parser.write(fh)
