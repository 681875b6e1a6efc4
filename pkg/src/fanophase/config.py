"""
Declarative run configuration (TOML).

Every section and key is optional; unknown keys are rejected with their full
key path. Model rates are given either in units of the natural line width
(``rate_units = "gamma"``) or in neV (``rate_units = "neV"``), in which case
they are converted with ``anchors.gamma_neV``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .cavity import GAMMA_NEV, OMEGA0_KEV, PhysicalModel
from .errors import ConfigError

DEFAULTS = {
    "model": {
        "rate_units": "gamma",
        "gamma": 1.0,
        "omega0": 0.0,
        "kappa": 50.0,
        "kappa_r": 25.0,
        "coupling_strength": 250.0,
        "delta_c_slope": 20.0,
        "theta_min": 0.0,
    },
    "anchors": {"gamma_neV": GAMMA_NEV, "omega0_keV": OMEGA0_KEV},
    "angles": {"values": [-5.0, -4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0]},
    "grid": {"start": -10.0, "stop": 10.0, "num": 401, "units": "epsilon"},
    "synthesis": {"exposure": 1e5, "baseline": 0.0, "seed": 0, "noiseless": False, "instrument_fwhm": 0.0},
    "mask": {"intervals": []},
    "fit": {"n_starts": 16, "seed": 0, "n_rep": 0, "slope_from_model": True},
    "phase": {
        "reference_angle": 1.0,
        "n_boot": 200,
        "seed": 0,
        "conditioning": 1e-2,
        "continuum_margin": 2.0,
        "weighting": "inverse-variance",
        "eps_start": -10.0,
        "eps_stop": 10.0,
        "eps_num": 401,
    },
    "run": {"jobs": 1},
    "output": {"dir": "run"},
}

_CHOICES = {
    ("model", "rate_units"): ("gamma", "neV"),
    ("grid", "units"): ("epsilon", "energy"),
    ("phase", "weighting"): ("inverse-variance", "uniform"),
}


def _merge(base, override, path=()):
    for key, value in override.items():
        kp = path + (key,)
        if key not in base:
            raise ConfigError(f"unknown config key '{'.'.join(kp)}'")
        default = base[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{'.'.join(kp)}' must be a table")
            _merge(default, value, kp)
            continue
        base[key] = _coerce(value, default, kp)
    return base


def _coerce(value, default, kp):
    name = ".".join(kp)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"'{name}' must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{name}' must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{name}' must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"'{name}' must be a string")
        choices = _CHOICES.get(kp)
        if choices and value not in choices:
            raise ConfigError(f"'{name}' must be one of {choices}, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"'{name}' must be an array")
        return value
    raise ConfigError(f"'{name}' has unsupported type")


class RunConfig:
    """Resolved configuration; ``data`` mirrors the TOML layout."""

    def __init__(self, data=None, source=None):
        self.data = _merge(copy.deepcopy(DEFAULTS), data or {})
        self.source = source
        self._validate()

    @classmethod
    def load(cls, path, overrides=None):
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        cfg = cls(raw, source=str(path))
        for dotted, value in (overrides or {}).items():
            cfg.set(dotted, value)
        return cfg

    def set(self, dotted, value):
        section, _, key = dotted.partition(".")
        _merge(self.data, {section: {key: value}})
        self._validate()

    def __getitem__(self, section):
        return self.data[section]

    def _validate(self):
        d = self.data
        try:
            self.model()
        except ValueError as exc:
            raise ConfigError(f"model: {exc}") from None
        angles = d["angles"]["values"]
        if not angles or not all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in angles):
            raise ConfigError("'angles.values' must be a non-empty array of numbers")
        if len(set(float(a) for a in angles)) != len(angles):
            raise ConfigError("'angles.values' contains duplicates")
        g = d["grid"]
        if g["num"] < 2 or not g["stop"] > g["start"]:
            raise ConfigError("'grid' must have stop > start and num >= 2")
        if d["synthesis"]["exposure"] < 0:
            raise ConfigError("'synthesis.exposure' must be non-negative")
        if d["synthesis"]["baseline"] < 0:
            raise ConfigError("'synthesis.baseline' must be non-negative")
        for i, iv in enumerate(d["mask"]["intervals"]):
            if not (isinstance(iv, list) and len(iv) == 2 and all(isinstance(v, (int, float)) for v in iv) and iv[0] <= iv[1]):
                raise ConfigError(f"'mask.intervals[{i}]' must be an ordered pair [lo, hi]")
        if d["fit"]["n_starts"] < 1:
            raise ConfigError("'fit.n_starts' must be >= 1")
        if d["fit"]["n_rep"] < 0 or d["phase"]["n_boot"] < 0:
            raise ConfigError("replica counts must be non-negative")
        if d["phase"]["continuum_margin"] < 0:
            raise ConfigError("'phase.continuum_margin' must be non-negative")
        if d["run"]["jobs"] < 1:
            raise ConfigError("'run.jobs' must be >= 1")
        p = d["phase"]
        if p["eps_num"] < 2 or not p["eps_stop"] > p["eps_start"]:
            raise ConfigError("'phase' epsilon grid must have eps_stop > eps_start and eps_num >= 2")

    # -- derived objects

    def model(self) -> PhysicalModel:
        m = self.data["model"]
        scale = 1.0 if m["rate_units"] == "gamma" else 1.0 / self.data["anchors"]["gamma_neV"]
        return PhysicalModel(
            gamma=m["gamma"] * scale,
            omega0=m["omega0"] * scale,
            kappa=m["kappa"] * scale,
            kappa_r=m["kappa_r"] * scale,
            coupling_strength=m["coupling_strength"] * scale * scale,
            delta_c_slope=m["delta_c_slope"] * scale,
            theta_min=m["theta_min"],
        )

    def angles(self):
        return [float(a) for a in self.data["angles"]["values"]]

    def grid(self):
        g = self.data["grid"]
        return np.linspace(g["start"], g["stop"], g["num"])

    def phase_grid(self):
        p = self.data["phase"]
        return np.linspace(p["eps_start"], p["eps_stop"], p["eps_num"])

    @property
    def output_dir(self):
        return Path(self.data["output"]["dir"])

    def to_toml(self) -> str:
        return tomli_w.dumps(self.data)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.data, sort_keys=True).encode()).hexdigest()[:16]

    def write_resolved(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "config.resolved.toml"
        path.write_text(self.to_toml(), encoding="utf-8")
        return path
