"""Experiment configuration: YAML loading, defaults and validation.

Every rejected config raises :class:`ConfigError` with one of the codes in
``ERROR_CODES``.  The fully resolved config (defaults included) is written
into each artifact so runs are self-describing.
"""
from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .exceptions import ConfigError
from .lattice import DEFAULT_MODE_CAP
from .nonlinear import ResonantSet
from .spectrum import MarylandParams

ERROR_CODES = {
    "E_READ": "config file missing, unreadable or not valid YAML",
    "E_UNKNOWN_KEY": "unknown section or key",
    "E_TYPE": "value has the wrong type",
    "E_MISSING": "required key absent",
    "E_DIMENSION": "dimensions of alpha, d, anchors or b disagree",
    "E_RANGE": "numeric value outside its admissible range",
    "E_TAU": "tau must exceed d",
    "E_ANCHOR_AMPLITUDE": "anchor without an amplitude",
    "E_ANCHOR_DISTINCT": "anchor sites are not pairwise distinct",
    "E_ANCHOR_WINDOW": "anchor amplitude outside the admissible window",
    "E_ANCHOR_SITE": "anchor site outside the spatial box",
    "E_CAP": "a mode block exceeds the configured cap",
    "E_SCALES": "probe scales or sigma interval malformed",
    "E_SEED": "seed is not an unsigned 64-bit integer",
}

DEFAULTS = {
    "seed": 0,
    "model": {
        "d": None,
        "eps": None,
        "alpha": None,
        "theta": None,
        "gamma": 0.2,
        "tau": None,
        "radius": 10,
        "singularity_tol": 1e-6,
        "match_radius": 2,
        "boundary_margin": 4,
    },
    "solver": {
        "b": None,
        "p": 1,
        "anchors": None,
        "delta": 1e-3,
        "M": 3,
        "tol": 1e-10,
        "max_r": 8,
        "max_time_radius": 4,
        "cond_max": 1e12,
        "amplitude_window": [1.0, 2.0],
        "time_samples": 50,
        "time_horizon": 100.0,
    },
    "spectrum": {
        "theta_grid": 400,
        "pole_margin": 1e-4,
        "symmetry_samples": 10,
        "covariance_shifts": 20,
        "covariance_radius": 8,
        "max_shift": 20,
        "diophantine_jmax": 50,
        "rellich_schedule": [1, 2, 4],
        "rellich_grid": 20,
        "center_window": 2,
    },
    "separation": {
        "N": 4,
        "R": 3,
        "R2": None,
        "scale_floor": 2,
        "K2": 2.0,
        "monte_carlo_samples": 0,
        "monte_carlo_deltas": [1e-3],
    },
    "probes": {
        "scales": [6, 10],
        "n_sigma": 2000,
        "sigma_interval": [-1.0, 1.0],
        "c_tilde": 1.0,
        "drop_tol": 1e-14,
        "max_witnesses": 50,
    },
    "output": {
        "directory": "runs",
        "formats": ["json", "csv"],
    },
    "cap": DEFAULT_MODE_CAP,
}

REQUIRED = {"model": ("eps", "alpha", "theta"), "solver": ("anchors",)}

_INT_KEYS = {
    ("model", "d"), ("model", "radius"), ("model", "match_radius"), ("model", "boundary_margin"),
    ("solver", "b"), ("solver", "p"), ("solver", "M"), ("solver", "max_r"),
    ("solver", "max_time_radius"), ("solver", "time_samples"),
    ("spectrum", "theta_grid"), ("spectrum", "symmetry_samples"), ("spectrum", "covariance_shifts"),
    ("spectrum", "covariance_radius"), ("spectrum", "max_shift"), ("spectrum", "diophantine_jmax"),
    ("spectrum", "rellich_grid"), ("spectrum", "center_window"),
    ("separation", "N"), ("separation", "R"), ("separation", "R2"), ("separation", "scale_floor"),
    ("separation", "monte_carlo_samples"),
    ("probes", "n_sigma"), ("probes", "max_witnesses"),
}


def derive_seed(master, label) -> int:
    """Stable 64-bit sub-seed for a named random stream."""
    digest = hashlib.sha256(f"{int(master)}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _fail(code, message):
    raise ConfigError(code, message)


def _is_int(x):
    return isinstance(x, (int, np.integer)) and not isinstance(x, bool)


def _is_num(x):
    return (isinstance(x, (int, float, np.integer, np.floating)) and not isinstance(x, bool)
            and math.isfinite(float(x)))


def _merge(raw):
    if not isinstance(raw, dict):
        _fail("E_TYPE", "top level must be a mapping")
    cfg = copy.deepcopy(DEFAULTS)
    for key, value in raw.items():
        if key not in DEFAULTS:
            _fail("E_UNKNOWN_KEY", f"unknown section '{key}'")
        if isinstance(DEFAULTS[key], dict):
            if not isinstance(value, dict):
                _fail("E_TYPE", f"section '{key}' must be a mapping")
            for sub, v in value.items():
                if sub not in DEFAULTS[key]:
                    _fail("E_UNKNOWN_KEY", f"unknown key '{key}.{sub}'")
                cfg[key][sub] = v
        else:
            cfg[key] = value
    return cfg


def _check_types(cfg):
    for (sec, key) in _INT_KEYS:
        v = cfg[sec][key]
        if v is not None and not _is_int(v):
            _fail("E_TYPE", f"{sec}.{key} must be an integer")
    for sec, keys in (("model", ("eps", "theta", "gamma", "tau", "singularity_tol")),
                      ("solver", ("delta", "tol", "cond_max", "time_horizon")),
                      ("spectrum", ("pole_margin",)),
                      ("separation", ("K2",)),
                      ("probes", ("c_tilde", "drop_tol"))):
        for key in keys:
            v = cfg[sec][key]
            if v is not None and not _is_num(v):
                _fail("E_TYPE", f"{sec}.{key} must be a finite number")


def validate(raw) -> dict:
    """Merge ``raw`` into the defaults and validate; returns the resolved dict."""
    cfg = _merge(raw)
    seed = cfg["seed"]
    if not _is_int(seed) or not 0 <= int(seed) < 2 ** 64:
        _fail("E_SEED", "seed must be an integer in [0, 2^64)")
    for sec, keys in REQUIRED.items():
        for key in keys:
            if cfg[sec][key] is None:
                _fail("E_MISSING", f"{sec}.{key} is required")
    _check_types(cfg)
    m, s, sp, sep, pr = cfg["model"], cfg["solver"], cfg["spectrum"], cfg["separation"], cfg["probes"]

    alpha = m["alpha"]
    alpha = [alpha] if _is_num(alpha) else alpha
    if not isinstance(alpha, list) or not alpha or not all(_is_num(a) for a in alpha):
        _fail("E_TYPE", "model.alpha must be a number or a list of numbers")
    m["alpha"] = [float(a) for a in alpha]
    d = len(alpha)
    if m["d"] is None:
        m["d"] = d
    elif m["d"] != d:
        _fail("E_DIMENSION", f"model.d={m['d']} but alpha has {d} entries")
    if m["tau"] is None:
        m["tau"] = float(d + 1)
    if m["tau"] <= d:
        _fail("E_TAU", f"tau={m['tau']} must exceed d={d}")
    for key, ok in (("eps", m["eps"] >= 0), ("theta", 0 <= m["theta"] < 1), ("gamma", m["gamma"] > 0),
                    ("radius", m["radius"] >= 1), ("singularity_tol", m["singularity_tol"] > 0),
                    ("match_radius", m["match_radius"] >= 0),
                    ("boundary_margin", m["boundary_margin"] >= 0)):
        if not ok:
            _fail("E_RANGE", f"model.{key}={m[key]!r} out of range")

    anchors = s["anchors"]
    if not isinstance(anchors, list) or not anchors:
        _fail("E_TYPE", "solver.anchors must be a non-empty list")
    sites = []
    for k, a in enumerate(anchors):
        if not isinstance(a, dict) or "site" not in a:
            _fail("E_TYPE", f"solver.anchors[{k}] needs a 'site'")
        if set(a) - {"site", "amplitude"}:
            _fail("E_UNKNOWN_KEY", f"solver.anchors[{k}] has unknown keys {sorted(set(a) - {'site', 'amplitude'})}")
        if a.get("amplitude") is None:
            _fail("E_ANCHOR_AMPLITUDE", f"solver.anchors[{k}] has no amplitude")
        if not _is_num(a["amplitude"]):
            _fail("E_TYPE", f"solver.anchors[{k}].amplitude must be a real number")
        site = a["site"]
        site = [site] if _is_int(site) else site
        if not isinstance(site, list) or not all(_is_int(x) for x in site):
            _fail("E_TYPE", f"solver.anchors[{k}].site must be integers")
        if len(site) != d:
            _fail("E_DIMENSION", f"solver.anchors[{k}].site has {len(site)} entries, d={d}")
        if max(abs(x) for x in site) > m["radius"]:
            _fail("E_ANCHOR_SITE", f"anchor site {site} outside box radius {m['radius']}")
        a["site"] = [int(x) for x in site]
        a["amplitude"] = float(a["amplitude"])
        sites.append(tuple(site))
    if len(set(sites)) != len(sites):
        _fail("E_ANCHOR_DISTINCT", "anchor sites must be pairwise distinct")
    b = len(anchors)
    if s["b"] is None:
        s["b"] = b
    elif s["b"] != b:
        _fail("E_DIMENSION", f"solver.b={s['b']} but {b} anchors given")
    win = s["amplitude_window"]
    if win is not None:
        if not (isinstance(win, list) and len(win) == 2 and all(_is_num(x) for x in win)
                and win[0] < win[1]):
            _fail("E_TYPE", "solver.amplitude_window must be [lo, hi] with lo < hi")
        for a in anchors:
            if not win[0] <= a["amplitude"] <= win[1]:
                _fail("E_ANCHOR_WINDOW", f"amplitude {a['amplitude']} outside {win}")
    for key, ok in (("p", s["p"] >= 1), ("delta", s["delta"] >= 0), ("M", s["M"] >= 2),
                    ("tol", s["tol"] > 0), ("max_r", s["max_r"] >= 1),
                    ("max_time_radius", s["max_time_radius"] >= 1), ("cond_max", s["cond_max"] > 1),
                    ("time_samples", s["time_samples"] >= 1), ("time_horizon", s["time_horizon"] > 0)):
        if not ok:
            _fail("E_RANGE", f"solver.{key}={s[key]!r} out of range")

    for key in ("theta_grid", "symmetry_samples", "covariance_shifts", "covariance_radius",
                "max_shift", "diophantine_jmax", "rellich_grid", "center_window"):
        if sp[key] < 1:
            _fail("E_RANGE", f"spectrum.{key} must be >= 1")
    sched = sp["rellich_schedule"]
    if not (isinstance(sched, list) and sched and all(_is_int(x) and x >= 1 for x in sched)
            and all(a < b for a, b in zip(sched, sched[1:]))):
        _fail("E_TYPE", "spectrum.rellich_schedule must be increasing positive integers")
    if not 0 < sp["pole_margin"] < 0.5:
        _fail("E_RANGE", "spectrum.pole_margin must lie in (0, 0.5)")

    for key in ("N", "R", "scale_floor"):
        if sep[key] < 1:
            _fail("E_RANGE", f"separation.{key} must be >= 1")
    if sep["R2"] is not None and sep["R2"] < 1:
        _fail("E_RANGE", "separation.R2 must be >= 1")
    if sep["monte_carlo_samples"] < 0:
        _fail("E_RANGE", "separation.monte_carlo_samples must be >= 0")
    if not (isinstance(sep["monte_carlo_deltas"], list)
            and all(_is_num(x) and x > 0 for x in sep["monte_carlo_deltas"])):
        _fail("E_TYPE", "separation.monte_carlo_deltas must be positive numbers")

    scales = pr["scales"]
    if not (isinstance(scales, list) and scales and all(_is_int(x) and x >= 1 for x in scales)
            and all(a < b for a, b in zip(scales, scales[1:]))):
        _fail("E_SCALES", "probes.scales must be increasing positive integers")
    iv = pr["sigma_interval"]
    if not (isinstance(iv, list) and len(iv) == 2 and all(_is_num(x) for x in iv) and iv[0] < iv[1]):
        _fail("E_SCALES", "probes.sigma_interval must be [lo, hi] with lo < hi")
    if pr["n_sigma"] < 1 or pr["c_tilde"] <= 0 or pr["drop_tol"] < 0 or pr["max_witnesses"] < 0:
        _fail("E_RANGE", "probes.n_sigma, c_tilde, drop_tol or max_witnesses out of range")

    out = cfg["output"]
    if not isinstance(out["directory"], str):
        _fail("E_TYPE", "output.directory must be a string")
    if not (isinstance(out["formats"], list) and set(out["formats"]) <= {"json", "csv"}):
        _fail("E_TYPE", "output.formats must be a subset of [json, csv]")

    cap = cfg["cap"]
    if not _is_int(cap) or cap < 1:
        _fail("E_TYPE", "cap must be a positive integer")
    n_sites = (2 * m["radius"] + 1) ** d
    blocks = {
        "solver block": 2 * (2 * s["max_time_radius"] + 1) ** b * n_sites,
        "ldt union": 2 * (2 * max(scales) + 1) ** b * n_sites,
    }
    for name, size in blocks.items():
        if size > cap:
            _fail("E_CAP", f"{name} has {size} modes, cap is {cap}")
    return cfg


def load(path) -> dict:
    try:
        text = Path(path).read_text()
        raw = yaml.safe_load(text)
    except (OSError, UnicodeDecodeError, yaml.YAMLError) as exc:
        raise ConfigError("E_READ", f"{path}: {exc}") from None
    if raw is None:
        raw = {}
    return validate(raw)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated config with accessors for the model objects."""

    data: dict

    @classmethod
    def from_file(cls, path, seed=None):
        cfg = load(path)
        if seed is not None:
            cfg["seed"] = seed
            cfg = validate(cfg)
        return cls(cfg)

    @classmethod
    def from_dict(cls, raw, seed=None):
        raw = copy.deepcopy(raw)
        if seed is not None:
            raw["seed"] = seed
        return cls(validate(raw))

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def sub_seed(self, label) -> int:
        return derive_seed(self.seed, label)

    def section(self, name) -> dict:
        return self.data[name]

    def params(self) -> MarylandParams:
        m = self.data["model"]
        return MarylandParams(m["eps"], tuple(m["alpha"]), m["theta"], m["gamma"], m["tau"],
                              m["singularity_tol"])

    def resonant(self) -> ResonantSet:
        s = self.data["solver"]
        win = s["amplitude_window"]
        return ResonantSet([tuple(a["site"]) for a in s["anchors"]],
                           [a["amplitude"] for a in s["anchors"]],
                           tuple(win) if win is not None else None)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)
