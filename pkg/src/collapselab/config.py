"""
Strict JSON run configuration.

The schema rejects unknown keys (with a spelling suggestion when one is
close), validates every field, and reports all violations at once rather
than stopping at the first.
"""

from __future__ import annotations

import difflib
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

__all__ = ["ConfigError", "RunConfig", "parse_config"]

MODES = ("evolve2d", "radial", "meanfield", "diagnose")

# key -> (applicable modes, required-in modes, type check, extra predicate)
_POSITIVE = lambda v: v > 0
_SCHEMA: Dict[str, dict] = {
    "mode": {"modes": MODES, "required": MODES, "type": str,
             "check": lambda v: v in MODES, "hint": f"one of {MODES}"},
    "output_dir": {"modes": MODES, "type": str},
    "seed": {"modes": MODES, "type": int, "check": lambda v: v >= 0,
             "hint": "nonnegative integer"},
    # domain
    "domain": {"modes": ("evolve2d", "meanfield"), "type": str,
               "check": lambda v: v in ("disk", "square"), "hint": "'disk' or 'square'"},
    "R": {"modes": ("evolve2d", "radial", "meanfield"), "type": (int, float),
          "check": _POSITIVE, "hint": "positive"},
    "n": {"modes": ("evolve2d", "radial", "meanfield"),
          "required": ("radial", "meanfield"), "type": int,
          "check": lambda v: v >= 8, "hint": ">= 8"},
    "grading": {"modes": ("radial",), "type": (int, float),
                "check": lambda v: 0 < v <= 1, "hint": "in (0, 1]"},
    # initial data / mass
    "mass": {"modes": ("evolve2d", "radial", "meanfield"),
             "required": ("radial", "meanfield"), "type": (int, float),
             "check": _POSITIVE, "hint": "positive (this is the lambda parameter)"},
    "initial_data": {"modes": ("evolve2d", "radial"), "type": str,
                     "check": lambda v: v in ("uniform", "gaussian", "meanfield", "file"),
                     "hint": "uniform | gaussian | meanfield | file"},
    "width": {"modes": ("evolve2d", "radial"), "type": (int, float),
              "check": _POSITIVE, "hint": "positive"},
    "center": {"modes": ("evolve2d",), "type": list,
               "check": lambda v: len(v) == 2 and all(isinstance(t, (int, float)) for t in v),
               "hint": "[x, y]"},
    "initial_file": {"modes": ("evolve2d",), "type": str},
    # stepping
    "dt_max": {"modes": ("evolve2d", "radial"), "type": (int, float),
               "check": _POSITIVE, "hint": "positive"},
    "cfl_safety": {"modes": ("evolve2d", "radial"), "type": (int, float),
                   "check": lambda v: 0 < v <= 0.9, "hint": "in (0, 0.9]"},
    "blowup_sup_threshold": {"modes": ("evolve2d", "radial"), "type": (int, float),
                             "check": _POSITIVE, "hint": "positive"},
    "max_steps": {"modes": ("evolve2d", "radial"), "type": int,
                  "check": _POSITIVE, "hint": "positive"},
    "horizon": {"modes": ("evolve2d", "radial"), "type": (int, float),
                "check": _POSITIVE, "hint": "positive"},
    "snapshot_interval": {"modes": ("evolve2d",), "type": (int, float),
                          "check": _POSITIVE, "hint": "positive"},
    "semi_implicit": {"modes": ("evolve2d",), "type": bool},
    "snapshot_factor": {"modes": ("radial",), "type": (int, float),
                        "check": lambda v: v > 1, "hint": "> 1"},
    # probes
    "probes": {"modes": ("evolve2d",), "type": list},
    # mean field
    "lam_end": {"modes": ("meanfield",), "type": (int, float), "check": _POSITIVE,
                "hint": "positive"},
    "branch_steps": {"modes": ("meanfield",), "type": int, "check": lambda v: v >= 0,
                     "hint": "nonnegative"},
    "newton_tol": {"modes": ("meanfield",), "type": (int, float), "check": _POSITIVE,
                   "hint": "positive"},
    # diagnostics
    "run_dir": {"modes": ("diagnose",), "required": ("diagnose",), "type": str},
    "b_ladder": {"modes": ("radial", "diagnose"), "type": list,
                 "check": lambda v: all(isinstance(t, (int, float)) and t > 0 for t in v),
                 "hint": "positive numbers"},
    "eps": {"modes": ("diagnose",), "type": (int, float), "check": _POSITIVE,
            "hint": "positive"},
    "eps0": {"modes": ("diagnose",), "type": (int, float), "check": _POSITIVE,
             "hint": "positive"},
    "sigma0": {"modes": ("diagnose",), "type": (int, float), "check": _POSITIVE,
               "hint": "positive"},
}

_PROBE_KEYS = {"kind", "center", "radius", "amplitude"}

_DEFAULTS = {
    "output_dir": "out",
    "seed": 0,
    "domain": "disk",
    "R": 1.0,
    "n": 128,
    "grading": 0.92,
    "initial_data": "gaussian",
    "width": 0.5,
    "center": [0.0, 0.0],
    "dt_max": 1e-2,
    "cfl_safety": 0.45,
    "blowup_sup_threshold": 1e12,
    "max_steps": 2_000_000,
    "horizon": 1.0,
    "snapshot_interval": 0.1,
    "semi_implicit": False,
    "snapshot_factor": 1.5,
    "probes": [],
    "branch_steps": 0,
    "newton_tol": 1e-8,
    "b_ladder": [1, 2, 4, 8, 16],
    "eps": 0.5,
    "eps0": 1.0,
    "sigma0": 0.25,
    "mass": None,
    "lam_end": None,
    "initial_file": None,
    "run_dir": None,
}


class ConfigError(ValueError):
    """Carries the full list of schema violations."""

    def __init__(self, violations: List[str]):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


@dataclass(frozen=True)
class RunConfig:
    """Validated run parameters (see _SCHEMA for the field meanings)."""

    values: Tuple[Tuple[str, object], ...]

    def __getattr__(self, name):
        d = dict(object.__getattribute__(self, "values"))
        if name in d:
            return d[name]
        raise AttributeError(name)

    def as_dict(self) -> dict:
        return dict(self.values)


def _suggest(key: str) -> str:
    if key.lower() in ("lamda", "lambda", "lam"):
        return " (did you mean 'mass'? it is the lambda parameter)"
    near = difflib.get_close_matches(key, _SCHEMA.keys(), n=1, cutoff=0.6)
    if near:
        return f" (did you mean '{near[0]}'?)"
    return ""


def _typename(t) -> str:
    if isinstance(t, tuple):
        return " or ".join(x.__name__ for x in t)
    return t.__name__


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON config; raises ConfigError listing every
    violation found."""
    violations: List[str] = []
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"invalid JSON: {exc}"])
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a JSON object"])

    mode = raw.get("mode")
    if not isinstance(mode, str) or mode not in MODES:
        violations.append(f"'mode' must be one of {MODES}")
        raise ConfigError(violations)

    for key, val in raw.items():
        spec = _SCHEMA.get(key)
        if spec is None:
            violations.append(f"unknown key '{key}'{_suggest(key)}")
            continue
        if mode not in spec["modes"]:
            violations.append(f"key '{key}' does not apply to mode '{mode}'")
            continue
        expected = spec["type"]
        if expected is bool:
            ok_type = isinstance(val, bool)
        elif isinstance(expected, tuple):
            ok_type = isinstance(val, expected) and not isinstance(val, bool)
        else:
            ok_type = isinstance(val, expected) and not (expected is int and isinstance(val, bool))
        if not ok_type:
            violations.append(f"'{key}' must be of type {_typename(expected)}")
            continue
        check = spec.get("check")
        if check is not None and not check(val):
            violations.append(f"'{key}' is out of range: expected {spec.get('hint', 'valid value')}")

    for key, spec in _SCHEMA.items():
        if mode in spec.get("required", ()) and key not in raw:
            violations.append(f"mode '{mode}' requires key '{key}'")

    if mode == "evolve2d":
        for i, probe in enumerate(raw.get("probes", [])):
            if not isinstance(probe, dict):
                violations.append(f"probes[{i}] must be an object")
                continue
            unknown = set(probe) - _PROBE_KEYS
            for k in sorted(unknown):
                violations.append(f"probes[{i}]: unknown key '{k}'")
            kind = probe.get("kind")
            if kind not in ("constant", "quadratic", "bump"):
                violations.append(f"probes[{i}]: 'kind' must be constant | quadratic | bump")
        if raw.get("initial_data") == "file" and not raw.get("initial_file"):
            violations.append("initial_data 'file' requires 'initial_file'")
        if raw.get("initial_data", _DEFAULTS["initial_data"]) in ("uniform", "gaussian",
                                                                  "meanfield") \
                and raw.get("mass") is None:
            violations.append("mode 'evolve2d' requires key 'mass' for generated initial data")

    if violations:
        raise ConfigError(violations)

    merged = dict(_DEFAULTS)
    merged.update(raw)
    keep = {k: v for k, v in merged.items()
            if k == "mode" or (k in _SCHEMA and mode in _SCHEMA[k]["modes"])}
    return RunConfig(values=tuple(sorted(keep.items())))
