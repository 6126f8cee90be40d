"""Run configuration: strict JSON schema with defaults."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


WORKFLOWS = ("run", "ot-solve", "recover", "decay-lab", "steady-check")

DEFAULTS: dict = {
    "name": None,
    "workflow": "run",
    "output_dir": "out",
    "domain": {"kind": "box", "center": [0.5, 0.5, 0.5], "half_widths": [0.5, 0.5, 0.5]},
    "density": {"kind": "uniform-on-domain"},
    "N": 100,
    "seed": 0,
    "dt": 0.01,
    "T": 1.0,
    "scheme": "rk2",
    "ot_tol": 1e-8,
    "stage_tol": None,
    "output_every": 1,
    "checkpoint_every": 0,
    "quantize": {"tol": 1e-6, "max_iter": 200},
    "battery": {"count": 12, "seed": 0, "degree": 3},
    "monitors": True,
    "decay": {"field": {"name": "dilation"}, "density": {"kind": "power-tail-bump", "K": 6, "c0": 1.0, "M": 2.0},
              "times": [0.1, 0.5, 1.0], "samples": 10000, "seed": 0, "bounds": ["i", "ii", "iii"],
              "r": 1.0, "R": None, "tol": 1e-12, "strict": False},
    "steady": {"max_speed": 1e-5, "max_displacement": 1e-4},
}

# keys whose values are free-form descriptors validated by their own builders
_OPEN = {"domain", "density", "field"}

_TYPES = {
    "name": str, "workflow": str, "output_dir": str, "N": int, "seed": int, "dt": float, "T": float,
    "scheme": str, "ot_tol": float, "stage_tol": (float, type(None)), "output_every": int,
    "checkpoint_every": int, "monitors": bool,
}


def _merge(default: dict, given: dict, path: str) -> dict:
    out = copy.deepcopy(default)
    for k, v in given.items():
        if k not in default:
            raise ConfigError(f"unknown key {path}{k!r}")
        if isinstance(default[k], dict) and k not in _OPEN:
            if not isinstance(v, dict):
                raise ConfigError(f"{path}{k} must be an object")
            out[k] = _merge(default[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


def _check_type(key, value, typ):
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        return
    if isinstance(typ, tuple) and float in typ and isinstance(value, int) and not isinstance(value, bool):
        return
    if isinstance(value, bool) and typ is not bool:
        raise ConfigError(f"{key} has the wrong type")
    if not isinstance(value, typ):
        raise ConfigError(f"{key} has the wrong type ({type(value).__name__})")


@dataclass(frozen=True)
class RunConfig:
    data: dict

    def __getitem__(self, k):
        return self.data[k]

    @property
    def name(self) -> str:
        return self.data["name"]

    def canonical(self) -> str:
        d = {k: v for k, v in self.data.items() if k != "output_dir"}
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    @property
    def run_dir(self) -> Path:
        return Path(self.data["output_dir"]) / self.name

    @classmethod
    def from_dict(cls, given: dict) -> "RunConfig":
        if not isinstance(given, dict):
            raise ConfigError("config must be a JSON object")
        d = _merge(DEFAULTS, given, "")
        for k, typ in _TYPES.items():
            _check_type(k, d[k], typ)
        if not d["name"] or any(c in d["name"] for c in "/\\") or d["name"] in (".", ".."):
            raise ConfigError("name must be a non-empty plain directory name")
        if d["workflow"] not in WORKFLOWS:
            raise ConfigError(f"unknown workflow {d['workflow']!r}")
        if d["scheme"] not in ("euler", "rk2", "rk4"):
            raise ConfigError(f"unknown scheme {d['scheme']!r}")
        if d["N"] < 1:
            raise ConfigError("N must be >= 1")
        if not d["dt"] > 0 or not d["T"] >= 0:
            raise ConfigError("dt must be positive and T nonnegative")
        if not d["ot_tol"] > 0 or (d["stage_tol"] is not None and not d["stage_tol"] > 0):
            raise ConfigError("tolerances must be positive")
        if d["output_every"] < 1 or d["checkpoint_every"] < 0:
            raise ConfigError("output_every must be >= 1 and checkpoint_every >= 0")
        for key in ("domain", "density"):
            if not isinstance(d[key], dict) or "kind" not in d[key]:
                raise ConfigError(f"{key} must be an object with a 'kind'")
        dec = d["decay"]
        if not isinstance(dec["field"], dict) or not isinstance(dec["density"], dict):
            raise ConfigError("decay.field and decay.density must be objects")
        if not all(isinstance(t, (int, float)) and t >= 0 for t in dec["times"]):
            raise ConfigError("decay.times must be nonnegative numbers")
        if not set(dec["bounds"]) <= {"i", "ii", "iii"}:
            raise ConfigError("decay.bounds must be drawn from i, ii, iii")
        return cls(d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                given = json.load(fh)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        return cls.from_dict(given)
