"""Checkpoints and CSV output.

Checkpoints are JSON; arrays are stored as lists of ``float.hex`` strings and
scalars as hex too, so a round trip is bit-exact.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .density import WeightedPointCloud
from .flow import DualState, StepRecord, make_state
from .geometry import ConvexDomain

CHECKPOINT_SCHEMA = 1


class CheckpointError(ValueError):
    pass


class MigrationError(CheckpointError):
    pass


class ConfigMismatch(CheckpointError):
    pass


def _hex(a) -> list:
    return [float(v).hex() for v in np.asarray(a, float).ravel()]


def _unhex(v, shape=None) -> np.ndarray:
    a = np.array([float.fromhex(s) for s in v], dtype=float)
    return a.reshape(shape) if shape is not None else a


@dataclass
class Checkpoint:
    t: float
    step: int
    t_origin: float
    positions: np.ndarray
    masses: np.ndarray
    psi: np.ndarray
    y3_0: np.ndarray
    records: list
    rng_state: dict | None
    config_hash: str
    monitor: dict | None = None
    schema: int = CHECKPOINT_SCHEMA

    def state(self, domain: ConvexDomain, tol: float) -> DualState:
        """Rebuild the state; the stored weights already solve the transport problem."""
        return make_state(domain, WeightedPointCloud(self.positions, self.masses), self.t, tol,
                          warm_start=self.psi)

    def step_records(self) -> list[StepRecord]:
        return [StepRecord(**r) for r in self.records]

    def monitor_window(self, domain: ConvexDomain, tol: float) -> list[DualState]:
        if not self.monitor:
            return []
        return [make_state(domain, WeightedPointCloud(w["positions"], self.masses), w["t"], tol,
                           warm_start=w["psi"]) for w in self.monitor["window"]]


def _enc_row(r: dict) -> dict:
    return {k: (float(v).hex() if isinstance(v, float) else v) for k, v in r.items()}


def _dec_row(r: dict) -> dict:
    return {k: (float.fromhex(v) if isinstance(v, str) else v) for k, v in r.items()}


def save_checkpoint(path, state: DualState, step: int, t_origin: float, y3_0, records, config_hash: str,
                    rng_state: dict | None = None, monitor_window=(), monitor_rows=(),
                    monitor_count: int = 0) -> None:
    """Write a checkpoint atomically.

    ``monitor_*`` carry the streaming monitor state (the last stored states
    and the rows emitted so far) so that a resumed run reproduces them.
    """
    d = {
        "schema": CHECKPOINT_SCHEMA,
        "config_hash": config_hash,
        "t": float(state.t).hex(),
        "step": int(step),
        "t_origin": float(t_origin).hex(),
        "n": len(state.cloud),
        "positions": _hex(state.positions),
        "masses": _hex(state.cloud.masses),
        "psi": _hex(state.potentials.psi),
        "y3_0": _hex(y3_0),
        "records": [_enc_row(r.to_dict()) for r in records],
        "rng_state": rng_state,
        "monitor": {"count": int(monitor_count), "rows": [_enc_row(r) for r in monitor_rows],
                    "window": [{"t": float(w.t).hex(), "positions": _hex(w.positions),
                                "psi": _hex(w.potentials.psi)} for w in monitor_window]},
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="\n") as fh:
        json.dump(d, fh, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def load_checkpoint(path, config_hash: str | None = None, override: bool = False) -> Checkpoint:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except FileNotFoundError as e:
        raise CheckpointError(f"checkpoint not found: {path}") from e
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"checkpoint {path} is corrupt or truncated: {e}") from e
    if not isinstance(d, dict) or "schema" not in d:
        raise CheckpointError(f"{path} is not a checkpoint")
    if d["schema"] != CHECKPOINT_SCHEMA:
        raise MigrationError(f"checkpoint schema {d['schema']} is not supported (expected {CHECKPOINT_SCHEMA})")
    if config_hash is not None and d["config_hash"] != config_hash and not override:
        raise ConfigMismatch("checkpoint was written by a different configuration")
    try:
        n = int(d["n"])
        recs = [_dec_row(r) for r in d["records"]]
        mon = d.get("monitor")
        if mon is not None:
            mon = {"count": int(mon["count"]), "rows": [_dec_row(r) for r in mon["rows"]],
                   "window": [{"t": float.fromhex(w["t"]), "positions": _unhex(w["positions"], (n, 3)),
                               "psi": _unhex(w["psi"])} for w in mon["window"]]}
        return Checkpoint(float.fromhex(d["t"]), int(d["step"]), float.fromhex(d["t_origin"]),
                          _unhex(d["positions"], (n, 3)), _unhex(d["masses"]), _unhex(d["psi"]),
                          _unhex(d["y3_0"]), recs, d.get("rng_state"), d["config_hash"], mon, d["schema"])
    except (KeyError, ValueError, TypeError) as e:
        raise CheckpointError(f"checkpoint {path} is malformed: {e}") from e


# --------------------------------------------------------------------------- CSV


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def write_csv(path, header, rows) -> None:
    """RFC-4180 CSV with LF line endings and shortest round-trip float text."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_records_csv(path, records) -> None:
    dicts = [r.to_dict() if hasattr(r, "to_dict") else dict(r) for r in records]
    if not dicts:
        write_csv(path, ["step"], [])
        return
    header = list(dicts[0])
    write_csv(path, header, [[d.get(k, "") for k in header] for d in dicts])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
