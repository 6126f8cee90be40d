"""Run diagnostics: a scalar log inequality, an energy-identity monitor and a JSON report."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .eulerian import dt_grad_pstar, fit_hessians, llogl_monitor, log_plus
from .flow import Trajectory, velocity

REPORT_SCHEMA = 1


# --------------------------------------------------------------------------- inequality


def inequality_sides(a, b, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Both sides of ``ab log+^k(ab) <= 2^{k-1}((k/e)^k + 1) b^2 + 2^{3(k-1)} a^2 log+^{2k}(a)``."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    lhs = a * b * log_plus(a * b) ** k
    rhs = 2.0 ** (k - 1) * ((k / np.e) ** k + 1) * b * b + 2.0 ** (3 * (k - 1)) * a * a * log_plus(a) ** (2 * k)
    return lhs, rhs


@dataclass
class InequalityResult:
    passed: bool
    samples: int
    violations: int
    worst_margin: float
    worst_relative: float

    def to_dict(self):
        return asdict(self)


def check_numeric_inequality(samples: int = 100_000, seed: int = 0, ks=(1, 2, 3, 4, 5),
                             upper: float = 1e6, rel: float = 1e-12) -> InequalityResult:
    """Sample ``(a, b)`` in ``(0, upper)^2`` and test every ``k``.

    Half the pairs are uniform, half log-uniform on ``(1e-6, upper)`` so that
    the regime near ``ab = 1`` is exercised.  ``worst_margin`` is the
    smallest ``rhs - lhs``.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    h = samples // 2
    ab = np.empty((samples, 2))
    ab[:h] = rng.uniform(0, upper, size=(h, 2))
    ab[h:] = np.exp(rng.uniform(np.log(1e-6), np.log(upper), size=(samples - h, 2)))
    ab = np.maximum(ab, np.finfo(float).tiny)
    bad = 0
    worst = np.inf
    worst_rel = -np.inf
    for k in ks:
        lhs, rhs = inequality_sides(ab[:, 0], ab[:, 1], k)
        bad += int(np.count_nonzero(lhs > rhs * (1 + rel)))
        worst = min(worst, float((rhs - lhs).min()))
        worst_rel = max(worst_rel, float(((lhs - rhs) / rhs).max()))
    return InequalityResult(bad == 0, samples, bad, worst, worst_rel)


# --------------------------------------------------------------------------- energy identity


def pinv_psd(H: np.ndarray, rcond: float = 1e-10) -> np.ndarray:
    """Pseudo-inverse of the symmetric part of each ``3x3`` block, negative modes dropped."""
    S = 0.5 * (H + np.swapaxes(H, -1, -2))
    lam, V = np.linalg.eigh(S)
    cut = rcond * np.maximum(lam.max(axis=-1, keepdims=True), 0.0)
    inv = np.where(lam > cut, 1.0 / np.where(lam > cut, lam, 1.0), 0.0)
    return np.einsum("...ij,...j,...kj->...ik", V, inv, V)


def energy_identity_monitor(masses, bdot, H, U) -> tuple[float, float]:
    """``(sum m w.H^+ w, -sum m w.U)`` with ``w = bdot - H U``.

    ``bdot`` is the derivative of the barycenter along its particle, so the
    derivative at a fixed dual point is ``w = bdot - H U``.  The two numbers
    are discrete versions of the two sides of an integration-by-parts
    identity and are reported without a threshold.
    """
    m = np.asarray(masses, float)
    w = np.asarray(bdot, float) - np.einsum("nij,nj->ni", H, U)
    lhs = float(np.sum(m * np.einsum("ni,nij,nj->n", w, pinv_psd(H), w)))
    rhs = float(-np.sum(m * np.einsum("ni,ni->n", w, U)))
    return lhs, rhs


# --------------------------------------------------------------------------- report


@dataclass
class DiagnosticsReport:
    metadata: dict
    records: list = field(default_factory=list)
    inequality: dict | None = None
    schema: int = REPORT_SCHEMA

    def to_json(self) -> str:
        return json.dumps({"schema": self.schema, "metadata": self.metadata, "records": self.records,
                           "inequality": self.inequality}, indent=1, sort_keys=True)

    def write(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def read(cls, path) -> "DiagnosticsReport":
        with open(path) as fh:
            d = json.load(fh)
        if d.get("schema") != REPORT_SCHEMA:
            raise ValueError(f"unsupported report schema {d.get('schema')!r}")
        return cls(d["metadata"], d["records"], d.get("inequality"), d["schema"])

    def max_margin(self) -> float:
        return max(r["bound_margin"] for r in self.records)

    def max_vertical_drift(self) -> float:
        return max(r["vertical_drift"] for r in self.records)


def monitor_row(window, k: int) -> dict:
    """Monitors for ``window[k]`` using the derivative through all states of ``window``."""
    st = window[k]
    bdot = dt_grad_pstar([w.t for w in window], [w.barycenters for w in window], k)
    H, low = fit_hessians(st.diagram)
    U = velocity(st)
    m = st.cloud.masses
    row = {"t": st.t}
    row.update(llogl_monitor(m, bdot, H))
    row["identity_lhs"], row["identity_rhs"] = energy_identity_monitor(m, bdot, H, U)
    row["low_confidence_hessians"] = int(low.sum())
    return row


class StreamingMonitor:
    """Monitors over stored states using a sliding window of three.

    Only the last two states and the emitted rows need to be kept, so a run
    resumed from a checkpoint carrying them produces identical rows.
    """

    def __init__(self, window=None, rows=None, count: int = 0):
        self.window = list(window or [])
        self.rows = list(rows or [])
        self.count = count

    def push(self, state) -> None:
        self.window = (self.window + [state])[-3:]
        self.count += 1
        if self.count == 3:
            self.rows.append(monitor_row(self.window, 0))
        if self.count >= 3:
            self.rows.append(monitor_row(self.window, 1))

    def finish(self) -> list:
        if self.count >= 3:
            self.rows.append(monitor_row(self.window, 2))
        return self.rows

    @property
    def tail(self) -> list:
        return self.window[-2:]


def build_report(traj: Trajectory, metadata: dict, inequality: InequalityResult | None = None,
                 monitor_rows: list | None = None) -> DiagnosticsReport:
    """One record per stored state, merged with monitor rows when given."""
    rep = DiagnosticsReport(dict(metadata), [], inequality.to_dict() if inequality else None)
    if monitor_rows is None:
        mon = StreamingMonitor()
        for st in traj.states:
            mon.push(st)
        monitor_rows = mon.finish()
    for k, rec in enumerate(traj.records):
        row = rec.to_dict() if hasattr(rec, "to_dict") else dict(rec)
        if k < len(monitor_rows):
            row.update({key: v for key, v in monitor_rows[k].items() if key != "t"})
        rep.records.append(row)
    return rep
