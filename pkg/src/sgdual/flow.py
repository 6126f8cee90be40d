"""Time integration of the dual transport system ``dy_i/dt = J (y_i - b_i)``."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels as K
from .density import WeightedPointCloud
from .geometry import ConvexDomain
from .ot import DualPotentials, LaguerreDiagram, OTError, solve_weights

log = logging.getLogger(__name__)

SCHEMES = ("euler", "rk2", "rk4")


@dataclass(frozen=True)
class RotationOperator:
    """Quarter turn about the vertical axis, annihilating ``e3``."""

    matrix: np.ndarray = field(default_factory=lambda: np.array([[0.0, -1.0, 0.0],
                                                                 [1.0, 0.0, 0.0],
                                                                 [0.0, 0.0, 0.0]]))
    e3: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def apply(self, v) -> np.ndarray:
        """Row-wise ``J v`` with the third component set to exactly zero."""
        v = np.atleast_2d(v)
        return np.stack([-v[:, 1], v[:, 0], np.zeros(len(v))], axis=1)


J = RotationOperator()


class StalenessError(RuntimeError):
    pass


class StepError(RuntimeError):
    def __init__(self, msg: str, t: float):
        super().__init__(msg)
        self.t = t


@dataclass(frozen=True, eq=False)
class DualState:
    t: float
    cloud: WeightedPointCloud
    potentials: DualPotentials
    diagram: LaguerreDiagram
    residual: float
    tol: float

    @property
    def positions(self) -> np.ndarray:
        return self.cloud.positions

    @property
    def barycenters(self) -> np.ndarray:
        return self.diagram.barycenters

    @property
    def domain(self) -> ConvexDomain:
        return self.diagram.domain


def make_state(domain: ConvexDomain, cloud: WeightedPointCloud, t: float = 0.0, tol: float = 1e-8,
               warm_start=None) -> DualState:
    sol = solve_weights(domain, cloud, tol=tol, warm_start=warm_start)
    return DualState(float(t), cloud, sol.potentials, sol.diagram, sol.residual, tol)


def velocity(state: DualState) -> np.ndarray:
    """``U_i = J (y_i - b_i)`` for a state whose transport problem is solved."""
    if state.diagram.positions is not state.cloud.positions and not np.array_equal(
            state.diagram.positions, state.cloud.positions):
        raise StalenessError("diagram does not belong to the cloud")
    if not state.residual <= state.tol:
        raise StalenessError(f"transport residual {state.residual:.3e} exceeds {state.tol:.3e}")
    if np.any(state.diagram.empty):
        raise StalenessError("state has empty cells")
    return J.apply(state.positions - state.barycenters)


def _stage_velocity(domain, y, masses, tol, warm):
    sol = solve_weights(domain, (y, masses), tol=tol, warm_start=warm, keep_cells=False)
    return J.apply(y - sol.diagram.barycenters), sol.potentials


def step(state: DualState, dt: float, scheme: str = "rk2", stage_tol: float | None = None) -> DualState:
    """Advance one explicit step with a warm-started transport solve at each stage."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    dom = state.domain
    m = state.cloud.masses
    y = state.positions
    tol = state.tol
    st = tol if stage_tol is None else stage_tol
    k1 = velocity(state)
    warm = state.potentials
    try:
        if scheme == "euler":
            y1 = y + dt * k1
        elif scheme == "rk2":
            k2, warm = _stage_velocity(dom, y + 0.5 * dt * k1, m, st, warm)
            y1 = y + dt * k2
        else:
            k2, warm = _stage_velocity(dom, y + 0.5 * dt * k1, m, st, warm)
            k3, warm = _stage_velocity(dom, y + 0.5 * dt * k2, m, st, warm)
            k4, warm = _stage_velocity(dom, y + dt * k3, m, st, warm)
            y1 = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        cloud = WeightedPointCloud(y1, m)
        return make_state(dom, cloud, state.t + dt, tol, warm_start=warm)
    except (OTError, ValueError) as e:
        raise StepError(f"step from t={state.t:.6g} failed: {e}", state.t) from e


def _advance(state, dt, scheme, stage_tol, depth=0, max_halvings=5):
    try:
        return step(state, dt, scheme, stage_tol)
    except StepError:
        if depth >= max_halvings:
            raise
        log.warning("halving dt to %g at t=%g", dt / 2, state.t)
        mid = _advance(state, dt / 2, scheme, stage_tol, depth + 1, max_halvings)
        return _advance(mid, dt / 2, scheme, stage_tol, depth + 1, max_halvings)


def geostrophic_energy(state: DualState) -> float:
    """``1/2 sum_i m_i |(y_i - b_i)_h|^2`` (horizontal part only)."""
    d = state.positions - state.barycenters
    return float(0.5 * np.sum(state.cloud.masses * (d[:, 0] ** 2 + d[:, 1] ** 2)))


def transport_energy(state: DualState) -> float:
    """``1/2 sum_i int_{Lag_i} |x - y_i|^2 dx / |domain|``.

    This is half the squared transport distance between the cloud and the
    normalised domain measure.  Its derivative along the flow is
    ``sum_i m_i (y_i - b_i) . J (y_i - b_i) = 0``, so it is conserved by the
    exact dynamics; it equals the usual semigeostrophic energy up to a
    constant.
    """
    y = state.positions
    cells = state.diagram.cells
    if not cells:
        raise StalenessError("diagram was built without cells")
    tot = sum(K.second_moment(c.pts, c.fptr, y[i]) for i, c in enumerate(cells) if c.n_faces)
    return 0.5 * tot / state.domain.volume


@dataclass
class StepRecord:
    step: int
    t: float
    geostrophic_energy: float
    transport_energy: float
    bound_margin: float
    vertical_drift: float
    ot_residual: float
    min_volume: float
    max_speed: float

    def to_dict(self):
        return dict(self.__dict__)


def record(state: DualState, k: int, y3_0: np.ndarray) -> StepRecord:
    U = velocity(state)
    d_om = state.domain.d_Omega
    margin = float(np.max(np.linalg.norm(U, axis=1) - np.linalg.norm(state.positions, axis=1) - d_om))
    return StepRecord(k, state.t, geostrophic_energy(state), transport_energy(state), margin,
                      float(np.max(np.abs(state.positions[:, 2] - y3_0))), state.residual,
                      float(state.diagram.volumes.min()), float(np.linalg.norm(U, axis=1).max()))


@dataclass
class Trajectory:
    states: list
    records: list
    dt: float
    scheme: str

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])


def integrate(state: DualState, dt: float, T: float, scheme: str = "rk2", stage_tol: float | None = None,
              output_every: int = 1, start_step: int = 0, t_origin: float | None = None, y3_0=None,
              on_step: Callable[[int, DualState], None] | None = None, keep_states: bool = True,
              records: list | None = None) -> Trajectory:
    """Integrate to time ``T`` with steps of size ``dt``.

    Step ``k`` ends at ``t_origin + k dt`` (by multiplication, not summation)
    and the last step is shortened to end exactly at ``T``.  A run resumed at
    step ``start_step`` with the same origin reproduces the original times.
    """
    origin = state.t if t_origin is None else t_origin
    total = int(np.ceil((T - origin) / dt * (1 - 1e-12))) if T > origin else 0
    y3_0 = state.positions[:, 2].copy() if y3_0 is None else y3_0
    states = [state]
    records = records if records is not None else [record(state, start_step, y3_0)]
    cur = state
    for k in range(start_step + 1, total + 1):
        t_exact = T if k == total else origin + k * dt
        try:
            nxt = _advance(cur, t_exact - cur.t, scheme, stage_tol)
        except StepError as e:
            raise StepError(f"{e} (step {k})", cur.t) from e
        cur = DualState(t_exact, nxt.cloud, nxt.potentials, nxt.diagram, nxt.residual, nxt.tol)
        if k % output_every == 0 or k == total:
            if keep_states:
                states.append(cur)
            else:
                states[-1] = cur
            records.append(record(cur, k, y3_0))
        if on_step is not None:
            on_step(k, cur)
    return Trajectory(states, records, dt, scheme)
