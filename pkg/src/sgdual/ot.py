"""Semi-discrete optimal transport between a weighted point cloud and a domain.

Cells are power (Laguerre) cells

    Lag_i = {x in domain : |x - y_i|^2 - psi_i <= |x - y_j|^2 - psi_j  for all j},

so that the convex potential ``P(x) = max_i (x . y_i - phi_i)`` with
``phi_i = (|y_i|^2 - psi_i) / 2`` has gradient ``y_i`` on ``Lag_i``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linprog
from scipy.spatial import cKDTree

from . import _kernels as K
from .geometry import ConvexDomain, ConvexPolytope

log = logging.getLogger(__name__)


class OTError(RuntimeError):
    """Newton solver failed to reach the requested tolerance."""

    def __init__(self, msg: str, residual: float = np.nan, iterations: int = 0):
        super().__init__(msg)
        self.residual = residual
        self.iterations = iterations


class PreconditionError(ValueError):
    pass


class DomainError(ValueError):
    pass


def _positions_masses(cloud):
    if hasattr(cloud, "positions"):
        return np.asarray(cloud.positions, float), np.asarray(cloud.masses, float)
    y, m = cloud
    return np.asarray(y, float), np.asarray(m, float)


def check_distinct(Y: np.ndarray, rel: float = 1e-9) -> None:
    if len(Y) < 2:
        return
    diam = float(np.linalg.norm(Y.max(0) - Y.min(0)))
    d, _ = cKDTree(Y).query(Y, k=2)
    if d[:, 1].min() <= rel * max(diam, 1e-300):
        raise PreconditionError("cloud positions are not pairwise distinct")


@dataclass(frozen=True, eq=False)
class DualPotentials:
    """Power weights ``psi``; the solver keeps the gauge ``sum(psi) = 0``.

    The array is stored exactly as given so that a diagram rebuilt from it is
    bitwise identical to the one it came from; use :meth:`gauged` to centre.
    """

    psi: np.ndarray

    def __post_init__(self):
        psi = np.array(self.psi, dtype=float)
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)

    @classmethod
    def gauged(cls, psi) -> "DualPotentials":
        psi = np.asarray(psi, float)
        return cls(psi - psi.mean())

    def phi(self, positions) -> np.ndarray:
        y = np.asarray(positions, float)
        return 0.5 * ((y * y).sum(1) - self.psi)


@dataclass(frozen=True, eq=False)
class LaguerreDiagram:
    """Power diagram restricted to the domain.

    ``volumes`` are normalised by the domain volume.  ``adjacency`` is a
    symmetric sparse matrix of shared facet areas (physical units).
    """

    domain: ConvexDomain
    positions: np.ndarray
    psi: np.ndarray
    volumes: np.ndarray
    barycenters: np.ndarray
    adjacency: sp.csr_matrix
    empty: np.ndarray
    cells: list = field(repr=False, default_factory=list)

    @property
    def n(self) -> int:
        return len(self.positions)

    def hessian(self) -> sp.csr_matrix:
        """Jacobian of the volume map ``psi -> volumes`` (graph Laplacian)."""
        A = self.adjacency.tocoo()
        Y = self.positions
        w = A.data / np.linalg.norm(Y[A.row] - Y[A.col], axis=1)
        w /= 2.0 * self.domain.volume
        W = sp.csr_matrix((w, (A.row, A.col)), shape=A.shape)
        return (sp.diags(np.asarray(W.sum(1)).ravel()) - W).tocsr()

    def neighbours(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        row = self.adjacency.getrow(i)
        return row.indices.copy(), row.data.copy()


@dataclass(frozen=True, eq=False)
class OTSolution:
    potentials: DualPotentials
    diagram: LaguerreDiagram
    masses: np.ndarray
    residual: float
    iterations: int


def _domain_arrays(domain: ConvexDomain):
    s = domain.shape
    return (np.ascontiguousarray(s.pts), np.ascontiguousarray(s.fptr), np.ascontiguousarray(s.flab),
            np.ascontiguousarray(s.fnrm), np.ascontiguousarray(s.foff))


def build_laguerre(domain: ConvexDomain, cloud, psi=None, keep_cells: bool = True) -> LaguerreDiagram:
    """Clip the domain by every bisector half-space of every site."""
    Y, _ = _positions_masses(cloud)
    Y = np.ascontiguousarray(Y)
    n = len(Y)
    if psi is None:
        psi = np.zeros(n)
    psi = np.ascontiguousarray(getattr(psi, "psi", psi), dtype=float)
    dom = _domain_arrays(domain)
    eps = domain.eps
    vols = np.zeros(n)
    bary = np.full((n, 3), np.nan)
    rows, cols, areas = [], [], []
    cells = []
    for i in range(n):
        pts, fptr, flab, fnrm, foff = K.laguerre_cell(i, Y, psi, *dom, eps)
        if len(flab) == 0:
            if keep_cells:
                cells.append(ConvexPolytope(pts, fptr, flab, fnrm, foff, eps))
            continue
        v, b, a = K.integrals(pts, fptr)
        vols[i] = v
        bary[i] = b
        nb = flab >= 0
        rows.append(np.full(nb.sum(), i))
        cols.append(flab[nb])
        areas.append(a[nb])
        if keep_cells:
            cells.append(ConvexPolytope(pts, fptr, flab, fnrm, foff, eps))
    if rows:
        r, c, a = np.concatenate(rows), np.concatenate(cols), np.concatenate(areas)
    else:
        r = c = np.zeros(0, dtype=np.int64)
        a = np.zeros(0)
    A = sp.coo_matrix((a, (r, c)), shape=(n, n)).tocsr()
    A = ((A + A.T) * 0.5).tocsr()
    A.eliminate_zeros()
    empty = vols <= 0
    return LaguerreDiagram(domain, Y, psi.copy(), vols / domain.volume, bary, A, empty, cells)


def cold_start(domain: ConvexDomain, positions) -> np.ndarray:
    """Weights whose cells are a scaled Voronoi diagram with every cell nonempty.

    With ``psi_i = (1 - s)|y_i - c|^2`` the cells are ``c + s (Vor_i - c)``;
    ``s`` is chosen so that the scaled sites lie inside the domain.
    """
    Y = np.asarray(positions, float)
    c = domain.centroid
    room = domain.shape.foff - domain.shape.fnrm @ c
    reach = (Y - c) @ domain.shape.fnrm.T
    s = 1.0
    pos = reach > 0
    if np.any(pos):
        s = min(1.0, 0.9 * float(np.min(np.where(pos, room[None, :] / np.where(pos, reach, 1.0), np.inf))))
    return (1.0 - s) * ((Y - c) ** 2).sum(1)


def _newton_direction(diagram: LaguerreDiagram, F: np.ndarray) -> np.ndarray:
    H = diagram.hessian()
    n = len(F)
    if n == 1:
        return np.zeros(1)
    # ground site 0, then project onto the gauge hyperplane
    Hr = H[1:, 1:].tocsc()
    try:
        d = spla.spsolve(Hr, -F[1:])
        if not np.all(np.isfinite(d)):
            raise RuntimeError
    except Exception:
        d = spla.lsqr(Hr, -F[1:], atol=1e-14, btol=1e-14)[0]
    d = np.concatenate([[0.0], d])
    return d - d.mean()


def solve_weights(domain: ConvexDomain, cloud, tol: float = 1e-8, warm_start=None,
                  max_iter: int = 100, max_halvings: int = 40, keep_cells: bool = True) -> OTSolution:
    """Damped Newton iteration for ``volumes(psi) = masses``."""
    Y, m = _positions_masses(cloud)
    if np.any(m <= 0):
        raise PreconditionError("all masses must be positive")
    if not tol > 0:
        raise PreconditionError("tol must be positive")
    check_distinct(Y)
    n = len(Y)
    if warm_start is None:
        psi = cold_start(domain, Y)
        psi = psi - psi.mean()
    else:
        psi = np.array(getattr(warm_start, "psi", warm_start), dtype=float)
        if len(psi) != n:
            raise PreconditionError("warm start has the wrong length")
    diag = build_laguerre(domain, (Y, m), psi, keep_cells=keep_cells)
    if np.any(diag.empty):
        log.debug("warm start has %d empty cells, falling back to cold start", int(diag.empty.sum()))
        psi = cold_start(domain, Y)
        psi = psi - psi.mean()
        diag = build_laguerre(domain, (Y, m), psi, keep_cells=keep_cells)
    F = diag.volumes - m
    res = float(np.abs(F).max())
    it = 0
    while res > tol:
        if it >= max_iter:
            raise OTError(f"Newton did not converge in {max_iter} steps (residual {res:.3e})", res, it)
        d = _newton_direction(diag, F)
        floor = 0.5 * min(diag.volumes.min(), m.min())
        norm0 = float(np.linalg.norm(F))
        tau = 1.0
        for _ in range(max_halvings):
            trial = psi + tau * d
            tdiag = build_laguerre(domain, (Y, m), trial, keep_cells=keep_cells)
            tF = tdiag.volumes - m
            if tdiag.volumes.min() >= floor and np.linalg.norm(tF) < norm0:
                break
            tau *= 0.5
        else:
            raise OTError(f"line search failed at step {it} (residual {res:.3e})", res, it)
        psi, diag, F = trial, tdiag, tF
        res = float(np.abs(F).max())
        it += 1
        log.debug("newton %d tau=%g residual=%.3e", it, tau, res)
    return OTSolution(DualPotentials(psi), diag, m.copy(), res, it)


def transport_forward(diagram: LaguerreDiagram, x, tol: float = 1e-10) -> np.ndarray | int:
    """Index of the cell containing ``x``; ties go to the lowest index."""
    X = np.atleast_2d(np.asarray(x, float))
    if not np.all(diagram.domain.contains(X, tol)):
        raise DomainError("point outside the domain")
    idx = K.power_argmin(np.ascontiguousarray(X), np.ascontiguousarray(diagram.positions),
                         np.ascontiguousarray(diagram.psi))
    return int(idx[0]) if np.ndim(x) == 1 else idx


def conjugate_shift(domain: ConvexDomain, positions, phi) -> float:
    """``min`` over the domain of ``max_i (x . y_i - phi_i)`` via a linear program."""
    Y = np.asarray(positions, float)
    n = len(Y)
    # variables (x1, x2, x3, t): minimise t s.t. x.y_i - t <= phi_i, x in domain
    A = np.vstack([np.hstack([Y, -np.ones((n, 1))]),
                   np.hstack([domain.shape.fnrm, np.zeros((domain.shape.n_faces, 1))])])
    b = np.concatenate([phi, domain.shape.foff])
    r = linprog(np.array([0, 0, 0, 1.0]), A_ub=A, b_ub=b, bounds=[(None, None)] * 4, method="highs")
    if r.status != 0:
        raise RuntimeError(f"linear program failed: {r.message}")
    return float(r.fun)


@dataclass(frozen=True, eq=False)
class PressureField:
    """``P(x) = max_i (x . y_i - phi_i)`` normalised so that ``P*(0) = 0``.

    ``P*`` is the conjugate over the domain, ``P*(0) = -min P``; the shift
    applied to every ``phi_i`` is stored in ``shift``.
    """

    positions: np.ndarray
    phi: np.ndarray
    shift: float

    def P(self, x) -> np.ndarray:
        X = np.atleast_2d(np.asarray(x, float))
        return (X @ self.positions.T - self.phi).max(axis=1)

    def p(self, x) -> np.ndarray:
        X = np.atleast_2d(np.asarray(x, float))
        return self.P(X) - 0.5 * (X[:, 0] ** 2 + X[:, 1] ** 2)


def pressure(solution_or_diagram) -> PressureField:
    diag = getattr(solution_or_diagram, "diagram", solution_or_diagram)
    Y = diag.positions
    phi = 0.5 * ((Y * Y).sum(1) - diag.psi)
    shift = conjugate_shift(diag.domain, Y, phi)
    return PressureField(Y, phi + shift, shift)


def potential_values(solution, x) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(P(x), p(x))`` with ``p = P - (x1^2 + x2^2)/2``."""
    diag = getattr(solution, "diagram", solution)
    X = np.atleast_2d(np.asarray(x, float))
    if not np.all(diag.domain.contains(X, 1e-10)):
        raise DomainError("point outside the domain")
    f = pressure(diag)
    P = f.P(X)
    p = P - 0.5 * (X[:, 0] ** 2 + X[:, 1] ** 2)
    if np.ndim(x) == 1:
        return float(P[0]), float(p[0])
    return P, p
