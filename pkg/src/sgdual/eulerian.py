"""Eulerian reconstruction from the dual trajectory and weak-form checks.

On each power cell ``Lag_i`` the pressure gradient is the constant ``y_i``
and the velocity is affine,

    u(x) = bdot_i + H_i J (b_i - x),

with ``b_i`` the cell barycentre, ``bdot_i`` its time derivative along the
particle and ``H_i`` a least-squares estimate of the Hessian of the conjugate
potential at ``y_i`` (see :class:`CellField` for the anchor).
All domain integrals use the normalised measure ``dx / |domain|``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from . import _kernels as K
from .flow import J
from .ot import LaguerreDiagram, pressure, transport_forward


class TrajectoryError(ValueError):
    pass


class SupportError(ValueError):
    pass


# --------------------------------------------------------------------------- time derivative


def dt_grad_pstar(times, barycenters, k: int) -> np.ndarray:
    """Barycentre velocity at index ``k``.

    Derivative of the quadratic through three neighbouring samples (central
    in the interior, one-sided at the ends; valid for uneven spacing), or a
    first-order difference when only two samples exist.
    """
    t = np.asarray(times, float)
    B = [np.asarray(b, float) for b in barycenters]
    n = len(B)
    if n < 2:
        raise TrajectoryError("need at least two states")
    if len({b.shape for b in B}) != 1:
        raise TrajectoryError("particle count changes along the trajectory")
    if not 0 <= k < n:
        raise IndexError(k)
    if n == 2:
        return (B[1] - B[0]) / (t[1] - t[0])
    j = min(max(k - 1, 0), n - 3)
    t0, t1, t2 = t[j], t[j + 1], t[j + 2]
    tau = t[k]
    w0 = (2 * tau - t1 - t2) / ((t0 - t1) * (t0 - t2))
    w1 = (2 * tau - t0 - t2) / ((t1 - t0) * (t1 - t2))
    w2 = (2 * tau - t0 - t1) / ((t2 - t0) * (t2 - t1))
    return w0 * B[j] + w1 * B[j + 1] + w2 * B[j + 2]


# --------------------------------------------------------------------------- Hessian fit


@dataclass(frozen=True)
class HessianFit:
    H: np.ndarray
    low_confidence: bool
    neighbours: int


def fit_affine(dy: np.ndarray, db: np.ndarray, w: np.ndarray) -> np.ndarray | None:
    """Weighted least squares ``db_k ~ H dy_k``; ``None`` if rank-deficient."""
    if len(dy) < 3:
        return None
    G = (dy * w[:, None]).T @ dy
    if np.linalg.matrix_rank(G, tol=1e-12 * max(np.abs(G).max(), 1e-300)) < 3:
        return None
    Ht = np.linalg.solve(G, (dy * w[:, None]).T @ db)
    return Ht.T


def psd_clamp(H: np.ndarray) -> np.ndarray:
    S = 0.5 * (H + H.T)
    lam, V = np.linalg.eigh(S)
    S = (V * np.maximum(lam, 0.0)) @ V.T
    return 0.5 * (S + S.T)


def fit_hessian(diagram: LaguerreDiagram, i: int) -> HessianFit:
    """Facet-area weighted fit of ``b_j - b_i ~ H (y_j - y_i)`` over neighbours."""
    nb, a = diagram.neighbours(i)
    keep = ~diagram.empty[nb]
    nb, a = nb[keep], a[keep]
    Y, B = diagram.positions, diagram.barycenters
    H = fit_affine(Y[nb] - Y[i], B[nb] - B[i], a) if len(nb) >= 3 else None
    if H is None:
        cell = diagram.cells[i] if diagram.cells else None
        vol = diagram.volumes[i] * diagram.domain.volume
        d = cell.diameter if cell is not None and not cell.is_empty else vol ** (1 / 3)
        return HessianFit(np.eye(3) * (vol ** (1 / 3) / d if d > 0 else 1.0), True, len(nb))
    return HessianFit(psd_clamp(H), False, len(nb))


def fit_hessians(diagram: LaguerreDiagram) -> tuple[np.ndarray, np.ndarray]:
    fits = [fit_hessian(diagram, i) if not diagram.empty[i] else HessianFit(np.eye(3), True, 0)
            for i in range(diagram.n)]
    return np.array([f.H for f in fits]), np.array([f.low_confidence for f in fits])


# --------------------------------------------------------------------------- quadrature


@lru_cache(maxsize=None)
def tet_rule(degree: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Conical-product Gauss-Jacobi rule on the unit tetrahedron.

    Returns barycentric-style local coordinates ``(P, 3)`` in the reference
    simplex ``{u, v, w >= 0, u + v + w <= 1}`` and weights summing to 1/6.
    Exact for polynomials of total degree ``<= degree``.
    """
    n = max(1, (degree + 2) // 2)
    ta, wa = roots_jacobi(n, 2.0, 0.0)
    tb, wb = roots_jacobi(n, 1.0, 0.0)
    tc, wc = roots_jacobi(n, 0.0, 0.0)
    a, b, c = (ta + 1) / 2, (tb + 1) / 2, (tc + 1) / 2
    wa, wb, wc = wa / 8, wb / 4, wc / 2
    A, Bq, C = np.meshgrid(a, b, c, indexing="ij")
    W = wa[:, None, None] * wb[None, :, None] * wc[None, None, :]
    u = A
    v = Bq * (1 - A)
    w = C * (1 - A) * (1 - Bq)
    return np.stack([u, v, w], -1).reshape(-1, 3), W.ravel()


@lru_cache(maxsize=None)
def tri_rule(degree: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Fully symmetric rule on the unit triangle; weights sum to 1/2.

    Symmetry makes both copies of a shared face use the same points.  Degree
    ``<= 2`` gives the three-point rule, otherwise the seven-point degree-5
    rule of Radon.
    """
    if degree <= 2:
        bary = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
        w = np.full(3, 1 / 3)
    else:
        r = np.sqrt(15.0)
        a1, a2 = (6 - r) / 21, (6 + r) / 21
        w1, w2 = (155 - r) / 1200, (155 + r) / 1200
        bary = [[1 / 3, 1 / 3, 1 / 3]]
        w = [9 / 40]
        for a, wa in ((a1, w1), (a2, w2)):
            bary += [[1 - 2 * a, a, a], [a, 1 - 2 * a, a], [a, a, 1 - 2 * a]]
            w += [wa] * 3
        bary, w = np.array(bary), np.array(w)
    return bary[:, 1:], 0.5 * w


@dataclass(frozen=True, eq=False)
class FaceQuadrature:
    """Quadrature over every cell boundary, each shared face seen from both sides.

    ``normals`` point out of ``cell``; weights are normalised by the domain volume.
    """

    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray
    cell: np.ndarray


def face_quadrature(diagram: LaguerreDiagram, degree: int = 3) -> FaceQuadrature:
    ref, rw = tri_rule(degree)
    pts, wts, nrms, ids = [], [], [], []
    for i, c in enumerate(diagram.cells):
        if c.is_empty:
            continue
        T, nrm, _ = K.face_triangles(c.pts, c.fptr, c.fnrm)
        e1, e2 = T[:, 1] - T[:, 0], T[:, 2] - T[:, 0]
        area2 = np.linalg.norm(np.cross(e1, e2), axis=1)
        x = T[:, None, 0] + ref[None, :, 0, None] * e1[:, None] + ref[None, :, 1, None] * e2[:, None]
        q = x.shape[1]
        pts.append(x.reshape(-1, 3))
        wts.append((area2[:, None] * rw[None, :]).ravel())
        nrms.append(np.repeat(nrm, q, axis=0))
        ids.append(np.full(len(T) * q, i))
    vol = diagram.domain.volume
    return FaceQuadrature(np.concatenate(pts), np.concatenate(wts) / vol, np.concatenate(nrms),
                          np.concatenate(ids))


@dataclass(frozen=True, eq=False)
class CellQuadrature:
    """Quadrature points over every nonempty cell of a diagram."""

    points: np.ndarray
    weights: np.ndarray  # normalised by the domain volume
    cell: np.ndarray


def cell_quadrature(diagram: LaguerreDiagram, degree: int = 3) -> CellQuadrature:
    ref, rw = tet_rule(degree)
    pts, wts, ids = [], [], []
    for i, c in enumerate(diagram.cells):
        if c.is_empty:
            continue
        T = K.fan_tets(c.pts, c.fptr)
        e1, e2, e3 = T[:, 1] - T[:, 0], T[:, 2] - T[:, 0], T[:, 3] - T[:, 0]
        det = np.abs(np.einsum("ij,ij->i", e1, np.cross(e2, e3)))
        x = T[:, None, 0] + ref[None, :, 0, None] * e1[:, None] + ref[None, :, 1, None] * e2[:, None] \
            + ref[None, :, 2, None] * e3[:, None]
        pts.append(x.reshape(-1, 3))
        wts.append((det[:, None] * rw[None, :]).ravel())
        ids.append(np.full(x.shape[0] * x.shape[1], i))
    vol = diagram.domain.volume
    return CellQuadrature(np.concatenate(pts), np.concatenate(wts) / vol, np.concatenate(ids))


# --------------------------------------------------------------------------- test functions


def _bump_profile(s):
    """``exp(1 - 1/(1 - s))`` for ``s < 1``, else 0, with its derivative in ``s``."""
    s = np.asarray(s, float)
    inside = s < 1
    f = np.zeros_like(s)
    df = np.zeros_like(s)
    q = 1.0 - s[inside]
    f[inside] = np.exp(1.0 - 1.0 / q)
    df[inside] = -f[inside] / (q * q)
    return f, df


@dataclass(frozen=True)
class Bump:
    """Smooth bump ``chi(t) psi(x)`` with ``psi`` supported in ``B(center, radius)``.

    The temporal factor is supported in ``(t_lo, t_hi)``; ``t_lo = t_hi = None``
    means ``chi = 1``.
    """

    center: tuple
    radius: float
    t_lo: float | None = None
    t_hi: float | None = None

    def psi(self, x) -> np.ndarray:
        d = np.atleast_2d(x) - np.asarray(self.center)
        return _bump_profile((d * d).sum(1) / self.radius ** 2)[0]

    def grad_psi(self, x) -> np.ndarray:
        d = np.atleast_2d(x) - np.asarray(self.center)
        _, df = _bump_profile((d * d).sum(1) / self.radius ** 2)
        return (2.0 * df / self.radius ** 2)[:, None] * d

    def chi(self, t: float) -> float:
        if self.t_lo is None:
            return 1.0
        tau = (2 * t - self.t_lo - self.t_hi) / (self.t_hi - self.t_lo)
        return float(_bump_profile(np.array([tau * tau]))[0][0])

    def dchi(self, t: float) -> float:
        if self.t_lo is None:
            return 0.0
        L = self.t_hi - self.t_lo
        tau = (2 * t - self.t_lo - self.t_hi) / L
        _, df = _bump_profile(np.array([tau * tau]))
        return float(df[0] * 2 * tau * 2 / L)

    def supported_in(self, domain, tol: float = 0.0) -> bool:
        return domain.inradius_at(np.asarray(self.center)) >= self.radius - tol


@dataclass(frozen=True)
class TestFunctionBattery:
    members: tuple
    __test__ = False

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    @classmethod
    def seeded(cls, domain, count: int = 12, seed: int = 0, T: float = 1.0,
               radius_range=(0.3, 0.6)) -> "TestFunctionBattery":
        """Bumps with centres in the domain and radii relative to the inradius.

        Temporal windows alternate between windows that straddle ``t = 0`` (so
        the initial-time term is active) and windows inside ``(0, T)``.
        """
        rng = np.random.default_rng(seed)
        c0 = domain.centroid
        R0 = domain.inradius_at(c0)
        out = []
        while len(out) < count:
            c = c0 + rng.uniform(-0.5, 0.5, 3) * R0
            r = rng.uniform(*radius_range) * R0
            r = min(r, 0.98 * domain.inradius_at(c))
            if r <= 0.1 * R0:
                continue
            k = len(out)
            if k % 2 == 0:
                lo, hi = -T * rng.uniform(0.2, 0.6), T * rng.uniform(0.6, 0.95)
            else:
                lo, hi = T * rng.uniform(0.02, 0.2), T * rng.uniform(0.7, 0.98)
            out.append(Bump(tuple(float(v) for v in c), float(r), float(lo), float(hi)))
        return cls(tuple(out))


# --------------------------------------------------------------------------- reconstruction


@dataclass(frozen=True, eq=False)
class CellField:
    """Per-cell affine velocity ``u(x) = bdot_i + H_i J (a_i - x) = c_i + A_i x``.

    ``bdot_i`` is the barycentre velocity along the moving particle.  The
    derivative of the inverse map at the fixed dual point ``y_i`` is
    ``bdot_i - H_i U_i`` with ``U_i = J (y_i - b_i)``, which turns
    ``w_i + H_i J (y_i - x)`` into ``bdot_i + H_i J (b_i - x)``: the anchor
    ``a_i`` is the barycentre and the cell mean of ``u`` is ``bdot_i``.
    """

    targets: np.ndarray
    bdot: np.ndarray
    H: np.ndarray
    low_confidence: np.ndarray
    empty: np.ndarray
    anchors: np.ndarray

    @property
    def A(self) -> np.ndarray:
        return -self.H @ J.matrix

    @property
    def c(self) -> np.ndarray:
        return self.bdot + np.einsum("nij,nj->ni", self.H @ J.matrix, self.anchors)

    def u(self, x, idx) -> np.ndarray:
        X = np.atleast_2d(x)
        return self.c[idx] + np.einsum("nij,nj->ni", self.A[idx], X)


@dataclass(frozen=True, eq=False)
class EulerianSnapshot:
    t: float
    diagram: LaguerreDiagram
    field: CellField
    _quad: dict = field(default_factory=dict, repr=False)

    def cell_of(self, x) -> np.ndarray:
        return np.atleast_1d(transport_forward(self.diagram, np.atleast_2d(x)))

    def velocity(self, x) -> np.ndarray:
        return self.field.u(x, self.cell_of(x))

    def grad_P(self, x) -> np.ndarray:
        return self.diagram.positions[self.cell_of(x)]

    def geostrophic_wind(self, x) -> np.ndarray:
        X = np.atleast_2d(x)
        return J.apply(self.grad_P(X) - X)

    def density(self, x) -> np.ndarray:
        return self.grad_P(x)[:, 2]

    def pressure(self, x) -> np.ndarray:
        return pressure(self.diagram).p(x)

    def quadrature(self, degree: int = 3) -> CellQuadrature:
        if degree not in self._quad:
            self._quad[degree] = cell_quadrature(self.diagram, degree)
        return self._quad[degree]

    def face_quadrature(self, degree: int = 3) -> FaceQuadrature:
        key = ("faces", degree)
        if key not in self._quad:
            self._quad[key] = face_quadrature(self.diagram, degree)
        return self._quad[key]

    def flux(self, weight_fn, degree: int = 3) -> tuple[np.ndarray, np.ndarray]:
        """Per-quadrature-point ``w * f(x) * u_cell(x) . n`` on cell boundaries.

        By the divergence theorem and ``trace(H J) = 0`` for symmetric ``H``,
        ``int_{Lag_i} grad f . u = int_{boundary} f u . n``.
        """
        q = self.face_quadrature(degree)
        un = np.einsum("ij,ij->i", self.field.u(q.points, q.cell), q.normals)
        return q.weights * weight_fn(q.points) * un, q.cell

    def cell_mean_velocity(self) -> np.ndarray:
        """Exact cell averages ``c_i + A_i b_i``."""
        f = self.field
        return f.c + np.einsum("nij,nj->ni", f.A, np.nan_to_num(self.diagram.barycenters))


def recover_velocity(t: float, diagram: LaguerreDiagram, bdot: np.ndarray,
                     H: np.ndarray | None = None, low_confidence=None,
                     anchor: str = "barycenter", target_velocity=None) -> EulerianSnapshot:
    """Per-cell affine velocity from barycentre velocities and Hessian estimates.

    By default the targets are assumed to move with the dual velocity
    ``J (y_i - b_i)``.  For any other prescribed target motion pass
    ``target_velocity``; the derivative at the fixed dual point is then
    ``bdot_i - H_i ydot_i`` and the field is anchored at ``y_i``.
    ``anchor="target"`` uses ``bdot_i + H_i J (y_i - x)``, i.e. treats the
    along-particle derivative as if it were taken at a fixed dual point.
    """
    if anchor not in ("barycenter", "target"):
        raise ValueError(f"unknown anchor {anchor!r}")
    if H is None:
        H, low_confidence = fit_hessians(diagram)
    if low_confidence is None:
        low_confidence = np.zeros(diagram.n, bool)
    H = np.asarray(H, float)
    bdot = np.asarray(bdot, float)
    if target_velocity is not None:
        bdot = bdot - np.einsum("nij,nj->ni", H, np.asarray(target_velocity, float))
        anchors = diagram.positions
    else:
        anchors = np.nan_to_num(diagram.barycenters) if anchor == "barycenter" else diagram.positions
    f = CellField(diagram.positions, bdot, H, np.asarray(low_confidence, bool), diagram.empty.copy(), anchors)
    return EulerianSnapshot(float(t), diagram, f)


def recover_trajectory(states, k: int, anchor: str = "barycenter") -> EulerianSnapshot:
    """Snapshot at index ``k`` of a sequence of states (uniform or not in time)."""
    times = [s.t for s in states]
    bary = [s.barycenters for s in states]
    return recover_velocity(times[k], states[k].diagram, dt_grad_pstar(times, bary, k), anchor=anchor)


# --------------------------------------------------------------------------- residuals


def residual_sg2(snap: EulerianSnapshot, test: Bump, degree: int = 3, method: str = "faces") -> float:
    """``int grad psi . u dx / |domain|`` for a spatial bump inside the domain.

    ``method="faces"`` integrates ``psi u . n`` over cell boundaries (exact
    rewriting for the piecewise-affine velocity); ``"volume"`` integrates
    ``grad psi . u`` over the fan tetrahedra of each cell.
    """
    if not test.supported_in(snap.diagram.domain):
        raise SupportError("test function support leaves the domain")
    if method == "faces":
        vals, _ = snap.flux(test.psi, degree)
        return float(vals.sum())
    q = snap.quadrature(degree)
    u = snap.field.u(q.points, q.cell)
    return float(np.sum(q.weights * np.einsum("ij,ij->i", test.grad_psi(q.points), u)))


def _sg1_parts(snap: EulerianSnapshot, test: Bump, degree: int, method: str):
    """Spatial integrals at one time.

    Returns ``(A, G)`` with ``A = int grad P psi`` and
    ``G = int grad P (u . grad psi) + J (grad P - x) psi``, so that the
    space-time integrand is ``chi'(t) A(t) + chi(t) G(t)``.
    """
    q = snap.quadrature(degree)
    X = q.points
    Y = snap.diagram.positions[q.cell]
    psi = test.psi(X)
    A = (q.weights[:, None] * Y * psi[:, None]).sum(0)
    G = (q.weights[:, None] * psi[:, None] * J.apply(Y - X)).sum(0)
    if method == "faces":
        flux, cell = snap.flux(test.psi, degree)
        G = G + (snap.diagram.positions[cell] * flux[:, None]).sum(0)
    else:
        ug = np.einsum("ij,ij->i", snap.field.u(X, q.cell), test.grad_psi(X))
        G = G + (q.weights[:, None] * Y * ug[:, None]).sum(0)
    return A, G


def residual_sg1(snaps, test: Bump, degree: int = 3, method: str = "faces", gauss: int = 16) -> np.ndarray:
    """Momentum identity for ``phi(x, t) = chi(t) psi(x)``.

    The spatial integrals are interpolated linearly between stored times.  The
    ``chi'`` term is integrated by parts on each interval, so it telescopes
    exactly against the initial-time term ``int grad P_0 phi_0``; the
    remaining ``chi`` terms use Gauss-Legendre per interval.  Returns the
    vector residual.
    """
    dom = snaps[0].diagram.domain
    if not test.supported_in(dom):
        raise SupportError("test function support leaves the domain")
    if test.t_lo is not None and test.t_hi > snaps[-1].t + 1e-14:
        raise SupportError("temporal support extends past the last stored time")
    times = np.array([s.t for s in snaps])
    parts = [_sg1_parts(s, test, degree, method) for s in snaps]
    A = np.array([p[0] for p in parts])
    G = np.array([p[1] for p in parts])
    xg, wg = np.polynomial.legendre.leggauss(gauss)
    # boundary terms of the integration by parts; chi(t_0) A_0 cancels the initial term
    body = test.chi(times[-1]) * A[-1]
    for k in range(len(times) - 1):
        t0, t1 = times[k], times[k + 1]
        h = t1 - t0
        dA = (A[k + 1] - A[k]) / h
        for x, w in zip(xg, wg):
            s = 0.5 * (x + 1)
            g = (1 - s) * G[k] + s * G[k + 1]
            body += 0.5 * h * w * test.chi(t0 + s * h) * (g - dA)
    return body


def change_of_variables_check(diagram: LaguerreDiagram, masses, test: Bump, degree: int = 3,
                              quad: CellQuadrature | None = None):
    """Dual side ``sum m_i y_i psi(b_i)`` against ``sum_i y_i int_{Lag_i} psi``.

    Returns ``(dual_side, euler_side, gap)``.
    """
    Y = diagram.positions
    m = np.asarray(masses, float)
    ok = ~diagram.empty
    dual = (m[ok, None] * Y[ok] * test.psi(diagram.barycenters[ok])[:, None]).sum(0)
    q = quad if quad is not None else cell_quadrature(diagram, degree)
    euler = (q.weights[:, None] * Y[q.cell] * test.psi(q.points)[:, None]).sum(0)
    return dual, euler, float(np.linalg.norm(dual - euler))


# --------------------------------------------------------------------------- monitors


def log_plus(x):
    return np.log(np.maximum(np.asarray(x, float), 1.0))


def llogl_monitor(masses, bdot, H, ks=(1, 2)) -> dict:
    """``sum m |bdot| log+^k |bdot|`` and ``sum m |H| log+^{2k} |H|`` (Frobenius norm)."""
    m = np.asarray(masses, float)
    nb = np.linalg.norm(bdot, axis=1)
    nH = np.linalg.norm(H, axis=(1, 2))
    out = {}
    for k in ks:
        out[f"bdot_k{k}"] = float(np.sum(m * nb * log_plus(nb) ** k))
        out[f"hess_k{k}"] = float(np.sum(m * nH * log_plus(nH) ** (2 * k)))
    return out
