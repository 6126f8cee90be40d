"""Initial dual densities: descriptors, validation, regularisation, quantisation.

Randomness uses numpy's ``PCG64`` bit generator (``numpy.random.default_rng``)
seeded from the run configuration.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats
from scipy.spatial import cKDTree
from scipy.stats import qmc

from .geometry import ConvexDomain

log = logging.getLogger(__name__)


class HypothesisViolation(ValueError):
    pass


class TruncationError(ValueError):
    pass


class QuantizationError(ValueError):
    pass


def _norm(x):
    return np.linalg.norm(np.atleast_2d(x), axis=1)


# --------------------------------------------------------------------------- specs


class DensitySpec:
    """Probability density on R^3; subclasses provide ``pdf``."""

    kind = "abstract"
    compact = False
    radial_about_origin = False
    K: float | None = None
    c0: float | None = None
    M: float | None = None

    def pdf(self, x) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def mean(self) -> np.ndarray:
        raise NotImplementedError

    def support_radius(self) -> float:
        """Radius of a ball about the origin containing the support (inf if none)."""
        return np.inf

    def ball_mass(self, center, radius: float) -> float:
        raise NotImplementedError

    def sup_norm(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class UniformOnDomain(DensitySpec):
    domain: ConvexDomain
    kind = "uniform-on-domain"
    compact = True

    def pdf(self, x):
        return np.where(self.domain.contains(x, tol=0.0), 1.0 / self.domain.volume, 0.0)

    def sample(self, rng, n):
        return self.domain.sample(rng, n)

    def mean(self):
        return self.domain.centroid

    def support_radius(self):
        return self.domain.d_Omega

    def sup_norm(self):
        return 1.0 / self.domain.volume

    def ball_mass(self, center, radius):
        v = self.domain.shape.vertices
        if np.all(np.linalg.norm(v - np.asarray(center), axis=1) <= radius):
            return 1.0
        # deterministic quasi-Monte-Carlo fallback for partially covered domains
        lo, hi = self.domain.bounds
        u = qmc.Sobol(3, scramble=True, seed=12345).random_base2(16)
        x = lo + u * (hi - lo)
        inside = self.domain.contains(x, tol=0.0)
        hit = inside & (np.linalg.norm(x - np.asarray(center), axis=1) < radius)
        return float(hit.sum() / max(inside.sum(), 1))

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True, eq=False)
class Gaussian(DensitySpec):
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sigma: float = 1.0
    K: float | None = None
    c0: float | None = None
    M: float | None = None
    kind = "gaussian"

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, float).reshape(3))
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def radial_about_origin(self):
        return bool(np.all(self.center == 0))

    def pdf(self, x):
        r2 = (((np.atleast_2d(x) - self.center) / self.sigma) ** 2).sum(1)
        return np.exp(-0.5 * r2) / ((2 * np.pi) ** 1.5 * self.sigma ** 3)

    def sample(self, rng, n):
        return self.center + self.sigma * rng.standard_normal((n, 3))

    def mean(self):
        return self.center.copy()

    def sup_norm(self):
        return 1.0 / ((2 * np.pi) ** 1.5 * self.sigma ** 3)

    def ball_mass(self, center, radius):
        nc = float(((self.center - np.asarray(center)) ** 2).sum()) / self.sigma ** 2
        return float(stats.ncx2.cdf((radius / self.sigma) ** 2, 3, max(nc, 1e-300)))

    def to_dict(self):
        d = {"kind": self.kind, "center": self.center.tolist(), "sigma": self.sigma}
        for k in ("K", "c0", "M"):
            if getattr(self, k) is not None:
                d[k] = getattr(self, k)
        return d


@dataclass(frozen=True, eq=False)
class PowerTailBump(DensitySpec):
    """``rho(x) = A / (1 + (|x|/a)^2)^(K/2)``, radial about the origin.

    ``A`` is fixed by unit mass.  The declared tail constant ``c0`` must bound
    ``rho(x)|x|^K`` for ``|x| >= M``.  ``core_radius`` with the derived
    ``lam``/``Lam`` gives the bounds ``lam <= rho <= Lam`` on that ball.
    """

    c0: float = 1.0
    K: float = 6.0
    M: float = 2.0
    scale: float = 1.0
    core_radius: float = 1.0
    kind = "power-tail-bump"
    radial_about_origin = True

    def __post_init__(self):
        if not self.K > 3:
            raise HypothesisViolation("power-tail density needs K > 3 to be integrable")
        if not (self.scale > 0 and self.M > 0 and self.c0 > 0):
            raise ValueError("scale, M and c0 must be positive")

    @property
    def amplitude(self) -> float:
        a, k = self.scale, self.K
        # int_0^inf 4 pi r^2 (1 + r^2/a^2)^(-k/2) dr = 2 pi a^3 B(3/2, k/2 - 3/2)
        return 1.0 / (2 * np.pi * a ** 3 * special.beta(1.5, 0.5 * k - 1.5))

    def radial(self, r):
        return self.amplitude * (1.0 + (np.asarray(r) / self.scale) ** 2) ** (-0.5 * self.K)

    def pdf(self, x):
        return self.radial(_norm(x))

    @property
    def lam(self) -> float:
        return float(self.radial(self.core_radius))

    @property
    def Lam(self) -> float:
        return float(self.amplitude)

    def sample(self, rng, n):
        # radius by inverse CDF: u = r^2/(a^2 + r^2) is Beta(3/2, K/2 - 3/2)
        u = rng.beta(1.5, 0.5 * self.K - 1.5, size=n)
        r = self.scale * np.sqrt(u / (1 - u))
        d = rng.standard_normal((n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return r[:, None] * d

    def mean(self):
        return np.zeros(3)

    def sup_norm(self):
        return self.amplitude

    def radial_cdf(self, r):
        r = np.asarray(r, float)
        # 1 / (1 + (a/r)^2) stays finite at r = inf
        with np.errstate(divide="ignore"):
            u = 1.0 / (1.0 + (self.scale / r) ** 2)
        return special.betainc(1.5, 0.5 * self.K - 1.5, u)

    def ball_mass(self, center, radius):
        return _radial_ball_mass(self.radial, float(np.linalg.norm(center)), radius, self.radial_cdf)

    def to_dict(self):
        return {"kind": self.kind, "c0": self.c0, "K": self.K, "M": self.M,
                "scale": self.scale, "core_radius": self.core_radius}


@dataclass(frozen=True, eq=False)
class UniformBall(DensitySpec):
    """Uniform density on the exact ball ``B(0, radius)``."""

    radius: float = 1.0
    kind = "uniform-ball"
    compact = True
    radial_about_origin = True

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    @property
    def level(self) -> float:
        return 3.0 / (4.0 * np.pi * self.radius ** 3)

    def radial(self, r):
        return np.where(np.asarray(r) < self.radius, self.level, 0.0)

    def pdf(self, x):
        return self.radial(_norm(x))

    def sample(self, rng, n):
        d = rng.standard_normal((n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return (self.radius * rng.uniform(size=n) ** (1 / 3))[:, None] * d

    def mean(self):
        return np.zeros(3)

    def support_radius(self):
        return self.radius

    def sup_norm(self):
        return self.level

    def ball_mass(self, center, radius):
        cdf = lambda r: np.clip(np.asarray(r) / self.radius, 0, 1) ** 3
        return _radial_ball_mass(self.radial, float(np.linalg.norm(center)), radius, cdf)

    def to_dict(self):
        return {"kind": self.kind, "radius": self.radius}


def _radial_ball_mass(f, d: float, R: float, cdf, nodes: int = 64) -> float:
    """Mass of ``B(z, R)``, ``|z| = d``, for a radial density with profile ``f``.

    ``cdf(r)`` is the mass of ``B(0, r)``; the spherical shells cut by the
    sphere ``|x - z| = R`` are integrated by Gauss-Legendre.
    """
    xg, wg = np.polynomial.legendre.leggauss(nodes)

    def gl(a, b, g):
        if b <= a:
            return 0.0
        r = 0.5 * (b - a) * xg + 0.5 * (b + a)
        return float(0.5 * (b - a) * np.sum(wg * g(r)))

    full = float(cdf(max(R - d, 0.0)))
    if d == 0:
        return full
    lo, hi = abs(R - d), R + d

    def cap(r):
        cos0 = np.clip((r * r + d * d - R * R) / (2 * r * d), -1, 1)
        return 2 * np.pi * r * r * (1 - cos0) * f(r)

    # split the lens interval to keep the Gauss rule accurate on long ranges
    edges = np.unique(np.concatenate([[lo], np.linspace(lo, hi, 9), [hi]]))
    part = sum(gl(a, b, cap) for a, b in zip(edges[:-1], edges[1:]) if b > a)
    return full + part


# --------------------------------------------------------------------------- mollification


def _mollifier_rule(width: float, n_r: int = 8, n_t: int = 8, n_p: int = 16):
    """Product quadrature for the radial bump ``exp(-1/(1 - (r/width)^2))``.

    Weights are normalised to sum to one.
    """
    xr, wr = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * width * (xr + 1)
    wr = 0.5 * width * wr
    ct, wt = np.polynomial.legendre.leggauss(n_t)
    ph = 2 * np.pi * (np.arange(n_p) + 0.5) / n_p
    R, C, Ph = np.meshgrid(r, ct, ph, indexing="ij")
    W = (wr[:, None, None] * wt[None, :, None] * (2 * np.pi / n_p)) * np.ones_like(R)
    s = R / width
    bump = np.exp(-1.0 / (1.0 - s * s))
    W = W * R * R * bump
    S = np.sqrt(1 - C * C)
    pts = np.stack([R * S * np.cos(Ph), R * S * np.sin(Ph), R * C], axis=-1).reshape(-1, 3)
    w = W.ravel()
    return pts, w / w.sum()


@dataclass(frozen=True, eq=False)
class MollifiedDensity(DensitySpec):
    """``(base * bump_{1/n}) / c_n`` restricted to ``B(0, n)``."""

    base: DensitySpec
    n: float
    c_n: float
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    kind = "mollified"
    compact = True

    @property
    def K(self):
        return self.base.K

    @property
    def c0(self):
        return self.base.c0

    @property
    def M(self):
        return self.base.M

    @property
    def radial_about_origin(self):
        return self.base.radial_about_origin

    def convolved(self, x) -> np.ndarray:
        X = np.atleast_2d(np.asarray(x, float))
        out = np.zeros(len(X))
        for z, w in zip(self.nodes, self.weights):
            out += w * self.base.pdf(X - z)
        return out

    def pdf(self, x):
        X = np.atleast_2d(np.asarray(x, float))
        inside = _norm(X) < self.n
        out = np.zeros(len(X))
        if inside.any():
            out[inside] = self.convolved(X[inside]) / self.c_n
        return out

    def support_radius(self):
        return min(float(self.n), self.base.support_radius() + 1.0 / self.n)

    def sup_norm(self):
        return self.base.sup_norm() / self.c_n

    def sample(self, rng, n):
        """Exact sampling: base draw plus mollifier draw, rejected outside ``B(0, n)``."""
        out = []
        got = 0
        while got < n:
            m = int((n - got) / max(self.c_n, 1e-3) * 1.1) + 16
            x = self.base.sample(rng, m) + _sample_bump(rng, m, 1.0 / self.n)
            x = x[_norm(x) < self.n]
            out.append(x)
            got += len(x)
        return np.concatenate(out)[:n]

    def mean(self):
        if self.radial_about_origin:
            return np.zeros(3)
        if self.c_n == 1.0:
            return self.base.mean()
        x = self.sample(np.random.default_rng(0), 200_000)
        return x.mean(0)

    def to_dict(self):
        return {"kind": "mollified", "n": self.n, "base": self.base.to_dict()}


def _sample_bump(rng, m, width):
    """Draws from the normalised radial bump by rejection."""
    out = []
    got = 0
    while got < m:
        k = 3 * (m - got) + 16
        u = rng.uniform(-1, 1, size=(k, 3))
        s2 = (u * u).sum(1)
        keep = s2 < 1
        u, s2 = u[keep], s2[keep]
        acc = rng.uniform(size=len(u)) < np.exp(1.0 - 1.0 / (1.0 - s2))
        out.append(u[acc])
        got += int(acc.sum())
    return width * np.concatenate(out)[:m]


def mollify_truncate(spec: DensitySpec, n: float, min_mass: float = 1e-6) -> MollifiedDensity:
    """Convolve with a bump of width ``1/n``, restrict to ``B(0, n)`` and renormalise."""
    if not n >= 1:
        raise ValueError("cutoff index n must be >= 1")
    nodes, w = _mollifier_rule(1.0 / n)
    if spec.support_radius() + 1.0 / n <= n:
        c_n = 1.0
    else:
        if spec.radial_about_origin:
            # ball mass depends on |z| only
            rad, inv = np.unique(np.round(np.linalg.norm(nodes, axis=1), 15), return_inverse=True)
            masses = np.array([spec.ball_mass(np.array([r, 0.0, 0.0]), n) for r in rad])
            c_n = float(np.sum(w * masses[inv.ravel()]))
        else:
            c_n = float(np.sum([wk * spec.ball_mass(-z, n) for z, wk in zip(nodes, w)]))
        c_n = min(c_n, 1.0)
    if c_n < min_mass:
        raise TruncationError(f"ball B(0,{n}) carries mass {c_n:.3e} < {min_mass}")
    return MollifiedDensity(spec, float(n), c_n, nodes, w)


# --------------------------------------------------------------------------- validation


@dataclass
class HypothesisReport:
    sup_estimate: float
    lower_radius: float
    lower_bound: float
    K: float | None
    c0: float | None
    M: float | None
    tail_max: float | None
    tail_ok: bool
    compact_support: bool
    notes: list = field(default_factory=list)

    def to_dict(self):
        return dict(self.__dict__)


def _fib_dirs(k: int) -> np.ndarray:
    i = np.arange(k) + 0.5
    z = 1 - 2 * i / k
    t = np.pi * (1 + 5 ** 0.5) * i
    s = np.sqrt(1 - z * z)
    return np.stack([s * np.cos(t), s * np.sin(t), z], 1)


def validate_hypotheses(spec: DensitySpec, r: float = 1.0, n_radial: int = 10_000,
                        n_dirs: int = 32) -> HypothesisReport:
    """Sample ``spec`` on a radial grid and check the tail and positivity hypotheses."""
    K, c0, M = spec.K, spec.c0, spec.M
    if K is not None and not K > 4:
        raise HypothesisViolation(f"decay exponent K = {K} must exceed 4")
    dirs = _fib_dirs(n_dirs)
    center = spec.mean() if not spec.radial_about_origin else np.zeros(3)
    R = spec.support_radius()
    rmax = R if np.isfinite(R) else max(10.0, 10 * (M or 1.0))
    rr = np.linspace(0, rmax, 400)
    X = (rr[:, None, None] * dirs[None]).reshape(-1, 3) + center
    sup = float(max(spec.pdf(X).max(), spec.pdf(center[None]).max()))
    rb = np.linspace(0, r, 200)
    Xb = (rb[:, None, None] * dirs[None]).reshape(-1, 3)
    low = float(spec.pdf(Xb).min())
    notes = []
    if not low > 0:
        raise HypothesisViolation(f"density vanishes inside B(0,{r})")
    tail_max = None
    tail_ok = True
    if K is not None and M is not None:
        top = R if np.isfinite(R) else 1e3 * max(M, 1.0)
        if top > M:
            rt = np.geomspace(M, top, n_radial)
            d = dirs if not spec.radial_about_origin else dirs[:1]
            Xt = (rt[:, None, None] * d[None]).reshape(-1, 3)
            tail_max = float((spec.pdf(Xt) * _norm(Xt) ** K).max())
        else:
            tail_max = 0.0
        if c0 is not None:
            tail_ok = tail_max <= c0 * (1 + 1e-9)
            if not tail_ok:
                raise HypothesisViolation(f"tail bound violated: max rho|x|^K = {tail_max:.6g} > c0 = {c0}")
    if spec.compact or np.isfinite(R):
        notes.append("compactly supported initial data: no decay guarantee applies")
    return HypothesisReport(sup, r, low, K, c0, M, tail_max, tail_ok, bool(np.isfinite(R)), notes)


# --------------------------------------------------------------------------- clouds


@dataclass(frozen=True, eq=False)
class WeightedPointCloud:
    positions: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        y = np.array(self.positions, dtype=float).reshape(-1, 3)
        m = np.array(self.masses, dtype=float).ravel()
        if len(y) != len(m) or len(y) == 0:
            raise ValueError("positions and masses must be nonempty and aligned")
        if np.any(m <= 0):
            raise ValueError("masses must be positive")
        if abs(m.sum() - 1) > 1e-12:
            raise ValueError(f"masses sum to {m.sum():.17g}, not 1")
        if len(y) > 1:
            diam = float(np.linalg.norm(y.max(0) - y.min(0)))
            dmin = cKDTree(y).query(y, k=2)[0][:, 1].min()
            if dmin <= 1e-9 * diam:
                raise ValueError("positions are not pairwise distinct")
        y.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "positions", y)
        object.__setattr__(self, "masses", m)

    def __len__(self):
        return len(self.masses)

    @classmethod
    def equal_mass(cls, positions) -> "WeightedPointCloud":
        n = len(positions)
        return cls(positions, np.full(n, 1.0 / n))


def write_cloud_csv(cloud: WeightedPointCloud, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "y1", "y2", "y3", "mass"])
        for i, (y, m) in enumerate(zip(cloud.positions, cloud.masses)):
            w.writerow([i, repr(float(y[0])), repr(float(y[1])), repr(float(y[2])), repr(float(m))])


def read_cloud_csv(path) -> WeightedPointCloud:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"id", "y1", "y2", "y3", "mass"}:
        raise ValueError(f"{path}: expected columns id,y1,y2,y3,mass")
    rows.sort(key=lambda r: int(r["id"]))
    y = np.array([[float(r["y1"]), float(r["y2"]), float(r["y3"])] for r in rows])
    m = np.array([float(r["mass"]) for r in rows])
    return WeightedPointCloud(y, m)


def _equal_masses(n: int) -> np.ndarray:
    m = np.full(n, 1.0 / n)
    m[-1] = 1.0 - m[:-1].sum()
    return m


def quantize(spec: DensitySpec, N: int, seed: int, tol: float = 1e-6, max_iter: int = 200,
             ot_tol: float = 1e-8, samples_per_point: int = 64) -> WeightedPointCloud:
    """Equal-mass quantisation by seeded sampling plus centroidal relaxation.

    Uniform densities on a polytope relax towards the centroidal configuration
    of equal-volume power cells (see :func:`ot_lloyd`; ``max_iter`` bounds the
    optimiser iterations).  Other densities relax by Lloyd iterations on a
    fixed seeded sample.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if not (spec.compact or np.isfinite(spec.support_radius())):
        raise QuantizationError("density is not compactly supported; apply mollify_truncate first")
    rng = np.random.default_rng(seed)
    if N == 1:
        return WeightedPointCloud(spec.mean()[None, :], np.ones(1))
    m = _equal_masses(N)
    if isinstance(spec, UniformOnDomain):
        # the true diameter: support_radius is measured from the origin
        diam = spec.domain.shape.diameter
        y = ot_lloyd(spec.domain, spec.sample(rng, N), tol=tol * diam, max_iter=max_iter, ot_tol=ot_tol)[0]
    else:
        diam = 2 * spec.support_radius()
        y = _sample_lloyd(spec.sample(rng, max(samples_per_point * N, 20_000)), rng, N, tol * diam, max_iter)
    try:
        return WeightedPointCloud(y, m)
    except ValueError as e:
        raise QuantizationError(f"quantisation failed: {e}") from e


class _Converged(Exception):
    def __init__(self, y):
        self.y = y


def ot_lloyd(domain: ConvexDomain, y0, tol: float, max_iter: int = 200, ot_tol: float = 1e-8):
    """Relax equal-mass particles towards the barycentres of their power cells.

    The fixed points are the critical points of the transport quantisation
    energy ``E(Y) = sum_i int_{Lag_i} |x - y_i|^2 dx / |domain|``, whose
    gradient is ``2 m_i (y_i - b_i)``.  Plain barycentre iterations converge
    only linearly with a rate close to one, so the energy is minimised by
    L-BFGS; iterations stop once the mean movement ``|b_i - y_i|`` is below
    ``tol``.  Returns the positions, the number of energy evaluations and the
    last mean movement.
    """
    from scipy.optimize import minimize

    from . import _kernels as K
    from .ot import solve_weights

    y0 = np.array(y0, float)
    m = _equal_masses(len(y0))
    state = {"psi": None, "evals": 0, "move": np.inf}

    def energy(z):
        y = z.reshape(-1, 3)
        sol = solve_weights(domain, (y, m), tol=ot_tol, warm_start=state["psi"])
        state["psi"] = sol.potentials
        b = sol.diagram.barycenters
        state["evals"] += 1
        state["move"] = float(np.linalg.norm(b - y, axis=1).mean())
        if state["move"] < tol:
            raise _Converged(y.copy())
        e = sum(K.second_moment(c.pts, c.fptr, y[i]) for i, c in enumerate(sol.diagram.cells))
        return e / domain.volume, (2.0 * m[:, None] * (y - b)).ravel()

    y = y0
    try:
        res = minimize(energy, y0.ravel(), jac=True, method="L-BFGS-B",
                       options=dict(maxiter=max_iter, maxfun=2 * max_iter, maxcor=20,
                                    gtol=0.0, ftol=0.0))
        y = res.x.reshape(-1, 3)
    except _Converged as c:
        y = c.y
    log.info("centroidal relaxation: %d evaluations, mean move %.3e", state["evals"], state["move"])
    return y, state["evals"], state["move"]


def _sample_lloyd(x, rng, N, tol, max_iter):
    """Plain Lloyd (k-means) iterations on a fixed sample."""
    y = x[rng.choice(len(x), N, replace=False)].copy()
    for _ in range(max_iter):
        lab = cKDTree(y).query(x)[1]
        cnt = np.bincount(lab, minlength=N)
        new = np.zeros_like(y)
        for d in range(3):
            new[:, d] = np.bincount(lab, weights=x[:, d], minlength=N)
        keep = cnt > 0
        new[keep] /= cnt[keep, None]
        new[~keep] = y[~keep]
        move = float(np.linalg.norm(new - y, axis=1).mean())
        y = new
        if move < tol:
            break
    return y


def density_from_dict(d: dict, domain: ConvexDomain | None = None) -> DensitySpec:
    kind = d.get("kind")
    if kind == "uniform-on-domain":
        if domain is None:
            raise ValueError("uniform-on-domain density needs a domain")
        spec = UniformOnDomain(domain)
    elif kind == "gaussian":
        spec = Gaussian(d.get("center", [0, 0, 0]), float(d.get("sigma", 1.0)),
                        d.get("K"), d.get("c0"), d.get("M"))
    elif kind == "power-tail-bump":
        spec = PowerTailBump(float(d.get("c0", 1.0)), float(d.get("K", 6.0)), float(d.get("M", 2.0)),
                             float(d.get("scale", 1.0)), float(d.get("core_radius", 1.0)))
    elif kind == "uniform-ball":
        spec = UniformBall(float(d.get("radius", 1.0)))
    elif kind == "mollified":
        return mollify_truncate(density_from_dict(d["base"], domain), float(d["n"]))
    else:
        raise ValueError(f"unknown density kind {kind!r}")
    if d.get("mollify") is not None:
        return mollify_truncate(spec, float(d["mollify"]))
    return spec
