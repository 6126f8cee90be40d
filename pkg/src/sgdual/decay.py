"""Decay bounds for densities transported by smooth velocity fields.

For ``dX/dt = v_t(X)`` the solution of the continuity equation is

    rho_t(x) = rho_0(X_t^{-1}(x)) exp(-int_0^t div v_s(X_s(X_t^{-1}(x))) ds),

which is evaluated by integrating characteristics backwards from ``x``.
Given ``|div v| <= N`` and ``|v| <= A|x| + D`` this module checks, by seeded
sampling, the bounds

(i)   ``rho_t <= e^{Nt} sup rho_0`` and, on ``B(0, r)``,
      ``rho_t >= e^{-Nt} inf {rho_0(y) : |y| <= r e^{At} + D (e^{At} - 1)/A}``;
(ii)  ``rho_t(x) <= d0 2^K e^{(N + AK)t} / |x|^K`` for
      ``|x| >= 2 M e^{At} + 2 D (e^{At} - 1)/A`` when ``rho_0 <= d0/|x|^K``
      for ``|x| >= M``;
(iii) ``lam e^{-tN} <= rho_t <= Lam e^{tN}`` inside ``B(0, R)`` when ``v`` is
      supported inside ``B(0, R)`` and ``lam <= rho_0 <= Lam`` there.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .density import DensitySpec, Gaussian, PowerTailBump, UniformBall, UniformOnDomain
from .eulerian import _bump_profile

Jm = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


class StiffnessError(RuntimeError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SyntheticField:
    """Velocity ``v(x, t)`` with its divergence and growth constants.

    ``v`` and ``div`` act row-wise on ``(n, 3)`` arrays.  ``support_radius``
    is the radius of a ball outside which ``v`` vanishes (``None`` if not
    compactly supported).
    """

    name: str
    v: Callable
    div: Callable
    N: float
    A: float
    D: float
    support_radius: float | None = None
    params: dict = field(default_factory=dict)

    def check_hypotheses(self, radius: float = 5.0, times=(0.0, 0.5, 1.0), n: int = 4096,
                         seed: int = 0, slack: float = 1e-9) -> dict:
        """Sampled check of ``|div v| <= N`` and ``|v| <= A|x| + D``."""
        rng = np.random.default_rng(seed)
        x = rng.uniform(-radius, radius, size=(n, 3))
        worst_div = 0.0
        worst_growth = -np.inf
        for t in times:
            worst_div = max(worst_div, float(np.abs(self.div(x, t)).max()))
            g = np.linalg.norm(self.v(x, t), axis=1) - (self.A * np.linalg.norm(x, axis=1) + self.D)
            worst_growth = max(worst_growth, float(g.max()))
        ok = worst_div <= self.N * (1 + slack) + slack and worst_growth <= slack
        return {"max_div": worst_div, "growth_excess": worst_growth, "ok": bool(ok)}


def zero_field() -> SyntheticField:
    return SyntheticField("zero", lambda x, t: np.zeros_like(x), lambda x, t: np.zeros(len(x)),
                          0.0, 0.0, 0.0, support_radius=0.0)


def dilation_field() -> SyntheticField:
    return SyntheticField("dilation", lambda x, t: np.array(x, float), lambda x, t: np.full(len(x), 3.0),
                          3.0, 1.0, 0.0)


def rotation_field() -> SyntheticField:
    return SyntheticField("rotation", lambda x, t: x @ Jm.T, lambda x, t: np.zeros(len(x)), 0.0, 1.0, 0.0)


def affine_field(B, c=(0.0, 0.0, 0.0)) -> SyntheticField:
    B = np.asarray(B, float).reshape(3, 3)
    c = np.asarray(c, float).reshape(3)
    tr = float(np.trace(B))
    return SyntheticField("affine", lambda x, t: x @ B.T + c, lambda x, t: np.full(len(x), tr),
                          abs(tr), float(np.linalg.norm(B, 2)), float(np.linalg.norm(c)),
                          params={"B": B.tolist(), "c": c.tolist()})


def vortex_field(radius: float = 1.0, strength: float = 1.0) -> SyntheticField:
    """``strength * beta(|x|^2 / R^2) J x``: divergence-free, supported in ``B(0, R)``."""
    R2 = radius * radius

    def v(x, t):
        f, _ = _bump_profile((x * x).sum(1) / R2)
        return strength * f[:, None] * (x @ Jm.T)

    return SyntheticField("vortex", v, lambda x, t: np.zeros(len(x)), 0.0, abs(strength), 0.0,
                          support_radius=radius, params={"radius": radius, "strength": strength})


def breather_field(radius: float = 1.0, strength: float = 0.5) -> SyntheticField:
    """``strength * beta(s) x`` with ``s = |x|^2/R^2``; supported in ``B(0, R)``.

    ``div = strength (3 beta + 2 s beta'(s))``; ``N`` is its maximum over a
    dense grid in ``s`` inflated by ``1e-6`` relative.
    """
    R2 = radius * radius

    def v(x, t):
        f, _ = _bump_profile((x * x).sum(1) / R2)
        return strength * f[:, None] * x

    def div(x, t):
        s = (x * x).sum(1) / R2
        f, df = _bump_profile(s)
        return strength * (3 * f + 2 * s * df)

    s = np.linspace(0, 1, 1_000_001)[:-1]
    f, df = _bump_profile(s)
    N = float(np.abs(strength * (3 * f + 2 * s * df)).max()) * (1 + 1e-6)
    return SyntheticField("breather", v, div, N, abs(strength), 0.0, support_radius=radius,
                          params={"radius": radius, "strength": strength})


FIELDS = {"zero": zero_field, "dilation": dilation_field, "rotation": rotation_field,
          "affine": affine_field, "vortex": vortex_field, "breather": breather_field}


def field_from_dict(d: dict) -> SyntheticField:
    d = dict(d)
    name = d.pop("name", d.pop("kind", None))
    if name not in FIELDS:
        raise ConfigurationError(f"unknown field {name!r}")
    return FIELDS[name](**d)


# --------------------------------------------------------------------------- flow


@dataclass(frozen=True, eq=False)
class FlowEvaluation:
    points: np.ndarray
    div_integral: np.ndarray


def _integrate(fld: SyntheticField, x, t0: float, t1: float, tol: float) -> FlowEvaluation:
    x = np.atleast_2d(np.asarray(x, float))
    n = len(x)
    if t1 == t0:
        return FlowEvaluation(x.copy(), np.zeros(n))

    def rhs(s, z):
        X = z[:3 * n].reshape(n, 3)
        return np.concatenate([fld.v(X, s).ravel(), fld.div(X, s)])

    z0 = np.concatenate([x.ravel(), np.zeros(n)])
    scale = max(1.0, float(np.abs(x).max()))
    sol = solve_ivp(rhs, (t0, t1), z0, method="DOP853", rtol=tol, atol=tol * scale)
    if sol.status != 0:
        raise StiffnessError(f"characteristic integration failed: {sol.message}")
    z = sol.y[:, -1]
    return FlowEvaluation(z[:3 * n].reshape(n, 3), z[3 * n:])


def flow(fld: SyntheticField, x, t: float, tol: float = 1e-12) -> FlowEvaluation:
    """Forward map ``X_t(x)`` and ``int_0^t div v_s(X_s(x)) ds``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    return _integrate(fld, x, 0.0, t, tol)


def inverse_flow(fld: SyntheticField, x, t: float, tol: float = 1e-12) -> FlowEvaluation:
    """``X_t^{-1}(x)`` and ``int_0^t div v_s(X_s(X_t^{-1}(x))) ds`` by backward integration."""
    ev = _integrate(fld, x, t, 0.0, tol)
    # integrating from t down to 0 accumulates minus the forward integral
    return FlowEvaluation(ev.points, -ev.div_integral)


def density_along_flow(fld: SyntheticField, rho0: DensitySpec, x, t: float, tol: float = 1e-12) -> np.ndarray:
    ev = inverse_flow(fld, x, t, tol)
    return rho0.pdf(ev.points) * np.exp(-ev.div_integral)


# --------------------------------------------------------------------------- bounds


def inf_on_ball(rho0: DensitySpec, R: float, samples: int = 20_000) -> float:
    """Infimum of ``rho0`` over the closed ball ``|y| <= R``."""
    if isinstance(rho0, UniformBall):
        return rho0.level if R < rho0.radius else 0.0
    if isinstance(rho0, PowerTailBump):
        return float(rho0.radial(R))
    if isinstance(rho0, Gaussian):
        c = rho0.center
        far = c / np.linalg.norm(c) if np.any(c) else np.array([1.0, 0.0, 0.0])
        return float(rho0.pdf((c + (np.linalg.norm(c) + R) * far)[None] if np.any(c) else (R * far)[None])[0])
    if isinstance(rho0, UniformOnDomain):
        return 1.0 / rho0.domain.volume if rho0.domain.inradius_at(np.zeros(3)) >= R else 0.0
    # generic: dense sample (an upper estimate of the infimum, so the check is stricter)
    rng = np.random.default_rng(0)
    d = rng.standard_normal((samples, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = R * np.sqrt(rng.uniform(size=samples))
    r[: samples // 4] = R
    return float(rho0.pdf(r[:, None] * d).min())


def growth_radius(fld: SyntheticField, r: float, t: float) -> float:
    """``r e^{At} + D (e^{At} - 1)/A`` (``r + D t`` when ``A = 0``)."""
    A, D = fld.A, fld.D
    g = np.expm1(A * t) / A if A > 0 else t
    return r * np.exp(A * t) + D * g


@dataclass
class BoundResult:
    time: float
    bound: str
    region: str
    samples: int
    max_violation: float
    verdict: str

    def to_row(self):
        return [repr(float(self.time)), self.bound, self.region, self.samples,
                repr(float(self.max_violation)), self.verdict]


def _directions(rng, n):
    d = rng.standard_normal((n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def verify_decay_bounds(fld: SyntheticField, rho0: DensitySpec, times, samples: int = 10_000, seed: int = 0,
                   bounds=("i", "ii", "iii"), r: float = 1.0, R: float | None = None,
                   outer_radius: float = 4.0, tol: float = 1e-12, rel: float = 1e-9,
                   strict: bool = False) -> list[BoundResult]:
    """Check the applicable bounds at each time on seeded samples.

    Violations are relative: ``(rho_t - bound)/bound`` for upper bounds and
    ``(bound - rho_t)/bound`` for lower bounds; PASS iff the maximum is
    ``<= rel``.  With ``strict`` an inapplicable bound raises
    :class:`ConfigurationError`; otherwise it is skipped.
    """
    out = []
    N, A, D = fld.N, fld.A, fld.D
    for t in times:
        rng = np.random.default_rng([seed, int(round(t * 1e6))])
        # (i) upper bound on a ball covering the bulk of the mass
        if "i" in bounds:
            x = _directions(rng, samples) * (outer_radius * rng.uniform(size=samples) ** (1 / 3))[:, None]
            x[0] = 0.0
            rho = density_along_flow(fld, rho0, x, t, tol)
            bnd = np.exp(N * t) * rho0.sup_norm()
            v = float(((rho - bnd) / bnd).max())
            out.append(BoundResult(t, "i-upper", f"|x|<={outer_radius:g}", samples, v, _verdict(v, rel)))
            x = _directions(rng, samples) * (r * rng.uniform(size=samples) ** (1 / 3))[:, None]
            rho = density_along_flow(fld, rho0, x, t, tol)
            low = np.exp(-N * t) * inf_on_ball(rho0, growth_radius(fld, r, t))
            if low > 0:
                v = float(((low - rho) / low).max())
            else:
                v = float(-rho.min()) if len(rho) else 0.0
            out.append(BoundResult(t, "i-lower", f"|x|<{r:g}", samples, v, _verdict(v, rel)))
        if "ii" in bounds:
            if rho0.K is None or rho0.M is None or rho0.c0 is None:
                if strict:
                    raise ConfigurationError("bound (ii) needs a density with declared K, M, c0")
            else:
                K, M, d0 = rho0.K, rho0.M, rho0.c0
                rmin = 2 * growth_radius(fld, M, t)
                rr = rmin * np.exp(rng.uniform(0, np.log(10.0), size=samples))
                rr[0] = rmin
                x = _directions(rng, samples) * rr[:, None]
                rho = density_along_flow(fld, rho0, x, t, tol)
                bnd = d0 * 2.0 ** K * np.exp((N + A * K) * t) / rr ** K
                v = float(((rho - bnd) / bnd).max())
                out.append(BoundResult(t, "ii", f"|x|>={rmin:.6g}", samples, v, _verdict(v, rel)))
        if "iii" in bounds:
            RR = R if R is not None else rho0.support_radius()
            ok = (fld.support_radius is not None and np.isfinite(RR) and fld.support_radius <= RR
                  and rho0.support_radius() <= RR)
            lam = inf_on_ball(rho0, RR * (1 - 1e-12)) if ok else 0.0
            if not ok or not lam > 0:
                if strict:
                    raise ConfigurationError("bound (iii) needs a compactly supported field and density "
                                             "with a positive lower bound on B(0,R)")
            else:
                Lam = rho0.sup_norm()
                x = _directions(rng, samples) * (RR * rng.uniform(size=samples) ** (1 / 3))[:, None]
                rho = density_along_flow(fld, rho0, x, t, tol)
                lo, hi = lam * np.exp(-N * t), Lam * np.exp(N * t)
                v = float(max(((lo - rho) / lo).max(), ((rho - hi) / hi).max()))
                out.append(BoundResult(t, "iii", f"|x|<{RR:g}", samples, v, _verdict(v, rel)))
    return out


def _verdict(v: float, rel: float) -> str:
    return "PASS" if v <= rel else "FAIL"


def write_bounds_csv(results, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "bound", "region", "samples", "max_violation", "verdict"])
        for r in results:
            w.writerow(r.to_row())
