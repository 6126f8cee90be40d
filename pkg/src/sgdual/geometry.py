"""Convex polytopes stored as oriented face polygons, and the physical domain."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels as K

#: absolute on-plane tolerance, scaled by the domain size
PLANE_EPS = 1e-12


class GeometryError(ValueError):
    """Raised for unbounded, empty or otherwise unusable polytopes."""


@dataclass(frozen=True)
class HalfSpace:
    """The set ``{x : normal . x <= offset}`` with a unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        nrm = np.asarray(self.normal, dtype=float).reshape(3)
        length = np.linalg.norm(nrm)
        if not length > 0:
            raise GeometryError("half-space normal must be nonzero")
        object.__setattr__(self, "normal", nrm / length)
        object.__setattr__(self, "offset", float(self.offset) / length)

    def signed_distance(self, x):
        return np.asarray(x) @ self.normal - self.offset

    def complement(self) -> "HalfSpace":
        return HalfSpace(-self.normal, -self.offset)


@dataclass(frozen=True, eq=False)
class ConvexPolytope:
    """Bounded convex polytope; see :mod:`sgdual._kernels` for the layout."""

    pts: np.ndarray
    fptr: np.ndarray
    flab: np.ndarray
    fnrm: np.ndarray
    foff: np.ndarray
    eps: float = PLANE_EPS

    @property
    def is_empty(self) -> bool:
        return len(self.flab) == 0

    @property
    def n_faces(self) -> int:
        return len(self.flab)

    def face(self, k: int) -> np.ndarray:
        return self.pts[self.fptr[k]:self.fptr[k + 1]]

    @property
    def halfspaces(self) -> list[HalfSpace]:
        """Active constraints, one per face."""
        return [HalfSpace(self.fnrm[k], self.foff[k]) for k in range(self.n_faces)]

    @cached_property
    def vertices(self) -> np.ndarray:
        if self.is_empty:
            return np.empty((0, 3))
        tol = max(10 * self.eps, 1e-12)
        keys = np.round(self.pts / tol).astype(np.int64)
        _, idx = np.unique(keys, axis=0, return_index=True)
        return self.pts[np.sort(idx)]

    @cached_property
    def _integrals(self):
        if self.is_empty:
            return 0.0, np.full(3, np.nan), np.zeros(0)
        return K.integrals(self.pts, self.fptr)

    @property
    def volume(self) -> float:
        return float(self._integrals[0])

    @property
    def barycenter(self) -> np.ndarray:
        if self.is_empty or self.volume <= 0:
            raise GeometryError("barycenter of an empty polytope")
        return np.array(self._integrals[1])

    @property
    def face_areas(self) -> np.ndarray:
        return np.array(self._integrals[2])

    @property
    def diameter(self) -> float:
        v = self.vertices
        if len(v) < 2:
            return 0.0
        d = v[:, None, :] - v[None, :, :]
        return float(np.sqrt((d * d).sum(-1).max()))

    def contains(self, x, tol: float = 1e-10) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all(x @ self.fnrm.T - self.foff <= tol, axis=1)

    def clip(self, h: HalfSpace, label: int | None = None) -> "ConvexPolytope":
        return clip(self, h, label)


def _from_arrays(res, eps) -> ConvexPolytope:
    return ConvexPolytope(res[0], res[1], res[2], res[3], res[4], eps)


def clip(poly: ConvexPolytope, h: HalfSpace, label: int | None = None) -> ConvexPolytope:
    """Return ``poly`` intersected with ``h``; an empty result has no faces."""
    if poly.is_empty:
        return poly
    if label is None:
        label = int(poly.flab.max()) + 1 if poly.n_faces else 0
    res = K.clip(poly.pts, poly.fptr, poly.flab, poly.fnrm, poly.foff,
                 np.ascontiguousarray(h.normal), float(h.offset), int(label), poly.eps)
    if res[5] == K.UNCHANGED:
        return poly
    return _from_arrays(res, poly.eps)


def volume(poly: ConvexPolytope) -> float:
    return poly.volume


def barycenter(poly: ConvexPolytope) -> np.ndarray:
    return poly.barycenter


def facet_area(poly: ConvexPolytope, h: HalfSpace, tol: float = 1e-10) -> float:
    """Area of the face supported by ``h``, 0 if ``h`` is not active."""
    if poly.is_empty:
        return 0.0
    match = (poly.fnrm @ h.normal > 1 - tol) & (np.abs(poly.foff - h.offset) <= tol)
    return float(poly.face_areas[match].sum())


def box(lo, hi, eps: float = PLANE_EPS, labels=None) -> ConvexPolytope:
    """Axis-aligned box with faces ordered -x, +x, -y, +y, -z, +z."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(hi <= lo):
        raise GeometryError("box needs hi > lo in every coordinate")
    c = np.array([[lo[0], lo[1], lo[2]], [hi[0], lo[1], lo[2]], [hi[0], hi[1], lo[2]],
                  [lo[0], hi[1], lo[2]], [lo[0], lo[1], hi[2]], [hi[0], lo[1], hi[2]],
                  [hi[0], hi[1], hi[2]], [lo[0], hi[1], hi[2]]])
    faces = [[0, 4, 7, 3], [1, 2, 6, 5], [0, 1, 5, 4], [3, 7, 6, 2], [0, 3, 2, 1], [4, 5, 6, 7]]
    nrm = np.array([[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]], float)
    off = np.array([-lo[0], hi[0], -lo[1], hi[1], -lo[2], hi[2]])
    pts = c[np.concatenate(faces)]
    fptr = np.arange(0, 28, 4, dtype=np.int64)
    flab = np.asarray(labels if labels is not None else range(6), dtype=np.int64)
    return ConvexPolytope(pts, fptr, flab, nrm, off, eps)


def polytope_from_halfspaces(halfspaces, eps: float | None = None) -> ConvexPolytope:
    """Intersect half-spaces; face ``k`` of the result carries label ``-1 - k``.

    Raises :class:`GeometryError` when the intersection is empty or unbounded.
    """
    hs = list(halfspaces)
    if not hs:
        raise GeometryError("no half-spaces given")
    big = 1e6 * max(1.0, max(abs(h.offset) for h in hs))
    sentinel = np.arange(-10**9, -10**9 + 6, dtype=np.int64)

    def cut(poly):
        for k, h in enumerate(hs):
            poly = clip(poly, h, -1 - k)
            if poly.is_empty:
                raise GeometryError("half-space intersection is empty")
        return poly

    rough = cut(box(-big * np.ones(3), big * np.ones(3), eps=1e-9 * big, labels=sentinel))
    if np.any(rough.flab <= -10**9 + 5):
        raise GeometryError("half-space intersection is unbounded")
    lo = rough.pts.min(axis=0)
    hi = rough.pts.max(axis=0)
    span = float(np.max(hi - lo))
    scale = max(1.0, float(np.abs(np.concatenate([lo, hi])).max()))
    if eps is None:
        eps = PLANE_EPS * scale
    pad = 0.25 * span + 1e-6 * scale
    poly = cut(box(lo - pad, hi + pad, eps=eps, labels=sentinel))
    if np.any(poly.flab <= -10**9 + 5) or poly.volume <= 0:
        raise GeometryError("degenerate half-space intersection")
    return poly


def _icosphere_face_normals(level: int) -> np.ndarray:
    t = (1 + math.sqrt(5)) / 2
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in v]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(level):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        nxt = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nxt += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = nxt
    V = np.array(verts)
    n = np.array([V[a] + V[b] + V[c] for a, b, c in faces])
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def _fibonacci_normals(count: int) -> np.ndarray:
    half = count // 2
    k = np.arange(half) + 0.5
    z = 1 - k / half
    phi = math.pi * (3 - math.sqrt(5)) * k
    r = np.sqrt(1 - z * z)
    d = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    # antipodal pairs keep the polytope centrally symmetric
    d = np.vstack([d, -d])
    if count % 2:
        d = np.vstack([d, [0.0, 0.0, 1.0]])
    return d


def ball_normals(facets: int) -> np.ndarray:
    lvl = math.log(facets / 20, 4) if facets >= 20 else -1
    if lvl >= 0 and abs(lvl - round(lvl)) < 1e-12:
        return _icosphere_face_normals(int(round(lvl)))
    return _fibonacci_normals(facets)


@dataclass(frozen=True, eq=False)
class ConvexDomain:
    """Bounded convex domain; integrals against it are normalised by ``volume``."""

    shape: ConvexPolytope
    d_Omega: float
    volume: float
    descriptor: dict = field(default_factory=dict)

    @property
    def eps(self) -> float:
        return self.shape.eps

    @property
    def centroid(self) -> np.ndarray:
        return self.shape.barycenter

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        v = self.shape.vertices
        return v.min(axis=0), v.max(axis=0)

    def contains(self, x, tol: float = 1e-10) -> np.ndarray:
        return self.shape.contains(x, tol)

    def inradius_at(self, c) -> float:
        """Radius of the largest ball about ``c`` inside the domain."""
        return float(np.min(self.shape.foff - self.shape.fnrm @ np.asarray(c)))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Uniform samples by rejection from the bounding box."""
        lo, hi = self.bounds
        out = []
        got = 0
        frac = min(1.0, self.volume / float(np.prod(hi - lo)))
        while got < n:
            m = int((n - got) / frac * 1.2) + 16
            x = rng.uniform(lo, hi, size=(m, 3))
            x = x[self.contains(x, tol=0.0)]
            out.append(x)
            got += len(x)
        return np.concatenate(out)[:n]


def make_domain(spec: dict) -> ConvexDomain:
    """Build a domain from a descriptor.

    Supported descriptors::

        {"kind": "box", "center": [..], "half_widths": [..]}
        {"kind": "ball", "center": [..], "radius": r, "facets": 320}
        {"kind": "halfspaces", "normals": [[..], ..], "offsets": [..]}
    """
    kind = spec.get("kind")
    if kind == "box":
        c = np.asarray(spec.get("center", [0, 0, 0]), float)
        hw = np.asarray(spec["half_widths"], float) * np.ones(3)
        if np.any(hw <= 0):
            raise GeometryError("box half-widths must be positive")
        nrm = np.array([[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]], float)
        lo, hi = c - hw, c + hw
        off = np.array([-lo[0], hi[0], -lo[1], hi[1], -lo[2], hi[2]])
        hs = [HalfSpace(nrm[k], off[k]) for k in range(6)]
    elif kind == "ball":
        c = np.asarray(spec.get("center", [0, 0, 0]), float)
        r = float(spec["radius"])
        if r <= 0:
            raise GeometryError("ball radius must be positive")
        nrm = ball_normals(int(spec.get("facets", 320)))
        hs = [HalfSpace(n, r + n @ c) for n in nrm]
    elif kind == "halfspaces":
        hs = [HalfSpace(n, o) for n, o in zip(spec["normals"], spec["offsets"])]
    else:
        raise GeometryError(f"unknown domain kind {kind!r}")
    shape = polytope_from_halfspaces(hs)
    vol = shape.volume
    if not vol > 0:
        raise GeometryError("domain has zero volume")
    d_omega = float(np.linalg.norm(shape.vertices, axis=1).max()) * (1 + 1e-12)
    return ConvexDomain(shape, d_omega, vol, dict(spec))
