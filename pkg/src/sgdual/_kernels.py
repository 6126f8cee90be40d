"""Compiled polytope kernels.

A convex polytope is stored as a set of oriented face polygons:

``pts``   (P, 3) face vertices, faces concatenated, each face counter-clockwise
          seen from outside;
``fptr``  (F+1,) offsets of each face into ``pts``;
``flab``  (F,) integer label of the supporting half-space;
``fnrm``  (F, 3) outward unit normal; ``foff`` (F,) offset, face plane is
          ``fnrm . x = foff`` and the polytope lies in ``fnrm . x <= foff``.

Faces do not share vertex storage.  Intersection points are always computed
from the inside endpoint towards the outside endpoint, so the two faces that
share a cut edge receive bitwise identical copies.
"""

import numpy as np
from numba import njit

UNCHANGED = 0
CLIPPED = 1
EMPTY = 2


@njit(cache=True, nogil=True)
def _empty_like(pts, fnrm):
    return (np.empty((0, 3)), np.zeros(1, dtype=np.int64),
            np.empty(0, dtype=np.int64), np.empty((0, 3)), np.empty(0))


@njit(cache=True, nogil=True)
def clip(pts, fptr, flab, fnrm, foff, n, c, lab, eps):
    """Intersect the polytope with ``{x : n.x <= c}``; returns arrays + status."""
    npts = pts.shape[0]
    nf = fptr.shape[0] - 1
    s = np.empty(npts)
    smax = -np.inf
    smin = np.inf
    for k in range(npts):
        v = pts[k, 0] * n[0] + pts[k, 1] * n[1] + pts[k, 2] * n[2] - c
        s[k] = v
        if v > smax:
            smax = v
        if v < smin:
            smin = v
    if smax <= eps:
        return pts, fptr, flab, fnrm, foff, UNCHANGED
    if smin >= -eps:
        e = _empty_like(pts, fnrm)
        return e[0], e[1], e[2], e[3], e[4], EMPTY

    new_pts = np.empty((npts + nf + 2 * nf + 8, 3))
    new_ptr = np.zeros(nf + 2, dtype=np.int64)
    new_lab = np.empty(nf + 1, dtype=np.int64)
    new_nrm = np.empty((nf + 1, 3))
    new_off = np.empty(nf + 1)
    cap = np.empty((2 * nf + npts, 3))
    ncap = 0
    count = 0
    nfo = 0
    for f in range(nf):
        a0 = fptr[f]
        m = fptr[f + 1] - a0
        start = count
        n_on = 0
        for k in range(m):
            i = a0 + k
            j = a0 + (k + 1) % m
            si = s[i]
            sj = s[j]
            if si <= eps:
                new_pts[count, 0] = pts[i, 0]
                new_pts[count, 1] = pts[i, 1]
                new_pts[count, 2] = pts[i, 2]
                count += 1
                if si >= -eps:
                    n_on += 1
                    cap[ncap, 0] = pts[i, 0]
                    cap[ncap, 1] = pts[i, 1]
                    cap[ncap, 2] = pts[i, 2]
                    ncap += 1
            if (si < -eps and sj > eps) or (si > eps and sj < -eps):
                if si < -eps:
                    a = i
                    b = j
                    sa = si
                    sb = sj
                else:
                    a = j
                    b = i
                    sa = sj
                    sb = si
                t = sa / (sa - sb)
                for d in range(3):
                    v = pts[a, d] + t * (pts[b, d] - pts[a, d])
                    new_pts[count, d] = v
                    cap[ncap, d] = v
                count += 1
                ncap += 1
        kept = count - start
        if kept >= 3 and n_on < kept:
            new_lab[nfo] = flab[f]
            new_nrm[nfo, 0] = fnrm[f, 0]
            new_nrm[nfo, 1] = fnrm[f, 1]
            new_nrm[nfo, 2] = fnrm[f, 2]
            new_off[nfo] = foff[f]
            nfo += 1
            new_ptr[nfo] = count
        else:
            count = start

    # cap polygon: merge duplicates, then sort by angle about the centroid
    tol2 = (10.0 * eps) * (10.0 * eps)
    uniq = np.empty((ncap, 3))
    nu = 0
    for k in range(ncap):
        dup = False
        for q in range(nu):
            dx = cap[k, 0] - uniq[q, 0]
            dy = cap[k, 1] - uniq[q, 1]
            dz = cap[k, 2] - uniq[q, 2]
            if dx * dx + dy * dy + dz * dz <= tol2:
                dup = True
                break
        if not dup:
            uniq[nu, 0] = cap[k, 0]
            uniq[nu, 1] = cap[k, 1]
            uniq[nu, 2] = cap[k, 2]
            nu += 1
    if nu >= 3:
        cx = 0.0
        cy = 0.0
        cz = 0.0
        for q in range(nu):
            cx += uniq[q, 0]
            cy += uniq[q, 1]
            cz += uniq[q, 2]
        cx /= nu
        cy /= nu
        cz /= nu
        # orthonormal basis (u, w) of the plane with u x w = n
        if abs(n[0]) < 0.9:
            ax, ay, az = 1.0, 0.0, 0.0
        else:
            ax, ay, az = 0.0, 1.0, 0.0
        ux = ay * n[2] - az * n[1]
        uy = az * n[0] - ax * n[2]
        uz = ax * n[1] - ay * n[0]
        un = np.sqrt(ux * ux + uy * uy + uz * uz)
        ux /= un
        uy /= un
        uz /= un
        wx = n[1] * uz - n[2] * uy
        wy = n[2] * ux - n[0] * uz
        wz = n[0] * uy - n[1] * ux
        ang = np.empty(nu)
        for q in range(nu):
            dx = uniq[q, 0] - cx
            dy = uniq[q, 1] - cy
            dz = uniq[q, 2] - cz
            ang[q] = np.arctan2(dx * wx + dy * wy + dz * wz,
                                dx * ux + dy * uy + dz * uz)
        order = np.argsort(ang)
        for q in range(nu):
            r = order[q]
            new_pts[count, 0] = uniq[r, 0]
            new_pts[count, 1] = uniq[r, 1]
            new_pts[count, 2] = uniq[r, 2]
            count += 1
        new_lab[nfo] = lab
        new_nrm[nfo, 0] = n[0]
        new_nrm[nfo, 1] = n[1]
        new_nrm[nfo, 2] = n[2]
        new_off[nfo] = c
        nfo += 1
        new_ptr[nfo] = count
    if nfo < 4:
        e = _empty_like(pts, fnrm)
        return e[0], e[1], e[2], e[3], e[4], EMPTY
    return (new_pts[:count].copy(), new_ptr[:nfo + 1].copy(), new_lab[:nfo].copy(),
            new_nrm[:nfo].copy(), new_off[:nfo].copy(), CLIPPED)


@njit(cache=True, nogil=True)
def integrals(pts, fptr):
    """Volume, barycenter and per-face areas by fan tetrahedra from the vertex mean."""
    nf = fptr.shape[0] - 1
    areas = np.zeros(nf)
    bary = np.zeros(3)
    npts = pts.shape[0]
    if nf == 0 or npts == 0:
        return 0.0, bary, areas
    r = np.zeros(3)
    for k in range(npts):
        r[0] += pts[k, 0]
        r[1] += pts[k, 1]
        r[2] += pts[k, 2]
    r /= npts
    vol = 0.0
    for f in range(nf):
        a0 = fptr[f]
        m = fptr[f + 1] - a0
        p0x = pts[a0, 0] - r[0]
        p0y = pts[a0, 1] - r[1]
        p0z = pts[a0, 2] - r[2]
        area = 0.0
        for k in range(1, m - 1):
            p1x = pts[a0 + k, 0] - r[0]
            p1y = pts[a0 + k, 1] - r[1]
            p1z = pts[a0 + k, 2] - r[2]
            p2x = pts[a0 + k + 1, 0] - r[0]
            p2y = pts[a0 + k + 1, 1] - r[1]
            p2z = pts[a0 + k + 1, 2] - r[2]
            det = (p0x * (p1y * p2z - p1z * p2y)
                   - p0y * (p1x * p2z - p1z * p2x)
                   + p0z * (p1x * p2y - p1y * p2x))
            v = abs(det) / 6.0
            vol += v
            bary[0] += v * (p0x + p1x + p2x) / 4.0
            bary[1] += v * (p0y + p1y + p2y) / 4.0
            bary[2] += v * (p0z + p1z + p2z) / 4.0
            e1x = p1x - p0x
            e1y = p1y - p0y
            e1z = p1z - p0z
            e2x = p2x - p0x
            e2y = p2y - p0y
            e2z = p2z - p0z
            cx = e1y * e2z - e1z * e2y
            cy = e1z * e2x - e1x * e2z
            cz = e1x * e2y - e1y * e2x
            area += 0.5 * np.sqrt(cx * cx + cy * cy + cz * cz)
        areas[f] = area
    if vol > 0.0:
        bary /= vol
    bary += r
    return vol, bary, areas


@njit(cache=True, nogil=True)
def laguerre_cell(i, Y, psi, dpts, dptr, dlab, dnrm, doff, eps):
    """Laguerre cell of site ``i`` inside the domain polytope.

    Bisector planes are visited in order of their distance to ``y_i``; the
    sweep stops once the nearest remaining plane lies beyond the cell radius.
    Face labels: neighbour index ``j >= 0``, domain faces keep their own
    (negative) labels.
    """
    n = Y.shape[0]
    pts = dpts
    fptr = dptr
    flab = dlab
    fnrm = dnrm
    foff = doff
    yi = Y[i]
    yy_i = yi[0] * yi[0] + yi[1] * yi[1] + yi[2] * yi[2]
    h = np.empty(n)
    nrm = np.empty((n, 3))
    off = np.empty(n)
    for j in range(n):
        if j == i:
            h[j] = np.inf
            continue
        dx = Y[j, 0] - yi[0]
        dy = Y[j, 1] - yi[1]
        dz = Y[j, 2] - yi[2]
        dn = np.sqrt(dx * dx + dy * dy + dz * dz)
        yy_j = Y[j, 0] * Y[j, 0] + Y[j, 1] * Y[j, 1] + Y[j, 2] * Y[j, 2]
        cj = 0.5 * (yy_j - yy_i + psi[i] - psi[j]) / dn
        nrm[j, 0] = dx / dn
        nrm[j, 1] = dy / dn
        nrm[j, 2] = dz / dn
        off[j] = cj
        h[j] = cj - (nrm[j, 0] * yi[0] + nrm[j, 1] * yi[1] + nrm[j, 2] * yi[2])
    order = np.argsort(h)
    rad = 0.0
    for k in range(pts.shape[0]):
        dx = pts[k, 0] - yi[0]
        dy = pts[k, 1] - yi[1]
        dz = pts[k, 2] - yi[2]
        d2 = dx * dx + dy * dy + dz * dz
        if d2 > rad:
            rad = d2
    rad = np.sqrt(rad)
    for q in range(n):
        j = order[q]
        if j == i or h[j] > rad + eps:
            break
        res = clip(pts, fptr, flab, fnrm, foff, nrm[j], off[j], j, eps)
        status = res[5]
        if status == UNCHANGED:
            continue
        pts, fptr, flab, fnrm, foff = res[0], res[1], res[2], res[3], res[4]
        if status == EMPTY:
            break
        rad = 0.0
        for k in range(pts.shape[0]):
            dx = pts[k, 0] - yi[0]
            dy = pts[k, 1] - yi[1]
            dz = pts[k, 2] - yi[2]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 > rad:
                rad = d2
        rad = np.sqrt(rad)
    return pts, fptr, flab, fnrm, foff


@njit(cache=True, nogil=True)
def power_argmin(X, Y, psi):
    """Index minimising ``|x - y_i|^2 - psi_i``; lowest index wins ties."""
    m = X.shape[0]
    n = Y.shape[0]
    out = np.empty(m, dtype=np.int64)
    for a in range(m):
        best = np.inf
        arg = 0
        for i in range(n):
            dx = X[a, 0] - Y[i, 0]
            dy = X[a, 1] - Y[i, 1]
            dz = X[a, 2] - Y[i, 2]
            v = dx * dx + dy * dy + dz * dz - psi[i]
            if v < best:
                best = v
                arg = i
        out[a] = arg
    return out


@njit(cache=True, nogil=True)
def second_moment(pts, fptr, c):
    """Integral of ``|x - c|^2`` over the polytope."""
    nf = fptr.shape[0] - 1
    npts = pts.shape[0]
    if nf == 0 or npts == 0:
        return 0.0
    r = np.zeros(3)
    for k in range(npts):
        r[0] += pts[k, 0]
        r[1] += pts[k, 1]
        r[2] += pts[k, 2]
    r /= npts
    q = np.empty((4, 3))
    total = 0.0
    for f in range(nf):
        a0 = fptr[f]
        m = fptr[f + 1] - a0
        for k in range(1, m - 1):
            for d in range(3):
                q[0, d] = pts[a0, d] - r[d]
                q[1, d] = pts[a0 + k, d] - r[d]
                q[2, d] = pts[a0 + k + 1, d] - r[d]
            det = (q[0, 0] * (q[1, 1] * q[2, 2] - q[1, 2] * q[2, 1])
                   - q[0, 1] * (q[1, 0] * q[2, 2] - q[1, 2] * q[2, 0])
                   + q[0, 2] * (q[1, 0] * q[2, 1] - q[1, 1] * q[2, 0]))
            v = abs(det) / 6.0
            for d in range(3):
                q[0, d] += r[d] - c[d]
                q[1, d] += r[d] - c[d]
                q[2, d] += r[d] - c[d]
                q[3, d] = r[d] - c[d]
            ss = 0.0
            for a in range(4):
                ss += q[a, 0] * q[a, 0] + q[a, 1] * q[a, 1] + q[a, 2] * q[a, 2]
            sx = q[0, 0] + q[1, 0] + q[2, 0] + q[3, 0]
            sy = q[0, 1] + q[1, 1] + q[2, 1] + q[3, 1]
            sz = q[0, 2] + q[1, 2] + q[2, 2] + q[3, 2]
            total += v / 20.0 * (ss + sx * sx + sy * sy + sz * sz)
    return total


@njit(cache=True, nogil=True)
def fan_tets(pts, fptr):
    """Tetrahedra (apex = vertex mean, base = fan triangles of each face)."""
    nf = fptr.shape[0] - 1
    count = 0
    for f in range(nf):
        count += max(fptr[f + 1] - fptr[f] - 2, 0)
    out = np.empty((count, 4, 3))
    npts = pts.shape[0]
    r = np.zeros(3)
    for k in range(npts):
        r += pts[k]
    if npts > 0:
        r /= npts
    t = 0
    for f in range(nf):
        a0 = fptr[f]
        m = fptr[f + 1] - a0
        for k in range(1, m - 1):
            out[t, 0] = r
            out[t, 1] = pts[a0]
            out[t, 2] = pts[a0 + k]
            out[t, 3] = pts[a0 + k + 1]
            t += 1
    return out


@njit(cache=True, nogil=True)
def face_triangles(pts, fptr, fnrm):
    """Triangles fanned from each face's vertex mean, with the face normals.

    Returns ``(tri (T, 3, 3), normal (T, 3), face (T,))``.  The vertex mean is
    taken over lexicographically sorted vertices so that both copies of a
    shared face produce the same triangles up to rounding.
    """
    nf = fptr.shape[0] - 1
    count = 0
    for f in range(nf):
        count += fptr[f + 1] - fptr[f]
    tri = np.empty((count, 3, 3))
    nrm = np.empty((count, 3))
    fid = np.empty(count, dtype=np.int64)
    t = 0
    for f in range(nf):
        a0 = fptr[f]
        m = fptr[f + 1] - a0
        face = pts[a0:a0 + m]
        order = np.arange(m)
        # insertion sort by (x, y, z)
        for i in range(1, m):
            j = i
            while j > 0:
                p = face[order[j - 1]]
                q = face[order[j]]
                if p[0] > q[0] or (p[0] == q[0] and (p[1] > q[1] or (p[1] == q[1] and p[2] > q[2]))):
                    tmp = order[j - 1]
                    order[j - 1] = order[j]
                    order[j] = tmp
                    j -= 1
                else:
                    break
        c = np.zeros(3)
        for i in range(m):
            c += face[order[i]]
        c /= m
        for k in range(m):
            tri[t, 0] = c
            tri[t, 1] = face[k]
            tri[t, 2] = face[(k + 1) % m]
            nrm[t] = fnrm[f]
            fid[t] = f
            t += 1
    return tri, nrm, fid
