"""Numba-compiled inner loops: fast-sweeping eikonal solvers (2D/3D),
upwind transport sweeps, and the semi-Lagrangian shape-from-shading
operator.  Everything here is deterministic and single-threaded."""

from __future__ import annotations

import numpy as np
from numba import njit

INF = 1e30


@njit(cache=True, inline="always")
def _solve2(a, b, ha, hb, f):
    """Godunov update from two axis minima (INF = unavailable)."""
    if a > b:
        a, b = b, a
        ha, hb = hb, ha
    if a >= INF:
        return INF
    t = a + f * ha
    if t <= b:
        return t
    ia = 1.0 / (ha * ha)
    ib = 1.0 / (hb * hb)
    A = ia + ib
    B = a * ia + b * ib
    C = a * a * ia + b * b * ib - f * f
    disc = B * B - A * C
    if disc < 0.0:
        return t
    return (B + np.sqrt(disc)) / A


@njit(cache=True, inline="always")
def _solve3(a, b, c, ha, hb, hc, f):
    # sort the three (value, spacing) pairs by value
    if a > b:
        a, b = b, a
        ha, hb = hb, ha
    if b > c:
        b, c = c, b
        hb, hc = hc, hb
    if a > b:
        a, b = b, a
        ha, hb = hb, ha
    if a >= INF:
        return INF
    t = a + f * ha
    if t <= b:
        return t
    t = _solve2(a, b, ha, hb, f)
    if t <= c:
        return t
    ia = 1.0 / (ha * ha)
    ib = 1.0 / (hb * hb)
    ic = 1.0 / (hc * hc)
    A = ia + ib + ic
    B = a * ia + b * ib + c * ic
    C = a * a * ia + b * b * ib + c * c * ic - f * f
    disc = B * B - A * C
    if disc < 0.0:
        return t
    return (B + np.sqrt(disc)) / A


@njit(cache=True)
def fsm2d(T, slowness, frozen, mask, hx, hy, max_pass, tol):
    """Gauss-Seidel fast sweeping for |grad T| = slowness on a 2D grid.

    Sweeps the four axis orderings until the largest update falls below
    ``tol``.  Returns the number of full passes used."""
    nx, ny = T.shape
    for p in range(max_pass):
        maxchange = 0.0
        for si in range(2):
            i0, i1, di = (0, nx, 1) if si == 0 else (nx - 1, -1, -1)
            for sj in range(2):
                j0, j1, dj = (0, ny, 1) if sj == 0 else (ny - 1, -1, -1)
                for i in range(i0, i1, di):
                    for j in range(j0, j1, dj):
                        if frozen[i, j] or not mask[i, j]:
                            continue
                        a = INF
                        if i > 0 and mask[i - 1, j]:
                            a = T[i - 1, j]
                        if i < nx - 1 and mask[i + 1, j] and T[i + 1, j] < a:
                            a = T[i + 1, j]
                        b = INF
                        if j > 0 and mask[i, j - 1]:
                            b = T[i, j - 1]
                        if j < ny - 1 and mask[i, j + 1] and T[i, j + 1] < b:
                            b = T[i, j + 1]
                        t = _solve2(a, b, hx, hy, slowness[i, j])
                        if t < T[i, j]:
                            d = T[i, j] - t
                            if d > maxchange:
                                maxchange = d
                            T[i, j] = t
        if maxchange < tol:
            return p + 1
    return max_pass


@njit(cache=True)
def fsm2d_edge(T, cx, cy, frozen, mask, max_pass, tol):
    """Fast sweeping with a prescribed crossing cost per grid edge.

    ``cx[i, j]`` is the travel cost between nodes (i, j) and (i+1, j),
    ``cy[i, j]`` between (i, j) and (i, j+1); the Godunov update treats
    the cost of the upwind edge as an effective spacing with unit
    slowness.  Reduces to :func:`fsm2d` when costs equal h*slowness."""
    nx, ny = T.shape
    for p in range(max_pass):
        maxchange = 0.0
        for si in range(2):
            i0, i1, di = (0, nx, 1) if si == 0 else (nx - 1, -1, -1)
            for sj in range(2):
                j0, j1, dj = (0, ny, 1) if sj == 0 else (ny - 1, -1, -1)
                for i in range(i0, i1, di):
                    for j in range(j0, j1, dj):
                        if frozen[i, j] or not mask[i, j]:
                            continue
                        a = INF
                        ha = 1.0
                        if i > 0 and mask[i - 1, j]:
                            a = T[i - 1, j]
                            ha = cx[i - 1, j]
                        if i < nx - 1 and mask[i + 1, j] and T[i + 1, j] < a:
                            a = T[i + 1, j]
                            ha = cx[i, j]
                        b = INF
                        hb = 1.0
                        if j > 0 and mask[i, j - 1]:
                            b = T[i, j - 1]
                            hb = cy[i, j - 1]
                        if j < ny - 1 and mask[i, j + 1] and T[i, j + 1] < b:
                            b = T[i, j + 1]
                            hb = cy[i, j]
                        t = _solve2(a, b, ha, hb, 1.0)
                        if t < T[i, j]:
                            d = T[i, j] - t
                            if d > maxchange:
                                maxchange = d
                            T[i, j] = t
        if maxchange < tol:
            return p + 1
    return max_pass


@njit(cache=True)
def fsm3d(T, slowness, frozen, mask, hx, hy, hz, max_pass, tol):
    """3D variant of :func:`fsm2d` (eight sweep orderings per pass)."""
    nx, ny, nz = T.shape
    for p in range(max_pass):
        maxchange = 0.0
        for si in range(2):
            i0, i1, di = (0, nx, 1) if si == 0 else (nx - 1, -1, -1)
            for sj in range(2):
                j0, j1, dj = (0, ny, 1) if sj == 0 else (ny - 1, -1, -1)
                for sk in range(2):
                    k0, k1, dk = (0, nz, 1) if sk == 0 else (nz - 1, -1, -1)
                    for i in range(i0, i1, di):
                        for j in range(j0, j1, dj):
                            for k in range(k0, k1, dk):
                                if frozen[i, j, k] or not mask[i, j, k]:
                                    continue
                                a = INF
                                if i > 0 and mask[i - 1, j, k]:
                                    a = T[i - 1, j, k]
                                if i < nx - 1 and mask[i + 1, j, k] and T[i + 1, j, k] < a:
                                    a = T[i + 1, j, k]
                                b = INF
                                if j > 0 and mask[i, j - 1, k]:
                                    b = T[i, j - 1, k]
                                if j < ny - 1 and mask[i, j + 1, k] and T[i, j + 1, k] < b:
                                    b = T[i, j + 1, k]
                                c = INF
                                if k > 0 and mask[i, j, k - 1]:
                                    c = T[i, j, k - 1]
                                if k < nz - 1 and mask[i, j, k + 1] and T[i, j, k + 1] < c:
                                    c = T[i, j, k + 1]
                                t = _solve3(a, b, c, hx, hy, hz, slowness[i, j, k])
                                if t < T[i, j, k]:
                                    d = T[i, j, k] - t
                                    if d > maxchange:
                                        maxchange = d
                                    T[i, j, k] = t
        if maxchange < tol:
            return p + 1
    return max_pass


@njit(cache=True)
def transport_sweeps(u, b1, b2, f, update, hx, hy, max_pass, tol):
    """Gauss-Seidel upwind sweeps for b . grad u = f.

    ``update`` marks the nodes being solved for; everything else is held
    fixed (Dirichlet data).  The upwind neighbor per axis is picked from
    the sign of the transport field; a vanishing component uses the
    central average of the two neighbors."""
    nx, ny = u.shape
    for p in range(max_pass):
        maxchange = 0.0
        for si in range(2):
            i0, i1, di = (0, nx, 1) if si == 0 else (nx - 1, -1, -1)
            for sj in range(2):
                j0, j1, dj = (0, ny, 1) if sj == 0 else (ny - 1, -1, -1)
                for i in range(i0, i1, di):
                    for j in range(j0, j1, dj):
                        if not update[i, j]:
                            continue
                        w1 = abs(b1[i, j]) / hx
                        w2 = abs(b2[i, j]) / hy
                        den = w1 + w2
                        if den < 1e-300:
                            continue
                        num = f[i, j]
                        if b1[i, j] > 0.0:
                            num += w1 * u[i - 1, j]
                        elif b1[i, j] < 0.0:
                            num += w1 * u[i + 1, j]
                        else:
                            num += w1 * 0.5 * (u[i - 1, j] + u[i + 1, j])
                        if b2[i, j] > 0.0:
                            num += w2 * u[i, j - 1]
                        elif b2[i, j] < 0.0:
                            num += w2 * u[i, j + 1]
                        else:
                            num += w2 * 0.5 * (u[i, j - 1] + u[i, j + 1])
                        unew = num / den
                        d = abs(unew - u[i, j])
                        if d > maxchange:
                            maxchange = d
                        u[i, j] = unew
        if maxchange < tol:
            return p + 1
    return max_pass


@njit(cache=True, inline="always")
def _bilinear_clamped(W, x, y, hx, hy, nx, ny):
    """Bilinear sample in index space, clamping to the grid box (values
    beyond the box continue with the boundary data)."""
    fx = x / hx
    fy = y / hy
    if fx < 0.0:
        fx = 0.0
    if fx > nx - 1:
        fx = nx - 1.0
    if fy < 0.0:
        fy = 0.0
    if fy > ny - 1:
        fy = ny - 1.0
    i = int(fx)
    if i > nx - 2:
        i = nx - 2
    j = int(fy)
    if j > ny - 2:
        j = ny - 2
    tx = fx - i
    ty = fy - j
    return ((1 - tx) * (1 - ty) * W[i, j] + tx * (1 - ty) * W[i + 1, j]
            + (1 - tx) * ty * W[i, j + 1] + tx * ty * W[i + 1, j + 1])


@njit(cache=True)
def _bilinear_parts(W, x, y, hx, hy, nx, ny, si, sj):
    """Bilinear sample split into the contribution of node ``(si, sj)``
    and everything else: returns ``(sum of other-node terms, weight of
    the self node)``.  Needed to resolve the self-coupling of the
    fixed-point operator in closed form."""
    fx = x / hx
    fy = y / hy
    if fx < 0.0:
        fx = 0.0
    if fx > nx - 1:
        fx = nx - 1.0
    if fy < 0.0:
        fy = 0.0
    if fy > ny - 1:
        fy = ny - 1.0
    i = int(fx)
    if i > nx - 2:
        i = nx - 2
    j = int(fy)
    if j > ny - 2:
        j = ny - 2
    tx = fx - i
    ty = fy - j
    acc = 0.0
    lam = 0.0
    for di in range(2):
        for dj in range(2):
            w = (tx if di == 1 else 1.0 - tx) * (ty if dj == 1 else 1.0 - ty)
            if i + di == si and j + dj == sj:
                lam += w
            else:
                acc += w * W[i + di, j + dj]
    return acc, lam


@njit(cache=True)
def sfs_gs_pass(W, Q, interior, controls, l1, l2, l3, mu, h, hx, hy,
                i0, i1, istep, j0, j1, jstep):
    """One in-place Gauss-Seidel pass of the fixed-point equation in the
    given sweep order; returns the largest nodal change.

    For each control the affine self-dependence of the candidate value
    (through the cost factor ``1 - mu W_i`` and the bilinear weight of
    the node itself) is resolved exactly, which removes the slow
    relaxation mode near brightness maxima while keeping the same fixed
    point as the explicit operator.  Controls whose resolved equation
    degenerates to the identity keep the current nodal value."""
    nx, ny = W.shape
    emh = np.exp(-mu * h)
    tau = (1.0 - emh) / mu
    na = controls.shape[0]
    maxchange = 0.0
    i = i0
    while i != i1:
        j = j0
        while j != j1:
            if interior[i, j]:
                q = Q[i, j]
                p = q / l3
                x = i * hx
                y = j * hy
                cur = W[i, j]
                best = INF
                for m in range(na):
                    a1 = controls[m, 0]
                    a2 = controls[m, 1]
                    a3 = controls[m, 2]
                    bx = -(q * a1 + l1) / l3
                    by = -(q * a2 + l2) / l3
                    acc, lam = _bilinear_parts(W, x + h * bx, y + h * by,
                                               hx, hy, nx, ny, i, j)
                    denom = 1.0 - emh * lam - tau * mu * p * a3
                    if denom < 1e-12:
                        val = cur
                    else:
                        val = (emh * acc - tau * p * a3 + tau) / denom
                    if val < best:
                        best = val
                if best < 0.0:
                    best = 0.0
                elif best > 1.0 / mu:
                    best = 1.0 / mu
                ch = abs(best - cur)
                if ch > maxchange:
                    maxchange = ch
                W[i, j] = best
            j += jstep
        i += istep
    return maxchange


@njit(cache=True)
def sfs_operator(W, Q, interior, controls, l1, l2, l3, mu, h, hx, hy, out):
    """One application of the semi-Lagrangian fixed-point operator.

    ``Q`` is the per-node effective eikonal intensity, ``controls`` the
    discretized unit-sphere direction set.  Interior nodes are updated
    Jacobi-style against the frozen iterate ``W``; everything else is
    copied through.  Results are clamped to [0, 1/mu]."""
    nx, ny = W.shape
    emh = np.exp(-mu * h)
    tau = (1.0 - emh) / mu
    na = controls.shape[0]
    for i in range(nx):
        for j in range(ny):
            if not interior[i, j]:
                out[i, j] = W[i, j]
                continue
            q = Q[i, j]
            p = q / l3
            x = i * hx
            y = j * hy
            keep = 1.0 - mu * W[i, j]
            best = INF
            for m in range(na):
                a1 = controls[m, 0]
                a2 = controls[m, 1]
                a3 = controls[m, 2]
                bx = -(q * a1 + l1) / l3
                by = -(q * a2 + l2) / l3
                val = emh * _bilinear_clamped(W, x + h * bx, y + h * by,
                                              hx, hy, nx, ny)
                val -= tau * p * a3 * keep
                if val < best:
                    best = val
            v = best + tau
            if v < 0.0:
                v = 0.0
            elif v > 1.0 / mu:
                v = 1.0 / mu
            out[i, j] = v


@njit(cache=True)
def point_triangle_distance_sq(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    """Squared Euclidean distance from a point to a closed triangle."""
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az

    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return apx * apx + apy * apy + apz * apz

    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bpx * bpx + bpy * bpy + bpz * bpz

    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        t = d1 / (d1 - d3)
        qx = ax + t * abx - px
        qy = ay + t * aby - py
        qz = az + t * abz - pz
        return qx * qx + qy * qy + qz * qz

    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cpx * cpx + cpy * cpy + cpz * cpz

    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        t = d2 / (d2 - d6)
        qx = ax + t * acx - px
        qy = ay + t * acy - py
        qz = az + t * acz - pz
        return qx * qx + qy * qy + qz * qz

    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        qx = bx + t * (cx - bx) - px
        qy = by + t * (cy - by) - py
        qz = bz + t * (cz - bz) - pz
        return qx * qx + qy * qy + qz * qz

    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    qx = ax + abx * v + acx * w - px
    qy = ay + aby * v + acy * w - py
    qz = az + abz * v + acz * w - pz
    return qx * qx + qy * qy + qz * qz


@njit(cache=True, inline="always")
def triangle_solid_angle(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    """Signed solid angle subtended by a triangle at a point
    (van Oosterom-Strackee formula)."""
    r1x, r1y, r1z = ax - px, ay - py, az - pz
    r2x, r2y, r2z = bx - px, by - py, bz - pz
    r3x, r3y, r3z = cx - px, cy - py, cz - pz
    l1 = np.sqrt(r1x * r1x + r1y * r1y + r1z * r1z)
    l2 = np.sqrt(r2x * r2x + r2y * r2y + r2z * r2z)
    l3 = np.sqrt(r3x * r3x + r3y * r3y + r3z * r3z)
    num = (r1x * (r2y * r3z - r2z * r3y)
           - r1y * (r2x * r3z - r2z * r3x)
           + r1z * (r2x * r3y - r2y * r3x))
    den = (l1 * l2 * l3
           + (r1x * r2x + r1y * r2y + r1z * r2z) * l3
           + (r2x * r3x + r2y * r3y + r2z * r3z) * l1
           + (r3x * r1x + r3y * r1y + r3z * r1z) * l2)
    return 2.0 * np.arctan2(num, den)


@njit(cache=True)
def mesh_distance_and_angle(p, tris):
    """Min distance to a facet soup and total signed solid angle at ``p``."""
    best = INF
    total = 0.0
    for t in range(tris.shape[0]):
        d2 = point_triangle_distance_sq(
            p[0], p[1], p[2],
            tris[t, 0, 0], tris[t, 0, 1], tris[t, 0, 2],
            tris[t, 1, 0], tris[t, 1, 1], tris[t, 1, 2],
            tris[t, 2, 0], tris[t, 2, 1], tris[t, 2, 2])
        if d2 < best:
            best = d2
        total += triangle_solid_angle(
            p[0], p[1], p[2],
            tris[t, 0, 0], tris[t, 0, 1], tris[t, 0, 2],
            tris[t, 1, 0], tris[t, 1, 1], tris[t, 1, 2],
            tris[t, 2, 0], tris[t, 2, 1], tris[t, 2, 2])
    return np.sqrt(best), total


@njit(cache=True)
def sample_sdf_kernel(xs, ys, zs, tris, boxes, out):
    """Signed distance on a grid: brute-force facet minimum with an
    axis-aligned bounding-box prefilter, sign from the solid-angle sum."""
    nx = xs.shape[0]
    ny = ys.shape[0]
    nz = zs.shape[0]
    nt = tris.shape[0]
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                px, py, pz = xs[i], ys[j], zs[k]
                best = INF
                for t in range(nt):
                    # lower bound from the facet box skips far facets
                    dx = max(max(boxes[t, 0, 0] - px, px - boxes[t, 1, 0]), 0.0)
                    dy = max(max(boxes[t, 0, 1] - py, py - boxes[t, 1, 1]), 0.0)
                    dz = max(max(boxes[t, 0, 2] - pz, pz - boxes[t, 1, 2]), 0.0)
                    if dx * dx + dy * dy + dz * dz >= best:
                        continue
                    d2 = point_triangle_distance_sq(
                        px, py, pz,
                        tris[t, 0, 0], tris[t, 0, 1], tris[t, 0, 2],
                        tris[t, 1, 0], tris[t, 1, 1], tris[t, 1, 2],
                        tris[t, 2, 0], tris[t, 2, 1], tris[t, 2, 2])
                    if d2 < best:
                        best = d2
                total = 0.0
                for t in range(nt):
                    total += triangle_solid_angle(
                        px, py, pz,
                        tris[t, 0, 0], tris[t, 0, 1], tris[t, 0, 2],
                        tris[t, 1, 0], tris[t, 1, 1], tris[t, 1, 2],
                        tris[t, 2, 0], tris[t, 2, 1], tris[t, 2, 2])
                d = np.sqrt(best)
                if total > 2.0 * np.pi:  # inside iff the sum is ~4*pi
                    d = -d
                out[i, j, k] = d
