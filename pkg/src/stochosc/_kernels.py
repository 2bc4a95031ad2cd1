"""Compiled inner loops for the disk-grid solver."""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _mc_slope(a, b):
    if a * b <= 0.0:
        return 0.0
    c = 0.5 * (a + b)
    s = min(abs(c), 2.0 * abs(a), 2.0 * abs(b))
    return s if c > 0.0 else -s


@njit(cache=True, inline="always")
def _edge_value(gf, gc, gd, has_far, limited):
    # value of the upwind cell c at its edge facing d; f is the cell behind c
    if limited:
        if not has_far:
            return gc
        return gc + 0.5 * _mc_slope(gc - gf, gd - gc)
    if not has_far:
        gf = gc
    return (-gf + 5.0 * gc + 2.0 * gd) / 6.0


@njit(cache=True)
def advect_rhs(g, vx, vy, active, h, limited, out):
    """Flux-form divergence -div(v g); vx, vy are zero on closed faces."""
    n = g.shape[0]
    inv_h = 1.0 / h
    for i in range(n):
        for j in range(n):
            out[i, j] = 0.0
    for i in range(1, n):
        for j in range(n):
            v = vx[i, j]
            if v == 0.0:
                continue
            if v > 0.0:
                c, d, f = i - 1, i, i - 2
            else:
                c, d, f = i, i - 1, i + 1
            has_far = 0 <= f < n and active[f, j]
            gf = g[f, j] if has_far else 0.0
            flux = v * _edge_value(gf, g[c, j], g[d, j], has_far, limited)
            out[i - 1, j] -= flux * inv_h
            out[i, j] += flux * inv_h
    for i in range(n):
        for j in range(1, n):
            v = vy[i, j]
            if v == 0.0:
                continue
            if v > 0.0:
                c, d, f = j - 1, j, j - 2
            else:
                c, d, f = j, j - 1, j + 1
            has_far = 0 <= f < n and active[i, f]
            gf = g[i, f] if has_far else 0.0
            flux = v * _edge_value(gf, g[i, c], g[i, d], has_far, limited)
            out[i, j - 1] -= flux * inv_h
            out[i, j] += flux * inv_h


@njit(cache=True)
def outflow_bound(vx, vy):
    """max over cells of the summed |face velocity|; sets the positive CFL step."""
    n = vy.shape[0]
    best = 0.0
    for i in range(n):
        for j in range(n):
            s = abs(vx[i, j]) + abs(vx[i + 1, j]) + abs(vy[i, j]) + abs(vy[i, j + 1])
            if s > best:
                best = s
    return best


@njit(cache=True)
def advect(g, vx, vy, active, h, dt, n_sub, limited, work1, work2, work3):
    """n_sub SSP-RK steps of size dt in place: RK2 when limited, RK3 otherwise."""
    n = g.shape[0]
    for _ in range(n_sub):
        advect_rhs(g, vx, vy, active, h, limited, work1)
        for i in range(n):
            for j in range(n):
                work2[i, j] = g[i, j] + dt * work1[i, j]
        advect_rhs(work2, vx, vy, active, h, limited, work1)
        if limited:
            for i in range(n):
                for j in range(n):
                    g[i, j] = 0.5 * (g[i, j] + work2[i, j] + dt * work1[i, j])
        else:
            for i in range(n):
                for j in range(n):
                    work3[i, j] = 0.75 * g[i, j] + 0.25 * (work2[i, j] + dt * work1[i, j])
            advect_rhs(work3, vx, vy, active, h, limited, work1)
            for i in range(n):
                for j in range(n):
                    g[i, j] = (g[i, j] + 2.0 * (work3[i, j] + dt * work1[i, j])) / 3.0


@njit(cache=True)
def zalesak(u_low, u_high, indptr, indices, dvals, tau, positivity_only, out):
    """Limited antidiffusive correction on a symmetric edge structure.

    Raw flux into i from j: f_ij = tau * d_ij * (u_high_i - u_high_j). The limiter
    keeps u_low + sum(alpha f) inside the local bounds of u_low, or only above
    zero when ``positivity_only`` is set.
    """
    m = u_low.size
    rp = np.empty(m)
    rm = np.empty(m)
    for i in range(m):
        pp = 0.0
        pm = 0.0
        qmax = u_low[i]
        qmin = u_low[i]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j == i:
                continue
            f = tau * dvals[k] * (u_high[i] - u_high[j])
            if f > 0.0:
                pp += f
            else:
                pm += f
            if u_low[j] > qmax:
                qmax = u_low[j]
            if u_low[j] < qmin:
                qmin = u_low[j]
        if positivity_only:
            qp = np.inf
            qm = -u_low[i]
        else:
            qp = qmax - u_low[i]
            qm = qmin - u_low[i]
        rp[i] = 1.0 if pp <= qp else qp / pp
        rm[i] = 1.0 if pm >= qm else qm / pm
    for i in range(m):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j == i:
                continue
            f = tau * dvals[k] * (u_high[i] - u_high[j])
            if f > 0.0:
                a = min(rp[i], rm[j])
            else:
                a = min(rm[i], rp[j])
            acc += a * f
        out[i] = u_low[i] + acc


@njit(cache=True, nogil=True)
def em_chunk(u1, u2, acc, alive, normals, om2, dt, sd_r, sd_i, cap):
    """Euler-Maruyama over len(om2) steps for one block, in place.

    Reflects u2 at zero, freezes trajectories with |u| > cap, and accumulates
    acc += u1 dt (left-point rule, matching the Ito weight functional).
    """
    n_steps = om2.shape[0]
    b = u1.shape[0]
    cap2 = cap * cap
    for s in range(n_steps):
        o2 = om2[s]
        for k in range(b):
            if not alive[k]:
                continue
            x = u1[k]
            y = u2[k]
            acc[k] += x * dt
            nx = x + (y * y - x * x - o2) * dt - sd_r * normals[s, 0, k]
            ny = y - 2.0 * x * y * dt - sd_i * normals[s, 1, k]
            if ny < 0.0:
                ny = -ny
            if nx * nx + ny * ny > cap2 or not np.isfinite(nx) or not np.isfinite(ny):
                alive[k] = False
            u1[k] = nx
            u2[k] = ny
