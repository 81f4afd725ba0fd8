"""Numba @njit implementations of the hot kernels.

Signature-compatible with ``numpy_impl``; selected by default when numba
imports (opt out with FIELDLAB_NUMBA=0). Kernels are serial and nogil, so
results are bit-repeatable and chunk-level threading stays deterministic.
First call per dtype pays JIT compilation; cache=True amortizes across
processes.
"""

from __future__ import annotations

import numpy as np
from numba import njit

PRIM_BOX = 0
PRIM_CYLINDER = 1
PRIM_SPHERE = 2

HIT_NONE = -2
HIT_TABLE = -1

_JIT = dict(cache=True, nogil=True, fastmath=False)


@njit(**_JIT)
def encode_points(pts, lo, inv_half, freqs):
    b = pts.shape[0]
    out = np.empty((b, 3 + 6 * freqs), pts.dtype)
    for i in range(b):
        for j in range(3):
            v = (pts[i, j] - lo[j]) * inv_half[j] - 1.0
            if v < -2.0:
                v = -2.0
            elif v > 2.0:
                v = 2.0
            out[i, j] = v
            s = np.sin(v * np.pi)
            c = np.cos(v * np.pi)
            for k in range(freqs):
                out[i, 3 + 6 * k + j] = s
                out[i, 6 + 6 * k + j] = c
                s, c = 2.0 * s * c, c * c - s * s
    return out


@njit(**_JIT)
def _relu_inplace(h, bias, store):
    b, n = h.shape
    for i in range(b):
        for j in range(n):
            v = h[i, j] + bias[j]
            store[i, j] = v if v > 0.0 else 0.0


@njit(**_JIT)
def mlp_forward(x, w_in, b_in, w_hid, b_hid, w_den, b_den, w_col, b_col,
                w_sem, b_sem, w_con, b_con, want_acts):
    b = x.shape[0]
    width = w_in.shape[1]
    n_hid = w_hid.shape[0]
    n_classes = w_sem.shape[1]
    if want_acts:
        acts = np.empty((n_hid + 1, b, width), x.dtype)
    else:
        acts = np.empty((2, b, width), x.dtype)  # ping-pong buffers
    h = np.dot(x, w_in)
    _relu_inplace(h, b_in, acts[0])
    cur = 0
    for layer in range(n_hid):
        nxt = layer + 1 if want_acts else 1 - cur
        h = np.dot(acts[cur], w_hid[layer])
        _relu_inplace(h, b_hid[layer], acts[nxt])
        cur = nxt
    last = acts[cur]
    z_den = np.dot(last, w_den)
    z_col = np.dot(last, w_col)
    sem = np.dot(last, w_sem)
    z_con = np.dot(last, w_con)
    sigma = np.empty(b, x.dtype)
    rgb = np.empty((b, 3), x.dtype)
    cont = np.empty(b, x.dtype)
    for i in range(b):
        z = z_den[i, 0] + b_den[0]
        # stable softplus
        if z > 0.0:
            sigma[i] = z + np.log1p(np.exp(-z))
        else:
            sigma[i] = np.log1p(np.exp(z))
        for k in range(3):
            rgb[i, k] = 1.0 / (1.0 + np.exp(-(z_col[i, k] + b_col[k])))
        for k in range(n_classes):
            sem[i, k] += b_sem[k]
        cont[i] = z_con[i, 0] + b_con[0]
    if not want_acts:
        acts = acts[cur:cur + 1]
    return acts, sigma, rgb, sem, cont


@njit(**_JIT)
def mlp_backward(x, acts, sigma, rgb, w_in, w_hid, w_den, w_col, w_sem, w_con,
                 d_sigma, d_rgb, d_sem, d_cont):
    b = x.shape[0]
    n_hid = w_hid.shape[0]
    dz_den = np.empty((b, 1), x.dtype)
    dz_col = np.empty((b, 3), x.dtype)
    d_con = np.empty((b, 1), x.dtype)
    for i in range(b):
        dz_den[i, 0] = d_sigma[i] * -np.expm1(-sigma[i])
        for k in range(3):
            dz_col[i, k] = d_rgb[i, k] * rgb[i, k] * (1.0 - rgb[i, k])
        d_con[i, 0] = d_cont[i]
    last = acts[n_hid]
    last_t = np.ascontiguousarray(last.T)
    g_w_den = np.dot(last_t, dz_den)
    g_w_col = np.dot(last_t, dz_col)
    g_w_sem = np.dot(last_t, d_sem)
    g_w_con = np.dot(last_t, d_con)
    g_b_den = _col_sums(dz_den)
    g_b_col = _col_sums(dz_col)
    g_b_sem = _col_sums(d_sem)
    g_b_con = _col_sums(d_con)
    dh = (np.dot(dz_den, np.ascontiguousarray(w_den.T))
          + np.dot(dz_col, np.ascontiguousarray(w_col.T))
          + np.dot(d_sem, np.ascontiguousarray(w_sem.T))
          + np.dot(d_con, np.ascontiguousarray(w_con.T)))
    g_w_hid = np.empty_like(w_hid)
    g_b_hid = np.empty((n_hid, w_hid.shape[2]), x.dtype)
    for layer in range(n_hid - 1, -1, -1):
        _relu_mask_inplace(dh, acts[layer + 1])
        g_w_hid[layer] = np.dot(np.ascontiguousarray(acts[layer].T), dh)
        g_b_hid[layer] = _col_sums(dh)
        dh = np.dot(dh, np.ascontiguousarray(w_hid[layer].T))
    _relu_mask_inplace(dh, acts[0])
    g_w_in = np.dot(np.ascontiguousarray(x.T), dh)
    g_b_in = _col_sums(dh)
    return (g_w_in, g_b_in, g_w_hid, g_b_hid, g_w_den, g_b_den,
            g_w_col, g_b_col, g_w_sem, g_b_sem, g_w_con, g_b_con)


@njit(**_JIT)
def _relu_mask_inplace(dh, act):
    b, n = dh.shape
    for i in range(b):
        for j in range(n):
            if act[i, j] <= 0.0:
                dh[i, j] = 0.0


@njit(**_JIT)
def _col_sums(a):
    b, n = a.shape
    out = np.zeros(n, a.dtype)
    for i in range(b):
        for j in range(n):
            out[j] += a[i, j]
    return out


@njit(**_JIT)
def composite_fwd(sigma, rgb, sem, cont, ts, deltas):
    r, n = sigma.shape
    n_classes = sem.shape[2]
    weights = np.empty((r, n), sigma.dtype)
    trans = np.empty((r, n), sigma.dtype)
    color = np.zeros((r, 3), sigma.dtype)
    depth = np.zeros(r, sigma.dtype)
    sem_log = np.zeros((r, n_classes), sigma.dtype)
    cont_v = np.zeros(r, sigma.dtype)
    wsum = np.zeros(r, sigma.dtype)
    for i in range(r):
        t_acc = 1.0
        for j in range(n):
            alpha = -np.expm1(-sigma[i, j] * deltas[i, j])
            trans[i, j] = t_acc
            w = alpha * t_acc
            weights[i, j] = w
            t_acc *= 1.0 - alpha
            for k in range(3):
                color[i, k] += w * rgb[i, j, k]
            depth[i] += w * ts[i, j]
            for k in range(n_classes):
                sem_log[i, k] += w * sem[i, j, k]
            cont_v[i] += w * cont[i, j]
            wsum[i] += w
    return weights, trans, color, depth, sem_log, cont_v, wsum


@njit(**_JIT)
def composite_bwd(sigma, deltas, weights, trans, rgb, sem, cont, ts,
                  d_color, d_depth, d_semlog, d_cont, d_wsum):
    r, n = sigma.shape
    n_classes = sem.shape[2]
    d_sigma = np.empty((r, n), sigma.dtype)
    d_rgb = np.empty((r, n, 3), sigma.dtype)
    d_sem = np.empty((r, n, n_classes), sigma.dtype)
    d_cont_s = np.empty((r, n), sigma.dtype)
    for i in range(r):
        suffix = 0.0
        for j in range(n - 1, -1, -1):
            a = d_depth[i] * ts[i, j] + d_cont[i] * cont[i, j] + d_wsum[i]
            for k in range(3):
                a += d_color[i, k] * rgb[i, j, k]
            for k in range(n_classes):
                a += d_semlog[i, k] * sem[i, j, k]
            alpha = -np.expm1(-sigma[i, j] * deltas[i, j])
            d_sigma[i, j] = deltas[i, j] * (a * trans[i, j] * (1.0 - alpha) - suffix)
            suffix += a * weights[i, j]
            w = weights[i, j]
            for k in range(3):
                d_rgb[i, j, k] = w * d_color[i, k]
            for k in range(n_classes):
                d_sem[i, j, k] = w * d_semlog[i, k]
            d_cont_s[i, j] = w * d_cont[i]
    return d_sigma, d_rgb, d_sem, d_cont_s


@njit(**_JIT)
def raycast(origin, dirs, types, params, rot_lw, trans, table_h, t_min, t_max):
    p = dirs.shape[0]
    n_prim = types.shape[0]
    t_out = np.zeros(p)
    hit = np.full(p, HIT_NONE, dtype=np.int64)
    normal = np.zeros((p, 3))
    for ray in range(p):
        best_t = np.inf
        best_i = HIT_NONE
        nx = ny = nz = 0.0
        dz = dirs[ray, 2]
        if abs(dz) > 1e-15:
            t_tab = (table_h - origin[2]) / dz
            if t_min <= t_tab <= t_max:
                best_t = t_tab
                best_i = HIT_TABLE
                nx, ny, nz = 0.0, 0.0, 1.0
        for i in range(n_prim):
            ox = oy = oz = 0.0
            dxl = dyl = dzl = 0.0
            for a in range(3):
                ox += rot_lw[i, 0, a] * (origin[a] - trans[i, a])
                oy += rot_lw[i, 1, a] * (origin[a] - trans[i, a])
                oz += rot_lw[i, 2, a] * (origin[a] - trans[i, a])
                dxl += rot_lw[i, 0, a] * dirs[ray, a]
                dyl += rot_lw[i, 1, a] * dirs[ray, a]
                dzl += rot_lw[i, 2, a] * dirs[ray, a]
            t_i = np.inf
            lx = ly = lz = 0.0
            if types[i] == PRIM_BOX:
                t_i, lx, ly, lz = _box_hit1(ox, oy, oz, dxl, dyl, dzl,
                                            params[i, 0], params[i, 1], params[i, 2])
            elif types[i] == PRIM_CYLINDER:
                t_i, lx, ly, lz = _cyl_hit1(ox, oy, oz, dxl, dyl, dzl,
                                            params[i, 0], params[i, 1])
            else:
                t_i, lx, ly, lz = _sph_hit1(ox, oy, oz, dxl, dyl, dzl, params[i, 0])
            if t_min <= t_i <= t_max and t_i < best_t:
                best_t = t_i
                best_i = i
                # world normal = R_lw^T @ n_local
                nx = rot_lw[i, 0, 0] * lx + rot_lw[i, 1, 0] * ly + rot_lw[i, 2, 0] * lz
                ny = rot_lw[i, 0, 1] * lx + rot_lw[i, 1, 1] * ly + rot_lw[i, 2, 1] * lz
                nz = rot_lw[i, 0, 2] * lx + rot_lw[i, 1, 2] * ly + rot_lw[i, 2, 2] * lz
        if best_i != HIT_NONE:
            t_out[ray] = best_t
            hit[ray] = best_i
            normal[ray, 0] = nx
            normal[ray, 1] = ny
            normal[ray, 2] = nz
    return t_out, hit, normal


@njit(**_JIT)
def _box_hit1(ox, oy, oz, dx, dy, dz, hx, hy, hz):
    t_near = -np.inf
    t_far = np.inf
    axis = -1
    sign = 0.0
    o = (ox, oy, oz)
    d = (dx, dy, dz)
    h = (hx, hy, hz)
    for a in range(3):
        if abs(d[a]) <= 1e-12:
            if abs(o[a]) > h[a]:
                return np.inf, 0.0, 0.0, 0.0
        else:
            t1 = (-h[a] - o[a]) / d[a]
            t2 = (h[a] - o[a]) / d[a]
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > t_near:
                t_near = t1
                axis = a
                sign = -1.0 if d[a] > 0 else 1.0
            if t2 < t_far:
                t_far = t2
    if t_near > t_far or t_near <= 0.0 or axis < 0:
        return np.inf, 0.0, 0.0, 0.0
    nx = sign if axis == 0 else 0.0
    ny = sign if axis == 1 else 0.0
    nz = sign if axis == 2 else 0.0
    return t_near, nx, ny, nz


@njit(**_JIT)
def _cyl_hit1(ox, oy, oz, dx, dy, dz, radius, half_h):
    best = np.inf
    nx = ny = nz = 0.0
    a = dx * dx + dy * dy
    if a > 1e-14:
        b = ox * dx + oy * dy
        c = ox * ox + oy * oy - radius * radius
        disc = b * b - a * c
        if disc >= 0.0:
            sq = np.sqrt(disc)
            for s in (-1.0, 1.0):
                t = (-b + s * sq) / a
                if 0.0 < t < best:
                    z = oz + t * dz
                    if abs(z) <= half_h:
                        best = t
                        nx = (ox + t * dx) / radius
                        ny = (oy + t * dy) / radius
                        nz = 0.0
    if abs(dz) > 1e-12:
        for cap in (half_h, -half_h):
            t = (cap - oz) / dz
            if 0.0 < t < best:
                x = ox + t * dx
                y = oy + t * dy
                if x * x + y * y <= radius * radius:
                    best = t
                    nx, ny = 0.0, 0.0
                    nz = 1.0 if cap > 0 else -1.0
    return best, nx, ny, nz


@njit(**_JIT)
def _sph_hit1(ox, oy, oz, dx, dy, dz, radius):
    b = ox * dx + oy * dy + oz * dz
    c = ox * ox + oy * oy + oz * oz - radius * radius
    disc = b * b - c
    if disc < 0.0:
        return np.inf, 0.0, 0.0, 0.0
    sq = np.sqrt(disc)
    t = -b - sq
    if t <= 0.0:
        t = -b + sq
    if t <= 0.0:
        return np.inf, 0.0, 0.0, 0.0
    return t, (ox + t * dx) / radius, (oy + t * dy) / radius, (oz + t * dz) / radius


@njit(**_JIT)
def stiction_grid(masses, pos_xy, q_grid, contact, push_dir, mu_g):
    n_q = q_grid.shape[0]
    n_m = masses.shape[0]
    out = np.empty(n_q)
    for q in range(n_q):
        cx = contact[0] - q_grid[q, 0]
        cy = contact[1] - q_grid[q, 1]
        arm = abs(cx * push_dir[1] - cy * push_dir[0])
        if arm <= 1e-9:
            out[q] = np.inf
            continue
        acc = 0.0
        for m in range(n_m):
            rx = pos_xy[m, 0] - q_grid[q, 0]
            ry = pos_xy[m, 1] - q_grid[q, 1]
            acc += masses[m] * np.sqrt(rx * rx + ry * ry)
        out[q] = mu_g * acc / arm
    return out
