"""Pure-numpy implementations of the hot kernels.

This is the fallback lane selected with FIELDLAB_NUMBA=0; the numba lane in
``numba_impl`` mirrors every signature exactly. All functions are pure and
dtype-preserving (float32 or float64 in, same out), so a run is bit-repeatable
for a fixed lane and thread count.
"""

from __future__ import annotations

import numpy as np

# primitive type codes shared with the raycaster and scene packing
PRIM_BOX = 0
PRIM_CYLINDER = 1
PRIM_SPHERE = 2

HIT_NONE = -2
HIT_TABLE = -1


def encode_points(pts, lo, inv_half, freqs):
    """Positional encoding [p, sin(2^k pi p), cos(2^k pi p)] of world points.

    ``lo`` and ``inv_half`` map world coordinates into [-1, 1]; inputs are
    clamped to [-2, 2] (twice the scene bounds) beforehand.
    """
    p = (pts - lo) * inv_half - 1.0
    np.clip(p, -2.0, 2.0, out=p)
    b, _ = p.shape
    out = np.empty((b, 3 + 6 * freqs), dtype=p.dtype)
    out[:, :3] = p
    # sin/cos of 2^k * pi * p via angle doubling: one transcendental pair,
    # then s' = 2sc, c' = c^2 - s^2 per octave
    s = np.sin(p * p.dtype.type(np.pi))
    c = np.cos(p * p.dtype.type(np.pi))
    for k in range(freqs):
        out[:, 3 + 6 * k:6 + 6 * k] = s
        out[:, 6 + 6 * k:9 + 6 * k] = c
        if k + 1 < freqs:
            s, c = 2.0 * s * c, c * c - s * s
    return out


def mlp_forward(x, w_in, b_in, w_hid, b_hid, w_den, b_den, w_col, b_col,
                w_sem, b_sem, w_con, b_con, want_acts):
    """Trunk (ReLU) + four heads: softplus density, sigmoid color, raw
    semantic logits, raw continuous value.

    Returns (acts, sigma, rgb, sem, cont); acts is (layers, B, H) when
    ``want_acts`` else an empty array.
    """
    b = x.shape[0]
    n_hid = w_hid.shape[0]
    h = np.maximum(x @ w_in + b_in, 0.0)
    if want_acts:
        acts = np.empty((n_hid + 1, b, w_in.shape[1]), dtype=x.dtype)
        acts[0] = h
    else:
        acts = np.empty((0, 0, 0), dtype=x.dtype)
    for layer in range(n_hid):
        h = np.maximum(h @ w_hid[layer] + b_hid[layer], 0.0)
        if want_acts:
            acts[layer + 1] = h
    z_den = (h @ w_den)[:, 0] + b_den[0]
    sigma = np.logaddexp(x.dtype.type(0.0), z_den)
    rgb = 1.0 / (1.0 + np.exp(-(h @ w_col + b_col)))
    sem = h @ w_sem + b_sem
    cont = (h @ w_con)[:, 0] + b_con[0]
    return acts, sigma, rgb.astype(x.dtype, copy=False), sem, cont


def mlp_backward(x, acts, sigma, rgb, w_in, w_hid, w_den, w_col, w_sem, w_con,
                 d_sigma, d_rgb, d_sem, d_cont):
    """Exact gradients of mlp_forward w.r.t. every weight and bias.

    Uses the cached post-activations: softplus' = 1 - exp(-sigma) and
    sigmoid' = rgb * (1 - rgb), so no pre-activations need storing.
    """
    h = acts[-1]
    dz_den = (d_sigma * -np.expm1(-sigma))[:, None]
    dz_col = d_rgb * rgb * (1.0 - rgb)
    d_con = d_cont[:, None]
    g_w_den = h.T @ dz_den
    g_b_den = dz_den.sum(axis=0)
    g_w_col = h.T @ dz_col
    g_b_col = dz_col.sum(axis=0)
    g_w_sem = h.T @ d_sem
    g_b_sem = d_sem.sum(axis=0)
    g_w_con = h.T @ d_con
    g_b_con = d_con.sum(axis=0)
    dh = dz_den @ w_den.T + dz_col @ w_col.T + d_sem @ w_sem.T + d_con @ w_con.T
    n_hid = w_hid.shape[0]
    g_w_hid = np.empty_like(w_hid)
    g_b_hid = np.empty_like(w_hid[:, 0, :])
    for layer in range(n_hid - 1, -1, -1):
        dh *= acts[layer + 1] > 0
        g_w_hid[layer] = acts[layer].T @ dh
        g_b_hid[layer] = dh.sum(axis=0)
        dh = dh @ w_hid[layer].T
    dh *= acts[0] > 0
    g_w_in = x.T @ dh
    g_b_in = dh.sum(axis=0)
    return (g_w_in, g_b_in, g_w_hid, g_b_hid, g_w_den, g_b_den,
            g_w_col, g_b_col, g_w_sem, g_b_sem, g_w_con, g_b_con)


def composite_fwd(sigma, rgb, sem, cont, ts, deltas):
    """Emission-absorption quadrature along rays.

    sigma/cont/ts/deltas are (R, N); rgb (R, N, 3); sem (R, N, C).
    Returns (weights, trans, color, depth, sem_logits, cont_value, weight_sum).
    """
    alpha = -np.expm1(-sigma * deltas)
    one_minus = 1.0 - alpha
    trans = np.cumprod(one_minus, axis=1)
    trans = np.concatenate([np.ones_like(trans[:, :1]), trans[:, :-1]], axis=1)
    weights = alpha * trans
    color = np.einsum("rn,rnc->rc", weights, rgb)
    depth = (weights * ts).sum(axis=1)
    sem_log = np.einsum("rn,rnc->rc", weights, sem)
    cont_v = (weights * cont).sum(axis=1)
    wsum = weights.sum(axis=1)
    return weights, trans, color, depth, sem_log, cont_v, wsum


def composite_bwd(sigma, deltas, weights, trans, rgb, sem, cont, ts,
                  d_color, d_depth, d_semlog, d_cont, d_wsum):
    """Gradients of composite_fwd w.r.t. per-sample sigma/rgb/sem/cont.

    Uses dw_k/dalpha_i = -w_k / (1 - alpha_i) for i < k, folded so no
    division appears: d_sigma_i = delta_i * (A_i T_i (1-alpha_i) - S_i)
    with A the per-sample weight gradient and S its strict suffix sum.
    """
    a = np.einsum("rc,rnc->rn", d_color, rgb)
    a += d_depth[:, None] * ts
    a += np.einsum("rc,rnc->rn", d_semlog, sem)
    a += d_cont[:, None] * cont
    a += d_wsum[:, None]
    aw = a * weights
    suffix = np.flip(np.cumsum(np.flip(aw, axis=1), axis=1), axis=1) - aw
    alpha = -np.expm1(-sigma * deltas)
    d_sigma = deltas * (a * trans * (1.0 - alpha) - suffix)
    d_rgb = weights[:, :, None] * d_color[:, None, :]
    d_sem = weights[:, :, None] * d_semlog[:, None, :]
    d_cont_s = weights * d_cont[:, None]
    return d_sigma, d_rgb, d_sem, d_cont_s


def raycast(origin, dirs, types, params, rot_lw, trans, table_h, t_min, t_max):
    """Nearest analytic hit of each ray against the primitive set + table.

    dirs is (P, 3) unit vectors. Returns (t, hit, normal): t is the ray
    distance (0 where no hit in [t_min, t_max]), hit is HIT_TABLE / HIT_NONE
    or the primitive row index, normal is the world-frame surface normal.
    """
    p = dirs.shape[0]
    best_t = np.full(p, np.inf)
    hit = np.full(p, HIT_NONE, dtype=np.int64)
    normal = np.zeros((p, 3))

    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_tab = (table_h - origin[2]) / dz
    ok = np.isfinite(t_tab) & (t_tab >= t_min) & (t_tab <= t_max)
    best_t[ok] = t_tab[ok]
    hit[ok] = HIT_TABLE
    normal[ok] = (0.0, 0.0, 1.0)

    for i in range(types.shape[0]):
        o_l = rot_lw[i] @ (origin - trans[i])
        d_l = dirs @ rot_lw[i].T
        if types[i] == PRIM_BOX:
            t_i, n_l = _box_hit(o_l, d_l, params[i])
        elif types[i] == PRIM_CYLINDER:
            t_i, n_l = _cylinder_hit(o_l, d_l, params[i, 0], params[i, 1])
        else:
            t_i, n_l = _sphere_hit(o_l, d_l, params[i, 0])
        closer = (t_i >= t_min) & (t_i <= t_max) & (t_i < best_t)
        best_t[closer] = t_i[closer]
        hit[closer] = i
        normal[closer] = n_l[closer] @ rot_lw[i]
    t_out = np.where(hit == HIT_NONE, 0.0, best_t)
    return t_out, hit, normal


def _box_hit(o, d, half):
    par = np.abs(d) <= 1e-12
    inv = 1.0 / np.where(par, 1.0, d)
    t1 = (-half - o) * inv
    t2 = (half - o) * inv
    tn = np.minimum(t1, t2)
    tf = np.maximum(t1, t2)
    # rays parallel to a slab axis: inside -> (-inf, inf), outside -> no hit
    inside = np.abs(o) <= half
    tn = np.where(par, np.where(inside, -np.inf, np.inf), tn)
    tf = np.where(par, np.where(inside, np.inf, -np.inf), tf)
    t_enter = tn.max(axis=1)
    axis = tn.argmax(axis=1)
    t_exit = tf.min(axis=1)
    valid = (t_enter <= t_exit) & (t_enter > 0) & np.isfinite(t_enter)
    t = np.where(valid, t_enter, np.inf)
    n = np.zeros_like(d)
    rows = np.arange(d.shape[0])
    n[rows, axis] = -np.sign(d[rows, axis])
    n[~valid] = 0.0
    return t, n


def _cylinder_hit(o, d, radius, half_h):
    p = d.shape[0]
    t = np.full(p, np.inf)
    n = np.zeros((p, 3))
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = o[0] * d[:, 0] + o[1] * d[:, 1]
    c = o[0] ** 2 + o[1] ** 2 - radius ** 2
    disc = b * b - a * c
    ok = (disc >= 0) & (a > 1e-14)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        for sign in (-1.0, 1.0):
            t_side = np.where(ok, (-b + sign * sq) / a, np.inf)
            z = o[2] + t_side * d[:, 2]
            good = ok & (t_side > 0) & (np.abs(z) <= half_h) & (t_side < t)
            t = np.where(good, t_side, t)
            x = o[0] + t * d[:, 0]
            y = o[1] + t * d[:, 1]
            n[good, 0] = x[good] / radius
            n[good, 1] = y[good] / radius
            n[good, 2] = 0.0
        for cap, nz in ((half_h, 1.0), (-half_h, -1.0)):
            t_cap = np.where(np.abs(d[:, 2]) > 1e-12, (cap - o[2]) / d[:, 2], np.inf)
            x = o[0] + t_cap * d[:, 0]
            y = o[1] + t_cap * d[:, 1]
            good = (t_cap > 0) & (x * x + y * y <= radius ** 2) & (t_cap < t)
            t = np.where(good, t_cap, t)
            n[good] = (0.0, 0.0, nz)
    return t, n


def _sphere_hit(o, d, radius):
    b = d @ o
    c = o @ o - radius ** 2
    disc = b * b - c
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t = np.where(ok, -b - sq, np.inf)
    t2 = np.where(ok, -b + sq, np.inf)
    t = np.where(t > 0, t, t2)
    t = np.where(t > 0, t, np.inf)
    pt = o + t[:, None] * d
    n = np.where(np.isfinite(t)[:, None], pt / radius, 0.0)
    return t, n


def stiction_grid(masses, pos_xy, q_grid, contact, push_dir, mu_g):
    """F(q) = mu*g*sum_i m_i*d(r_i,q) / |moment arm of push line about q|.

    q_grid is (Q, 2) candidate rotation centers; returns (Q,) forces with
    +inf where the push line passes (numerically) through the candidate.
    """
    rel = pos_xy[None, :, :] - q_grid[:, None, :]
    num = (masses[None, :] * np.sqrt((rel ** 2).sum(axis=2))).sum(axis=1)
    cq = contact[None, :] - q_grid
    arm = np.abs(cq[:, 0] * push_dir[1] - cq[:, 1] * push_dir[0])
    out = np.full(q_grid.shape[0], np.inf)
    ok = arm > 1e-9
    out[ok] = mu_g * num[ok] / arm[ok]
    return out
