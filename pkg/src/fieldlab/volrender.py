"""Differentiable volumetric rendering of every field channel.

Emission-absorption quadrature along camera rays composites density, color,
semantic logits and the continuous value into per-pixel maps; the semantic
distribution is softmaxed per pixel after compositing in logit space, and its
entropy is the exploration signal. Normal maps come from the rendered depth.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import backend
from .backend import kernels
from .camera import CameraIntrinsics, pixel_ray_grid
from .field import FieldParams, encode

W_MIN_NORMALS = 0.35   # weight_sum below this: geometry too thin for normals


@dataclass
class RaySamples:
    """Samples along one ray: strictly increasing depths + field outputs."""
    ts: np.ndarray
    deltas: np.ndarray
    sigma: np.ndarray
    rgb: np.ndarray
    sem: np.ndarray
    cont: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.ts) <= 0):
            raise ValueError("sample depths must be strictly increasing")
        if np.any(self.deltas <= 0):
            raise ValueError("deltas must be positive")


@dataclass
class CompositeResult:
    color: np.ndarray
    depth: float
    sem_logits: np.ndarray
    cont: float
    weight_sum: float
    weights: np.ndarray
    trans: np.ndarray


@dataclass
class RenderedMaps:
    color: np.ndarray       # (H, W, 3)
    depth: np.ndarray       # (H, W)
    sem_dist: np.ndarray    # (H, W, C)
    cont: np.ndarray        # (H, W)
    entropy: np.ndarray     # (H, W)
    normals: np.ndarray     # (H, W, 3) unit or zero
    weight_sum: np.ndarray  # (H, W)


def sample_ray(origin, direction, near: float, far: float, n: int,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """Stratified depths: one sample per bin; midpoints when rng is None."""
    if n < 2:
        raise ValueError("need at least two samples per ray")
    edges = np.linspace(near, far, n + 1)
    if rng is None:
        return 0.5 * (edges[:-1] + edges[1:])
    u = rng.random(n)
    return edges[:-1] + u * (edges[1:] - edges[:-1])


def sample_depths_batch(n_rays: int, n: int, near: float, far: float,
                        rng: np.random.Generator | None, dtype) -> np.ndarray:
    """(R, N) stratified depths (midpoints when rng is None)."""
    if n < 2:
        raise ValueError("need at least two samples per ray")
    width = (far - near) / n
    base = near + width * np.arange(n)
    if rng is None:
        ts = np.broadcast_to(base + 0.5 * width, (n_rays, n)).copy()
    else:
        ts = base + width * rng.random((n_rays, n))
    return ts.astype(dtype)


def deltas_from_ts(ts: np.ndarray, far: float) -> np.ndarray:
    """delta_i = t_{i+1} - t_i, with the last bin closed by the far plane."""
    d = np.empty_like(ts)
    d[..., :-1] = np.diff(ts, axis=-1)
    d[..., -1] = np.maximum(far - ts[..., -1], 1e-6)
    return d


def composite(samples: RaySamples) -> CompositeResult:
    """Quadrature for a single ray (see composite_batch for the math)."""
    w, tr, color, depth, sem_log, cont, wsum = kernels().composite_fwd(
        samples.sigma[None], samples.rgb[None], samples.sem[None],
        samples.cont[None], samples.ts[None], samples.deltas[None])
    return CompositeResult(color[0], float(depth[0]), sem_log[0], float(cont[0]),
                           float(wsum[0]), w[0], tr[0])


def composite_batch(sigma, rgb, sem, cont, ts, deltas):
    if not np.all(np.isfinite(sigma)):
        raise ValueError("non-finite density in composite")
    return kernels().composite_fwd(sigma, rgb, sem, cont, ts, deltas)


def composite_backward(sigma, deltas, weights, trans, rgb, sem, cont, ts,
                       d_color, d_depth, d_semlog, d_cont, d_wsum=None):
    """Exact gradients of the quadrature w.r.t. per-sample field outputs."""
    if d_wsum is None:
        d_wsum = np.zeros_like(d_depth)
    return kernels().composite_bwd(sigma, deltas, weights, trans, rgb, sem, cont,
                                   ts, d_color, d_depth, d_semlog, d_cont, d_wsum)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def entropy(dist) -> float:
    """Shannon entropy (natural log) of a categorical distribution."""
    p = np.asarray(dist, dtype=float)
    if np.any(p < -1e-9):
        raise ValueError("negative probability component")
    p = np.clip(p, 0.0, None)
    s = p.sum()
    if s <= 0:
        raise ValueError("distribution sums to zero")
    p = p / s
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz])).sum())


def entropy_map(sem_dist: np.ndarray) -> np.ndarray:
    p = np.clip(sem_dist, 0.0, None)
    p = p / np.maximum(p.sum(axis=-1, keepdims=True), 1e-30)
    terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=-1)


def render_maps(params: FieldParams, intr: CameraIntrinsics, pose: np.ndarray,
                n_samples: int = 32, seed: int | None = None,
                chunk_rays: int = 512) -> RenderedMaps:
    """Full-frame composite of every channel.

    seed=None renders at deterministic bin midpoints (the default for
    exploration and evaluation); an integer seed gives stratified samples.
    Chunk boundaries are fixed, so multi-threaded rendering (FIELDLAB_THREADS)
    is bit-identical to serial.
    """
    h, w = intr.height, intr.width
    n_px = h * w
    dt = params.dtype
    origin64, dirs64 = pixel_ray_grid(intr, pose)
    dirs = dirs64.reshape(-1, 3).astype(dt)
    origin = origin64.astype(dt)
    c = params.hyper.classes

    color = np.empty((n_px, 3), dt)
    depth = np.empty(n_px, dt)
    semlog = np.empty((n_px, c), dt)
    cont = np.empty(n_px, dt)
    wsum = np.empty(n_px, dt)

    rng = None if seed is None else np.random.default_rng(seed)
    starts = range(0, n_px, chunk_rays)
    ts_all = sample_depths_batch(n_px, n_samples, intr.near, intr.far, rng, dt)

    def do_chunk(s):
        e = min(s + chunk_rays, n_px)
        ts = ts_all[s:e]
        deltas = deltas_from_ts(ts, intr.far)
        pts = origin + ts[:, :, None] * dirs[s:e, None, :]
        x, _ = encode(params, pts.reshape(-1, 3))
        v = params.values
        _, sg, rg, sm, ct = kernels().mlp_forward(
            x, v["w_in"], v["b_in"], v["w_hid"], v["b_hid"], v["w_den"], v["b_den"],
            v["w_col"], v["b_col"], v["w_sem"], v["b_sem"], v["w_con"], v["b_con"],
            False)
        r = e - s
        _, _, col, dep, sl, cv, ws = kernels().composite_fwd(
            sg.reshape(r, n_samples), rg.reshape(r, n_samples, 3),
            sm.reshape(r, n_samples, c), ct.reshape(r, n_samples), ts, deltas)
        color[s:e] = col
        depth[s:e] = dep
        semlog[s:e] = sl
        cont[s:e] = cv
        wsum[s:e] = ws

    params.check_finite()
    threads = backend.render_threads()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(do_chunk, starts))
    else:
        for s in starts:
            do_chunk(s)

    sem_dist = softmax(semlog.astype(np.float64)).reshape(h, w, c)
    depth = depth.astype(np.float64).reshape(h, w)
    weight_sum = np.clip(wsum.astype(np.float64), 0.0, 1.0).reshape(h, w)
    normals = normals_from_depth(depth, origin64, dirs64, weight_sum)
    return RenderedMaps(
        color=np.clip(color.astype(np.float64), 0.0, 1.0).reshape(h, w, 3),
        depth=depth,
        sem_dist=sem_dist,
        cont=cont.astype(np.float64).reshape(h, w),
        entropy=entropy_map(sem_dist),
        normals=normals,
        weight_sum=weight_sum,
    )


def normals_from_depth(depth: np.ndarray, origin: np.ndarray, dirs: np.ndarray,
                       weight_sum: np.ndarray, w_min: float = W_MIN_NORMALS) -> np.ndarray:
    """World-frame normals from back-projected central differences.

    The rendered depth is box-smoothed (3x3) first; the quadrature leaves
    sub-centimeter ripple that would otherwise dominate the differences.
    Zero where the surface is unreliable (low weight_sum), at image borders,
    or where a neighbour is unreliable.
    """
    sm = depth.copy()
    sm[1:-1, 1:-1] = sum(depth[1 + a:depth.shape[0] - 1 + a,
                               1 + b:depth.shape[1] - 1 + b]
                         for a in (-1, 0, 1) for b in (-1, 0, 1)) / 9.0
    pts = origin + sm[..., None] * dirs
    du = np.zeros_like(pts)
    dv = np.zeros_like(pts)
    du[:, 1:-1] = pts[:, 2:] - pts[:, :-2]
    dv[1:-1, :] = pts[2:, :] - pts[:-2, :]
    n = np.cross(du, dv)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore"):
        n = np.where(norm > 1e-12, n / norm, 0.0)
    # orient toward the camera
    to_cam = origin - pts
    flip = (n * to_cam).sum(axis=-1) < 0
    n[flip] *= -1.0
    # average the normal field over 3x3 and renormalize: kills residual ripple
    acc = n.copy()
    acc[1:-1, 1:-1] = sum(n[1 + a:n.shape[0] - 1 + a, 1 + b:n.shape[1] - 1 + b]
                          for a in (-1, 0, 1) for b in (-1, 0, 1)) / 9.0
    norm = np.linalg.norm(acc, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore"):
        n = np.where(norm > 1e-12, acc / norm, 0.0)
    ok = weight_sum >= w_min
    good = ok.copy()
    good[:, 1:-1] &= ok[:, 2:] & ok[:, :-2]
    good[1:-1, :] &= ok[2:, :] & ok[:-2, :]
    good[:, [0, -1]] = False
    good[[0, -1], :] = False
    n[~good] = 0.0
    return n


def colorize_entropy(entropy_img: np.ndarray, max_entropy: float) -> np.ndarray:
    """Red = high uncertainty, blue = low, white ramp between."""
    t = np.clip(entropy_img / max(max_entropy, 1e-12), 0.0, 1.0)[..., None]
    blue = np.array([0.15, 0.25, 0.85])
    white = np.array([0.95, 0.95, 0.95])
    red = np.array([0.85, 0.15, 0.10])
    lo = blue + (white - blue) * np.clip(t * 2.0, 0, 1)
    hi = white + (red - white) * np.clip(t * 2.0 - 1.0, 0, 1)
    return np.where(t < 0.5, lo, hi)


def save_maps(maps: RenderedMaps, stem: str, max_entropy: float) -> None:
    """PPM/PGM image set + raw float32 planes."""
    from . import imgio
    imgio.write_ppm(f"{stem}_color.ppm", maps.color)
    imgio.write_pgm16(f"{stem}_depth.pgm", maps.depth)
    imgio.write_ppm(f"{stem}_entropy.ppm", colorize_entropy(maps.entropy, max_entropy))
    imgio.write_ppm(f"{stem}_normals.ppm", 0.5 * (maps.normals + 1.0))
    imgio.write_pgm8(f"{stem}_argmax.pgm", maps.sem_dist.argmax(axis=-1))
    np.savez_compressed(f"{stem}_planes.npz",
                        color=maps.color.astype(np.float32),
                        depth=maps.depth.astype(np.float32),
                        sem_dist=maps.sem_dist.astype(np.float32),
                        cont=maps.cont.astype(np.float32),
                        entropy=maps.entropy.astype(np.float32),
                        normals=maps.normals.astype(np.float32),
                        weight_sum=maps.weight_sum.astype(np.float32))
