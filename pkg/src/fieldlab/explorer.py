"""Entropy-guided query selection under feasibility masking.

The processed entropy map (clipped above a threshold, or Gaussian filtered)
is maximized over the AND of per-pixel feasibility planes: reachability,
normal compatibility with the interaction mode, curvature (spectrometer
only), and a persistent history of past or failed queries that prevents
repeat testing. Everything works on rendered maps, never on ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraIntrinsics, Keyframe, pixel_ray_grid
from .volrender import RenderedMaps

POKE = "poke"
SPECTRO = "spectro"
PUSH = "push"

POKE_MAX_ANGLE_DEG = 25.0     # top-down modes: normal within this of +z
PUSH_MIN_ANGLE_DEG = 65.0     # lateral mode: normal at least this far from +-z
CURVATURE_WINDOW = 5          # px
CURVATURE_MAX_DEG = 15.0
HISTORY_RADIUS_PX = 4         # at 120 px width, scaled with resolution
MIN_ENTROPY_FRAC = 0.05       # exploration-complete threshold, fraction of ln C
W_GEOMETRY = 0.35             # weight_sum below this: no reliable surface
REFERENCE_WIDTH = 640         # kernel sizes are quoted at this image width


@dataclass
class Query:
    u: int
    v: int
    point3d: np.ndarray
    normal: np.ndarray
    mode: str
    push_dir: np.ndarray | None
    score: float


@dataclass
class QueryHistory:
    """Persistent query mask; pixels only ever get blocked, never released."""
    height: int
    width: int
    radius_px: int = HISTORY_RADIUS_PX
    blocked: np.ndarray = None
    records: list = field(default_factory=list)

    def __post_init__(self):
        if self.blocked is None:
            self.blocked = np.zeros((self.height, self.width), dtype=bool)

    def mark(self, u: int, v: int) -> None:
        r = self.radius_px
        ys, xs = np.ogrid[:self.height, :self.width]
        disk = (xs - u) ** 2 + (ys - v) ** 2 <= r * r
        self.blocked |= disk
        self.records.append((u, v))


@dataclass
class FeasibilityMask:
    reach: np.ndarray
    normal_ok: np.ndarray
    curvature_ok: np.ndarray
    table: np.ndarray
    history: np.ndarray

    @property
    def combined(self) -> np.ndarray:
        return (self.reach & self.normal_ok & self.curvature_ok
                & self.table & self.history)


def history_radius_for(width: int) -> int:
    return max(2, round(HISTORY_RADIUS_PX * width / 120))


def scaled_kernel(kernel_px: int, width: int) -> int:
    """Rescale a kernel quoted at the reference width; nearest odd, at least 7."""
    k = kernel_px * width / REFERENCE_WIDTH
    return max(7, 2 * round((k - 1) / 2) + 1)


def process_entropy(entropy: np.ndarray, max_entropy: float, method: str = "clip",
                    clip_thresh: float = 0.7, kernel_px: int = 41,
                    image_width: int | None = None) -> np.ndarray:
    """Boundary-suppression preprocessing of the uncertainty map.

    clip: values above clip_thresh * max_entropy set to zero; max_entropy is
    ln(C), so the threshold transfers across class counts. gaussian:
    normalized blur, kernel rescaled from the 640-wide reference resolution.
    """
    if method == "clip":
        out = entropy.copy()
        out[out > clip_thresh * max_entropy] = 0.0
        return out
    if method == "gaussian":
        if kernel_px < 3 or kernel_px % 2 == 0:
            raise ValueError("gaussian kernel must be odd and >= 3")
        width = image_width if image_width is not None else entropy.shape[1]
        k = scaled_kernel(kernel_px, width)
        sigma = k / 6.0
        xs = np.arange(k) - k // 2
        g = np.exp(-0.5 * (xs / sigma) ** 2)
        g /= g.sum()
        pad = k // 2
        padded = np.pad(entropy, pad, mode="symmetric")
        tmp = np.apply_along_axis(lambda r: np.convolve(r, g, mode="valid"), 1, padded)
        out = np.apply_along_axis(lambda col: np.convolve(col, g, mode="valid"), 0, tmp)
        return out
    raise ValueError(f"unknown entropy processing method {method!r}")


def build_mask(maps: RenderedMaps, intr: CameraIntrinsics, pose: np.ndarray,
               reach_center, reach_radius: float, mode: str,
               history: QueryHistory) -> FeasibilityMask:
    """Per-pixel feasibility for one interaction mode, from rendered maps only."""
    origin, dirs = pixel_ray_grid(intr, pose)
    pts = origin + maps.depth[..., None] * dirs
    solid = maps.weight_sum >= W_GEOMETRY
    reach = solid & (np.linalg.norm(pts - np.asarray(reach_center, float), axis=-1)
                     <= reach_radius)

    n = maps.normals
    valid_n = np.linalg.norm(n, axis=-1) > 0.5
    nz = n[..., 2]
    if mode in (POKE, SPECTRO):
        normal_ok = valid_n & (nz >= np.cos(np.deg2rad(POKE_MAX_ANGLE_DEG)))
    elif mode == PUSH:
        normal_ok = valid_n & (np.abs(nz) <= np.cos(np.deg2rad(PUSH_MIN_ANGLE_DEG)))
    else:
        raise ValueError(f"unknown interaction mode {mode!r}")

    if mode == SPECTRO:
        curvature_ok = _curvature_plane(n, valid_n)
    else:
        curvature_ok = np.ones_like(valid_n)

    table = np.ones_like(valid_n)   # table pixels stay queryable; history governs repeats
    return FeasibilityMask(reach=reach, normal_ok=normal_ok,
                           curvature_ok=curvature_ok, table=table,
                           history=~history.blocked)


def _curvature_plane(normals: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """True where normals vary by <= CURVATURE_MAX_DEG over the local window."""
    h, w, _ = normals.shape
    half = CURVATURE_WINDOW // 2
    cos_min = np.cos(np.deg2rad(CURVATURE_MAX_DEG))
    ok = np.ones((h, w), dtype=bool)
    min_dot = np.full((h, w), np.inf)
    all_valid = valid.copy()
    for dy in range(-half, half + 1):
        for dx in range(-half, half + 1):
            shifted = np.roll(np.roll(normals, dy, axis=0), dx, axis=1)
            sh_valid = np.roll(np.roll(valid, dy, axis=0), dx, axis=1)
            dot = (normals * shifted).sum(axis=-1)
            min_dot = np.minimum(min_dot, dot)
            all_valid &= sh_valid
    ok = all_valid & (min_dot >= cos_min)
    ok[:half, :] = False
    ok[-half:, :] = False
    ok[:, :half] = False
    ok[:, -half:] = False
    return ok


def _query_at(maps: RenderedMaps, intr: CameraIntrinsics, pose: np.ndarray,
              u: int, v: int, mode: str, score: float) -> Query:
    origin, dirs = pixel_ray_grid(intr, pose)
    point = origin + maps.depth[v, u] * dirs[v, u]
    normal = maps.normals[v, u].copy()
    push_dir = None
    if mode == PUSH:
        horiz = -normal[:2]
        nrm = np.linalg.norm(horiz)
        if nrm < 1e-9:
            raise ValueError("push query with vertical normal")
        push_dir = horiz / nrm
    return Query(u=int(u), v=int(v), point3d=point, normal=normal,
                 mode=mode, push_dir=push_dir, score=float(score))


def select_query(processed: np.ndarray, mask: FeasibilityMask, maps: RenderedMaps,
                 intr: CameraIntrinsics, pose: np.ndarray, mode: str,
                 min_frac: float = MIN_ENTROPY_FRAC) -> Query | None:
    """Argmax of processed entropy over the combined mask.

    Row-major first index wins ties. None means exploration is complete:
    empty mask or max below min_frac * ln(C).
    """
    combined = mask.combined
    if not combined.any():
        return None
    scores = np.where(combined, processed, -np.inf)
    flat = int(np.argmax(scores))
    v, u = np.unravel_index(flat, scores.shape)
    eps = min_frac * np.log(maps.sem_dist.shape[-1])
    if scores[v, u] < eps:
        return None
    assert combined[v, u], "selected a masked pixel"
    return _query_at(maps, intr, pose, u, v, mode, scores[v, u])


def random_query(mask: FeasibilityMask, maps: RenderedMaps, intr: CameraIntrinsics,
                 pose: np.ndarray, mode: str, rng: np.random.Generator) -> Query | None:
    """Uniform draw over unmasked pixels (the ablation baseline)."""
    combined = mask.combined
    open_px = np.argwhere(combined)
    if len(open_px) == 0:
        return None
    v, u = open_px[rng.integers(0, len(open_px))]
    assert combined[v, u]
    return _query_at(maps, intr, pose, int(u), int(v), mode, 0.0)


def auto_table_pixels(kf: Keyframe, reach_center, reach_radius: float,
                      count: int, rng: np.random.Generator,
                      plane_tol: float = 0.005,
                      table_height: float = 0.0) -> list[tuple[int, int]]:
    """Free 'table' label pixels: on the table plane, or beyond reach.

    Uses the keyframe's sensor depth (plane fitting on an RGB-D image needs
    no interaction), picking an even spread deterministically per seed.
    """
    pts = kf.ray_origin + kf.depth[..., None] * kf.ray_dirs
    hit = kf.depth > 0
    on_plane = hit & (np.abs(pts[..., 2] - table_height) <= plane_tol)
    beyond = hit & (np.linalg.norm(pts - np.asarray(reach_center, float), axis=-1)
                    > reach_radius)
    cand = np.argwhere(on_plane | beyond)
    if len(cand) == 0:
        return []
    k = min(count, len(cand))
    idx = rng.choice(len(cand), size=k, replace=False)
    return [(int(u), int(v)) for v, u in cand[np.sort(idx)]]


def save_query_overlay(path, rgb: np.ndarray, u: int, v: int, filled: bool) -> None:
    """Marker overlay matching the pre-(unfilled)/post-(filled) convention."""
    from . import imgio
    img = np.asarray(rgb, dtype=float).copy()
    h, w, _ = img.shape
    ys, xs = np.ogrid[:h, :w]
    d2 = (xs - u) ** 2 + (ys - v) ** 2
    ring = (d2 <= 16) & (d2 >= 9)
    img[ring] = [1.0, 1.0, 0.1]
    if filled:
        img[d2 <= 9] = [1.0, 0.2, 0.1]
    imgio.write_ppm(path, img)
