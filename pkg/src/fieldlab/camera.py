"""Pinhole camera, orbit poses, and the ground-truth RGB-D ray caster.

Keyframes carry the rendered RGB-D image, the sparse label store the mapper
trains on, and hidden ground-truth maps (object / material / rigidity per
pixel) that only the evaluation code may read.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geom, imgio
from .backend import kernels
from .scene import Scene, TABLE_ID, NO_HIT_ID

LIGHT_DIR = np.array([0.30, 0.18, 0.92]) / np.linalg.norm([0.30, 0.18, 0.92])
AMBIENT = 0.25
BACKGROUND = np.array([0.05, 0.05, 0.08])

CAT = "cat"
CONT = "cont"


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    near: float
    far: float

    def __post_init__(self):
        if not (0 < self.near < self.far):
            raise ValueError("require 0 < near < far")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @classmethod
    def from_fov(cls, width, height, fov_x_deg, near=0.2, far=2.5):
        fx = width / (2.0 * np.tan(np.deg2rad(fov_x_deg) / 2.0))
        return cls(width, height, fx, fx, (width - 1) / 2.0, (height - 1) / 2.0,
                   near, far)


@dataclass
class Keyframe:
    pose: np.ndarray
    rgb: np.ndarray                  # (H, W, 3) float32
    depth: np.ndarray                # (H, W) float64, 0 = no reading
    truth_object: np.ndarray         # (H, W) int64, TABLE_ID table, sentinel none
    truth_material: np.ndarray
    truth_rigid: np.ndarray
    ray_origin: np.ndarray
    ray_dirs: np.ndarray             # (H, W, 3) float64, unit
    labels_cat: dict = field(default_factory=dict)   # (v, u) -> class
    labels_cont: dict = field(default_factory=dict)  # (v, u) -> value

    @property
    def shape(self):
        return self.depth.shape

    def add_label(self, u: int, v: int, channel: str, value) -> None:
        h, w = self.depth.shape
        if not (0 <= u < w and 0 <= v < h):
            raise ValueError(f"label pixel ({u}, {v}) out of bounds")
        if channel == CAT:
            self.labels_cat[(v, u)] = int(value)
        elif channel == CONT:
            self.labels_cont[(v, u)] = float(value)
        else:
            raise ValueError(f"unknown label channel {channel!r}")

    @property
    def labels(self):
        """All labels as (u, v, channel, value) tuples."""
        out = [(u, v, CAT, c) for (v, u), c in self.labels_cat.items()]
        out += [(u, v, CONT, x) for (v, u), x in self.labels_cont.items()]
        return out

    def label_count(self) -> int:
        return len(self.labels_cat) + len(self.labels_cont)


def pixel_ray(intr: CameraIntrinsics, pose: np.ndarray, u: float, v: float):
    """(origin, unit direction) of the ray through pixel (u, v)."""
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        raise ValueError(f"pixel ({u}, {v}) out of bounds")
    d = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
    d /= np.linalg.norm(d)
    return pose[:3, 3].copy(), pose[:3, :3] @ d


def pixel_ray_grid(intr: CameraIntrinsics, pose: np.ndarray):
    """(origin, (H, W, 3) unit directions) for the full image."""
    us = (np.arange(intr.width) - intr.cx) / intr.fx
    vs = (np.arange(intr.height) - intr.cy) / intr.fy
    gu, gv = np.meshgrid(us, vs)
    d = np.stack([gu, gv, np.ones_like(gu)], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return pose[:3, 3].copy(), d @ pose[:3, :3].T


def project(intr: CameraIntrinsics, pose: np.ndarray, pts: np.ndarray):
    """World points -> (u, v, z_cam). Points behind the camera get z <= 0."""
    pts = np.atleast_2d(pts)
    local = (pts - pose[:3, 3]) @ pose[:3, :3]
    z = local[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * local[:, 0] / z + intr.cx
        v = intr.fy * local[:, 1] / z + intr.cy
    return u, v, z


def orbit_poses(center, radius: float, elevation: float, count: int):
    """Poses on a circle looking at center; pose 0 is the canonical keyframe."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if radius <= 0:
        raise ValueError("radius must be positive")
    center = np.asarray(center, dtype=float)
    poses = []
    for k in range(count):
        a = np.pi + 2.0 * np.pi * k / count
        eye = center + radius * np.array([np.cos(a) * np.cos(elevation),
                                          np.sin(a) * np.cos(elevation),
                                          np.sin(elevation)])
        poses.append(geom.look_at(eye, center))
    return poses


def raycast_scene(scene: Scene, intr: CameraIntrinsics, pose: np.ndarray,
                  depth_noise: float = 0.0, rng: np.random.Generator | None = None) -> Keyframe:
    """Analytic ray cast of the scene into an RGB-D keyframe with truth maps."""
    origin, dirs = pixel_ray_grid(intr, pose)
    h, w = intr.height, intr.width
    flat = dirs.reshape(-1, 3)
    types, params, rot_lw, trans, albedo, material, rigid, ids = scene.packed()
    t, hit, normal = kernels().raycast(origin, flat, types, params, rot_lw, trans,
                                       scene.table_height, 1e-9, np.inf)
    in_range = (hit != NO_HIT_ID) & (t >= intr.near) & (t <= intr.far)
    t = np.where(in_range, t, 0.0)

    n_px = flat.shape[0]
    shade = AMBIENT + (1.0 - AMBIENT) * np.maximum(0.0, normal @ LIGHT_DIR)
    rgb = np.tile(BACKGROUND, (n_px, 1))
    obj_id = np.full(n_px, NO_HIT_ID, dtype=np.int64)
    mat = np.full(n_px, scene.table_material, dtype=np.int64)
    rig = np.ones(n_px, dtype=bool)
    on_table = in_range & (hit == TABLE_ID)
    rgb[on_table] = scene.table_albedo * shade[on_table, None]
    obj_id[on_table] = TABLE_ID
    on_obj = in_range & (hit >= 0)
    if on_obj.any():
        hi = hit[on_obj]
        rgb[on_obj] = albedo[hi] * shade[on_obj, None]
        obj_id[on_obj] = ids[hi]
        mat[on_obj] = material[hi]
        rig[on_obj] = rigid[hi]
    # anything beyond the reach sphere reports as table
    pts = origin + t[:, None] * flat
    beyond = in_range & (np.linalg.norm(pts - scene.reach_center, axis=1) > scene.reach_radius)
    obj_id[beyond] = TABLE_ID
    mat[beyond] = scene.table_material
    rig[beyond] = True

    depth = t.reshape(h, w)
    if depth_noise > 0.0:
        if rng is None:
            rng = np.random.default_rng(0)
        noisy = depth + rng.normal(0.0, depth_noise, depth.shape)
        depth = np.where(depth > 0, np.clip(noisy, intr.near, intr.far), 0.0)

    return Keyframe(
        pose=np.asarray(pose, dtype=float).copy(),
        rgb=rgb.reshape(h, w, 3).astype(np.float32),
        depth=depth,
        truth_object=obj_id.reshape(h, w).astype(np.int64),
        truth_material=mat.reshape(h, w).astype(np.int64),
        truth_rigid=rig.reshape(h, w).astype(bool),
        ray_origin=origin,
        ray_dirs=dirs,
    )


def save_keyframe(kf: Keyframe, stem: str) -> None:
    """Export as PPM color + 16-bit millimeter PGM depth + truth id PGM."""
    imgio.write_ppm(f"{stem}_rgb.ppm", kf.rgb)
    imgio.write_pgm16(f"{stem}_depth.pgm", kf.depth)
    imgio.write_pgm8(f"{stem}_truth_object.pgm", np.clip(kf.truth_object + 3, 0, 255))
