"""Small rigid-transform and 2D footprint helpers shared across modules.

World frame convention: z up, table plane at z = table_height. Camera poses
are 4x4 camera-to-world matrices with the camera looking along +z, x right,
y down (OpenCV style).
"""

from __future__ import annotations

import numpy as np


def rot_z(yaw: float) -> np.ndarray:
    """3x3 rotation about the world z axis."""
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot2d(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def pose_matrix(rotation: np.ndarray, translation: np.ndarray) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = rotation
    m[:3, 3] = translation
    return m


def transform_points(pose: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Apply a 4x4 transform to an (..., 3) array of points."""
    return pts @ pose[:3, :3].T + pose[:3, 3]


def look_at(eye: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world pose looking from eye toward target (z forward, y down).

    Raises ValueError for a degenerate pair (eye == target or forward
    parallel to up, e.g. looking straight down).
    """
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    norm = np.linalg.norm(fwd)
    if norm < 1e-12:
        raise ValueError("look_at: eye coincides with target")
    fwd = fwd / norm
    right = np.cross(fwd, np.asarray(up, dtype=float))
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-9:
        raise ValueError("look_at: forward axis parallel to up vector")
    right = right / rnorm
    down = np.cross(fwd, right)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = down
    pose[:3, 2] = fwd
    pose[:3, 3] = eye
    return pose


def yaw_of(rotation: np.ndarray) -> float:
    """Yaw angle of a rotation that keeps the object z axis vertical."""
    return float(np.arctan2(rotation[1, 0], rotation[0, 0]))


def is_upright(rotation: np.ndarray, tol: float = 1e-8) -> bool:
    """True if the rotation maps the local z axis onto world +z."""
    return bool(abs(rotation[2, 2] - 1.0) < tol
                and abs(rotation[0, 2]) < tol and abs(rotation[1, 2]) < tol)


# --- 2D footprint tests (all in the table plane) ---

def rect_sdf(p_local: np.ndarray, half_x: float, half_y: float) -> float:
    """Signed distance from a 2D point (rect frame) to an axis-aligned rect."""
    dx = abs(p_local[0]) - half_x
    dy = abs(p_local[1]) - half_y
    outside = np.hypot(max(dx, 0.0), max(dy, 0.0))
    inside = min(max(dx, dy), 0.0)
    return float(outside + inside)


def circle_sdf(p_local: np.ndarray, radius: float) -> float:
    return float(np.hypot(p_local[0], p_local[1]) - radius)


def rects_overlap(c0, yaw0, h0, c1, yaw1, h1, margin: float = 0.0) -> bool:
    """Separating-axis test for two oriented rectangles (centers, yaws, half-extents)."""
    axes = []
    for yaw in (yaw0, yaw1):
        r = rot2d(yaw)
        axes.append(r[:, 0])
        axes.append(r[:, 1])
    d = np.asarray(c1, dtype=float) - np.asarray(c0, dtype=float)
    r0 = rot2d(yaw0)
    r1 = rot2d(yaw1)
    for axis in axes:
        proj0 = abs(r0[:, 0] @ axis) * h0[0] + abs(r0[:, 1] @ axis) * h0[1]
        proj1 = abs(r1[:, 0] @ axis) * h1[0] + abs(r1[:, 1] @ axis) * h1[1]
        if abs(d @ axis) > proj0 + proj1 + margin:
            return False
    return True


def rect_circle_overlap(rc, yaw, half, cc, radius, margin: float = 0.0) -> bool:
    """Oriented rect vs circle overlap in 2D."""
    rel = rot2d(-yaw) @ (np.asarray(cc, dtype=float) - np.asarray(rc, dtype=float))
    return rect_sdf(rel, half[0], half[1]) <= radius + margin


def circles_overlap(c0, r0, c1, r1, margin: float = 0.0) -> bool:
    return float(np.hypot(*(np.asarray(c1) - np.asarray(c0)))) <= r0 + r1 + margin
