"""Independent reference implementations used only by the tests.

Everything here is deliberately written from scratch (plain numpy, no calls
into fieldlab.kernels) so the production paths are checked against a second
route: a fine-grid brute-force stiction solver, central finite differences,
and a supersampling ray caster built on its own intersection code.
"""

from __future__ import annotations

import numpy as np


# --- stiction: brute force over rotation centers -------------------------------

def brute_stiction(masses, pos_xy, contact, push_dir, mu, g,
                   grid_center, grid_half, grid_n=401, cof_eps=0.002):
    """Minimum push force via exhaustive rotation-center search.

    grid_center/grid_half describe the candidate region (object-aligned axes
    are the caller's responsibility; pass world-axis values for axis-aligned
    objects). Returns the min over grid candidates and, when the push line
    passes within cof_eps of the center of friction, the translation force.
    """
    masses = np.asarray(masses, float)
    pos_xy = np.asarray(pos_xy, float)
    contact = np.asarray(contact, float)
    d = np.asarray(push_dir, float)
    d = d / np.linalg.norm(d)
    cof = (masses[:, None] * pos_xy).sum(0) / masses.sum()
    rel = cof - contact
    best = np.inf
    if abs(rel[0] * d[1] - rel[1] * d[0]) <= cof_eps:
        best = mu * g * masses.sum()
    xs = np.linspace(grid_center[0] - grid_half[0], grid_center[0] + grid_half[0], grid_n)
    ys = np.linspace(grid_center[1] - grid_half[1], grid_center[1] + grid_half[1], grid_n)
    for x in xs:
        dxs = pos_xy[:, 0] - x
        cqx = contact[0] - x
        for y in ys:
            arm = abs(cqx * d[1] - (contact[1] - y) * d[0])
            if arm <= 1e-9:
                continue
            torque = (masses * np.hypot(dxs, pos_xy[:, 1] - y)).sum()
            f = mu * g * torque / arm
            if f < best:
                best = f
    return best


def heavy_end_box_supports(length=0.3, width=0.1, heavy_mass=5.0,
                           uniform_mass=0.5, heavy_x=0.12, grid=5):
    """Support masses (m, x, y) for the heavy-end benchmark box, object frame."""
    hx, hy = length / 2.0, width / 2.0
    xs = np.linspace(-hx, hx, grid + 2)[1:-1]
    ys = np.linspace(-hy, hy, grid + 2)[1:-1]
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    rows = [(uniform_mass / gx.size, x, y) for x, y in zip(gx.ravel(), gy.ravel())]
    rows.append((heavy_mass, heavy_x, 0.0))
    return np.array(rows)


def heavy_end_profile(positions, push_from_y, mu=0.204, g=9.81,
                      grid_n=401, **box_kw):
    """Oracle force profile: lateral +y pushes at given x positions."""
    sup = heavy_end_box_supports(**box_kw)
    masses, pos_xy = sup[:, 0], sup[:, 1:3]
    length = box_kw.get("length", 0.3)
    width = box_kw.get("width", 0.1)
    half = np.array([length, width])  # 2x the footprint bbox half extents
    out = []
    for x in positions:
        contact = np.array([x, push_from_y])
        f = brute_stiction(masses, pos_xy, contact, (0.0, 1.0), mu, g,
                           grid_center=(0.0, 0.0), grid_half=half, grid_n=grid_n)
        out.append(f)
    return np.array(out)


# --- finite differences ----------------------------------------------------------

def central_diff(fn, arr, indices, eps):
    """Central finite differences of scalar fn w.r.t. arr at the given indices."""
    out = []
    for ij in indices:
        old = arr[ij]
        arr[ij] = old + eps
        lp = fn()
        arr[ij] = old - eps
        lm = fn()
        arr[ij] = old
        out.append((lp - lm) / (2.0 * eps))
    return np.array(out)


def rel_err(a, b, floor=1e-7):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


# --- independent ray caster for the supersampled reference render ---------------

def _ray_box(o, d, half):
    t_near, t_far = -np.inf, np.inf
    for a in range(3):
        if abs(d[a]) < 1e-12:
            if abs(o[a]) > half[a]:
                return np.inf
            continue
        t1, t2 = (-half[a] - o[a]) / d[a], (half[a] - o[a]) / d[a]
        if t1 > t2:
            t1, t2 = t2, t1
        t_near, t_far = max(t_near, t1), min(t_far, t2)
    return t_near if 0 < t_near <= t_far else np.inf


def _ray_cylinder(o, d, r, hh):
    best = np.inf
    a = d[0] ** 2 + d[1] ** 2
    if a > 1e-14:
        b = o[0] * d[0] + o[1] * d[1]
        c = o[0] ** 2 + o[1] ** 2 - r * r
        disc = b * b - a * c
        if disc >= 0:
            for s in (-1.0, 1.0):
                t = (-b + s * np.sqrt(disc)) / a
                if 0 < t < best and abs(o[2] + t * d[2]) <= hh:
                    best = t
    if abs(d[2]) > 1e-12:
        for cap in (hh, -hh):
            t = (cap - o[2]) / d[2]
            if 0 < t < best and (o[0] + t * d[0]) ** 2 + (o[1] + t * d[1]) ** 2 <= r * r:
                best = t
    return best


def _ray_sphere(o, d, r):
    b = o @ d
    c = o @ o - r * r
    disc = b * b - c
    if disc < 0:
        return np.inf
    t = -b - np.sqrt(disc)
    if t <= 0:
        t = -b + np.sqrt(disc)
    return t if t > 0 else np.inf


def supersampled_object_coverage(scene, intr, pose, ss=4):
    """Expected number of object-hit pixels from a ss x ss supersampled cast.

    Counts, per pixel, the fraction of sub-rays whose nearest hit is an object
    (not table/none) and sums these fractions. Uses its own intersection code.
    """
    r = pose[:3, :3]
    origin = pose[:3, 3]
    total = 0.0
    offs = (np.arange(ss) + 0.5) / ss - 0.5
    for v in range(intr.height):
        for u in range(intr.width):
            frac = 0
            for ov in offs:
                for ou in offs:
                    dc = np.array([(u + ou - intr.cx) / intr.fx,
                                   (v + ov - intr.cy) / intr.fy, 1.0])
                    d = r @ (dc / np.linalg.norm(dc))
                    best, is_obj = np.inf, False
                    if abs(d[2]) > 1e-15:
                        tt = (scene.table_height - origin[2]) / d[2]
                        if intr.near <= tt <= intr.far:
                            best, is_obj = tt, False
                    for obj in scene.objects:
                        ol = obj.rotation.T @ (origin - obj.translation)
                        dl = obj.rotation.T @ d
                        if obj.shape == "box":
                            t = _ray_box(ol, dl, obj.size)
                        elif obj.shape == "cylinder":
                            t = _ray_cylinder(ol, dl, obj.size[0], obj.size[1])
                        else:
                            t = _ray_sphere(ol, dl, obj.size[0])
                        if intr.near <= t <= intr.far and t < best:
                            best, is_obj = t, True
                    if is_obj:
                        frac += 1
            total += frac / (ss * ss)
    return total
