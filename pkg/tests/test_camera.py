"""Pinhole geometry, orbit poses, ground-truth raycasting, image I/O."""

import numpy as np
import pytest

from fieldlab import camera as cam
from fieldlab import imgio
from fieldlab.scene import TABLE_ID, build_scene, load_scene, point_properties
from paths import SCENES


def intr120():
    return cam.CameraIntrinsics.from_fov(120, 90, 55.0, near=0.15, far=2.5)


def scene1():
    return load_scene(SCENES / "scene1_material.json")


def canonical_pose():
    return cam.orbit_poses([0.0, 0.0, 0.03], 0.80, np.deg2rad(52.0), 8)[0]


# --- intrinsics & rays ----------------------------------------------------------

def test_intrinsics_validation():
    with pytest.raises(ValueError):
        cam.CameraIntrinsics(10, 10, 5, 5, 5, 5, near=1.0, far=0.5)
    with pytest.raises(ValueError):
        cam.CameraIntrinsics(10, 10, -5, 5, 5, 5, near=0.1, far=1.0)
    with pytest.raises(ValueError):
        cam.CameraIntrinsics(10, 10, 5, 5, 20, 5, near=0.1, far=1.0)


def test_principal_point_ray_is_forward():
    intr = intr120()
    pose = canonical_pose()
    origin, d = cam.pixel_ray(intr, pose, intr.cx, intr.cy)
    assert np.allclose(d, pose[:3, 2], atol=1e-12)
    assert abs(np.linalg.norm(d) - 1.0) < 1e-9


def test_out_of_bounds_pixel_rejected():
    intr = intr120()
    with pytest.raises(ValueError):
        cam.pixel_ray(intr, np.eye(4), 120, 0)


def test_projection_round_trip():
    intr = intr120()
    pose = canonical_pose()
    rng = np.random.default_rng(3)
    for _ in range(50):
        u = rng.uniform(0, intr.width - 1)
        v = rng.uniform(0, intr.height - 1)
        t = rng.uniform(intr.near + 1e-3, intr.far - 1e-3)
        o, d = cam.pixel_ray(intr, pose, u, v)
        uu, vv, z = cam.project(intr, pose, o + t * d)
        assert abs(uu[0] - u) < 1e-6 and abs(vv[0] - v) < 1e-6
        assert z[0] > 0


def test_corner_pixel_tan_angles():
    intr = intr120()
    o, d = cam.pixel_ray(intr, np.eye(4), 0, 0)
    # camera frame: direction proportional to (-cx/fx, -cy/fy, 1)
    assert d[0] / d[2] == pytest.approx(-intr.cx / intr.fx, rel=1e-12)
    assert d[1] / d[2] == pytest.approx(-intr.cy / intr.fy, rel=1e-12)


# --- orbit poses ----------------------------------------------------------------

def test_orbit_single_pose_minus_x():
    center = np.array([0.1, -0.2, 0.05])
    [pose] = cam.orbit_poses(center, 0.7, np.deg2rad(45), 1)
    assert pose[0, 3] < center[0]                      # offset along -x
    assert abs(pose[1, 3] - center[1]) < 1e-12
    fwd = pose[:3, 2]
    to_center = center - pose[:3, 3]
    assert np.linalg.norm(np.cross(fwd, to_center)) < 1e-9


def test_orbit_eight_poses_look_at_center():
    center = np.zeros(3)
    poses = cam.orbit_poses(center, 0.8, np.deg2rad(50), 8)
    assert len(poses) == 8
    angles = []
    for pose in poses:
        to_center = center - pose[:3, 3]
        residual = np.linalg.norm(np.cross(pose[:3, 2], to_center / np.linalg.norm(to_center)))
        assert residual < 1e-9
        angles.append(np.arctan2(pose[1, 3], pose[0, 3]))
    steps = np.diff(np.unwrap(angles))
    assert np.allclose(np.abs(steps), np.pi / 4, atol=1e-9)


def test_orbit_rejects_degenerate():
    with pytest.raises(ValueError):
        cam.orbit_poses([0, 0, 0], 0.0, 0.3, 4)
    with pytest.raises(ValueError):
        cam.orbit_poses([0, 0, 0], 1.0, np.deg2rad(90), 4)  # straight down look-at


# --- raycasting -----------------------------------------------------------------

def test_empty_scene_depth_is_plane_distance():
    scene = build_scene({"table": {"height": 0.0}})
    intr = intr120()
    pose = canonical_pose()
    kf = cam.raycast_scene(scene, intr, pose)
    origin, dirs = cam.pixel_ray_grid(intr, pose)
    expect = (scene.table_height - origin[2]) / dirs[..., 2]
    hit = kf.depth > 0
    assert hit.any()
    assert np.all(kf.truth_object[hit] == TABLE_ID)
    assert np.abs(kf.depth[hit] - expect[hit]).max() < 1e-9


def test_sphere_center_depth_closed_form():
    scene = build_scene({
        "table": {"height": 0.0},
        "objects": [{"id": 1, "shape": {"type": "sphere", "radius": 0.06},
                     "pose": {"position": [0, 0]}, "masses": 0.3}]})
    intr = intr120()
    pose = cam.orbit_poses([0.0, 0.0, 0.06], 0.7, np.deg2rad(40), 1)[0]
    from fieldlab.backend import kernels
    origin, d = cam.pixel_ray(intr, pose, intr.cx, intr.cy)  # exact axis ray
    types, params, rot_lw, trans, *_ = scene.packed()
    t, hit, _ = kernels().raycast(origin, d.reshape(1, 3), types, params,
                                  rot_lw, trans, 0.0, 1e-9, np.inf)
    dist = np.linalg.norm(pose[:3, 3] - np.array([0, 0, 0.06]))
    assert hit[0] == 0
    assert t[0] == pytest.approx(dist - 0.06, abs=1e-6)
    # grid pixel nearest the principal point agrees to sphere-curvature order
    kf = cam.raycast_scene(scene, intr, pose)
    assert kf.depth[int(intr.cy), int(intr.cx)] == pytest.approx(dist - 0.06, abs=5e-4)


# Frozen from tests/oracles.py supersampled_object_coverage (ss=4) on
# scene1_material from the canonical pose below: 1060.50 expected object px.
SCENE1_COVERAGE_REF = 1060.50


def test_scene1_hit_count_matches_supersampled_reference():
    kf = cam.raycast_scene(scene1(), intr120(), canonical_pose())
    count = int((kf.truth_object >= 0).sum())
    assert abs(count - SCENE1_COVERAGE_REF) / SCENE1_COVERAGE_REF < 0.01


def test_truth_maps_agree_with_point_properties():
    scene = scene1()
    intr = intr120()
    kf = cam.raycast_scene(scene, intr, canonical_pose())
    rng = np.random.default_rng(11)
    hit_px = np.argwhere(kf.depth > 0)
    for v, u in hit_px[rng.choice(len(hit_px), 200, replace=False)]:
        p = kf.ray_origin + kf.depth[v, u] * kf.ray_dirs[v, u]
        truth = point_properties(scene, p)
        assert truth.object_id == kf.truth_object[v, u]
        assert truth.material_id == kf.truth_material[v, u]
        assert truth.rigid == kf.truth_rigid[v, u]


def test_depth_in_range_or_zero():
    intr = intr120()
    kf = cam.raycast_scene(scene1(), intr, canonical_pose())
    d = kf.depth
    assert np.all((d == 0) | ((d >= intr.near) & (d <= intr.far)))


def test_raycast_deterministic_and_noise_seeded():
    scene = scene1()
    intr = intr120()
    pose = canonical_pose()
    a = cam.raycast_scene(scene, intr, pose)
    b = cam.raycast_scene(scene, intr, pose)
    assert np.array_equal(a.depth, b.depth)
    assert np.array_equal(a.rgb, b.rgb)
    n1 = cam.raycast_scene(scene, intr, pose, depth_noise=0.005,
                           rng=np.random.default_rng(5))
    n2 = cam.raycast_scene(scene, intr, pose, depth_noise=0.005,
                           rng=np.random.default_rng(5))
    assert np.array_equal(n1.depth, n2.depth)
    assert not np.array_equal(n1.depth, a.depth)


# --- labels ----------------------------------------------------------------------

def test_label_store_overwrites_categorical():
    kf = cam.raycast_scene(scene1(), intr120(), canonical_pose())
    kf.add_label(10, 10, cam.CAT, 2)
    kf.add_label(10, 10, cam.CAT, 3)
    assert kf.labels_cat[(10, 10)] == 3
    assert kf.label_count() == 1
    kf.add_label(20, 30, cam.CONT, 3.0)
    assert kf.label_count() == 2
    with pytest.raises(ValueError):
        kf.add_label(500, 0, cam.CAT, 1)
    with pytest.raises(ValueError):
        kf.add_label(1, 1, "weird", 1)


# --- image files -----------------------------------------------------------------

def test_ppm_pgm_round_trips(tmp_path):
    rng = np.random.default_rng(0)
    rgb = rng.random((12, 17, 3)).astype(np.float32)
    p = tmp_path / "x.ppm"
    imgio.write_ppm(p, rgb)
    back = imgio.read_ppm(p)
    assert back.shape == (12, 17, 3)
    assert np.abs(back.astype(float) / 255.0 - rgb).max() < 1.0 / 255.0

    depth = rng.uniform(0, 2.5, (12, 17))
    q = tmp_path / "d.pgm"
    imgio.write_pgm16(q, depth)
    back_d = imgio.read_pgm16(q)
    assert np.abs(back_d - depth).max() < 1e-3  # millimeter quantization

    ids = rng.integers(0, 200, (12, 17))
    r = tmp_path / "i.pgm"
    imgio.write_pgm8(r, ids)
    assert np.array_equal(imgio.read_pgm8(r), ids)
