"""Scene construction, surface oracle, and stiction mechanics."""

import numpy as np
import pytest

import fieldlab.scene as sc
from fieldlab import geom

from oracles import brute_stiction, heavy_end_profile


def cylinders_config(mu=0.204):
    return {
        "table": {"height": 0.0},
        "reach": {"center": [0, 0, 0], "radius": 0.6},
        "materials": ["table", "plastic"],
        "objects": [
            {"id": 1, "shape": {"type": "cylinder", "radius": 0.04, "height": 0.12},
             "pose": {"position": [-0.2, 0.0]}, "material": 1, "masses": 0.5, "mu": mu},
            {"id": 2, "shape": {"type": "cylinder", "radius": 0.04, "height": 0.12},
             "pose": {"position": [0.0, 0.0]}, "material": 1, "masses": 1.5, "mu": mu},
            {"id": 3, "shape": {"type": "cylinder", "radius": 0.04, "height": 0.12},
             "pose": {"position": [0.2, 0.0]}, "material": 1, "masses": 0.1, "mu": mu},
        ],
    }


def heavy_box_config():
    return {
        "table": {"height": 0.0},
        "reach": {"center": [0, 0, 0], "radius": 0.6},
        "materials": ["table", "wood"],
        "objects": [{"id": 7, "shape": {"type": "box", "half_extents": [0.15, 0.05, 0.04]},
                     "pose": {"position": [0.0, 0.0]}, "material": 1,
                     "masses": {"uniform": 0.5, "points": [[5.0, [0.12, 0.0, -0.04]]]},
                     "mu": 0.204}],
    }


# --- construction ---------------------------------------------------------------

def test_build_three_cylinders():
    scene = sc.build_scene(cylinders_config())
    assert len(scene.objects) == 3
    assert [o.total_mass for o in scene.objects] == pytest.approx([0.5, 1.5, 0.1])
    for o in scene.objects:
        assert abs(o.translation[2] - o.half_height) < 1e-9  # seated on the table


def test_build_empty_scene():
    scene = sc.build_scene({"table": {"height": 0.0}})
    assert scene.objects == []


def test_overlap_rejected_with_id():
    cfg = {"objects": [
        {"id": 4, "shape": {"type": "box", "half_extents": [0.05, 0.05, 0.05]},
         "pose": {"position": [0, 0]}, "masses": 1.0},
        {"id": 5, "shape": {"type": "box", "half_extents": [0.05, 0.05, 0.05]},
         "pose": {"position": [0, 0]}, "masses": 1.0}]}
    with pytest.raises(sc.SceneError, match="4 and 5"):
        sc.build_scene(cfg)


def test_bad_dimension_and_shape():
    bad = {"objects": [{"id": 9, "shape": {"type": "sphere", "radius": -0.1}, "masses": 1.0}]}
    with pytest.raises(sc.SceneError, match="9"):
        sc.build_scene(bad)
    with pytest.raises(sc.SceneError):
        sc.build_scene({"objects": [{"id": 1, "shape": {"type": "torus", "radius": 0.1}}]})


def test_support_mass_outside_footprint_rejected():
    cfg = {"objects": [{"id": 2, "shape": {"type": "cylinder", "radius": 0.04, "height": 0.1},
                        "masses": [[1.0, [0.2, 0.0, 0.0]]]}]}
    with pytest.raises(sc.SceneError, match="2"):
        sc.build_scene(cfg)


def test_not_resting_rejected():
    cfg = {"objects": [{"id": 3, "shape": {"type": "sphere", "radius": 0.05},
                        "pose": {"position": [0, 0, 0.2]}, "masses": 1.0}]}
    with pytest.raises(sc.SceneError, match="not resting"):
        sc.build_scene(cfg)


# --- surface oracle -------------------------------------------------------------

def test_point_properties_on_object():
    scene = sc.build_scene(cylinders_config())
    truth = sc.point_properties(scene, [-0.2, 0.0, 0.12])  # top of cylinder 1
    assert truth.object_id == 1
    assert truth.material_id == 1
    assert truth.rigid


def test_point_beyond_reach_is_table():
    scene = sc.build_scene(cylinders_config())
    truth = sc.point_properties(scene, [0.9, 0.9, 0.0])
    assert truth.object_id == sc.TABLE_ID
    assert truth.material_id == scene.table_material


def test_point_far_from_everything_raises():
    scene = sc.build_scene(cylinders_config())
    with pytest.raises(sc.NoSurfaceError):
        sc.point_properties(scene, [0.0, 0.0, 1.0])


# --- stiction oracle ------------------------------------------------------------

def test_uniform_cylinder_forces_match_mu_m_g():
    scene = sc.build_scene(cylinders_config())
    expected = [1.0, 3.0, 0.2]
    for (oid, x), want in zip([(1, -0.2), (2, 0.0), (3, 0.2)], expected):
        force = sc.stiction_force(scene, oid, [x, -0.04, 0.03], [0, 1])
        assert force == pytest.approx(want, rel=0.02)
        assert force == pytest.approx(0.204 * {1: 0.5, 2: 1.5, 3: 0.1}[oid] * 9.81, rel=1e-9)


def test_zero_friction_zero_force():
    scene = sc.build_scene(cylinders_config(mu=0.0))
    assert sc.stiction_force(scene, 1, [-0.2, -0.04, 0.03], [0, 1]) == pytest.approx(0.0, abs=1e-12)


def test_center_push_prefers_translation_and_bounds():
    scene = sc.build_scene(cylinders_config())
    force, q_star = sc._stiction_solve(scene, 2, [0.0, -0.04, 0.03], [0, 1])
    m_total = scene.object_by_id(2).total_mass
    assert q_star is None
    lo = 0.204 * m_total * 9.81
    assert lo <= force <= lo * 1.0 + 1e-9


def test_rotation_candidates_never_beat_translation_through_cof():
    scene = sc.build_scene(cylinders_config())
    obj = scene.object_by_id(2)
    masses, xy = obj.support_world_xy()
    mu_g = obj.mu * scene.gravity
    q = sc._rotation_candidates(obj, 41)
    from fieldlab.backend import kernels
    forces = kernels().stiction_grid(masses, xy, q, np.array([0.0, -0.04]),
                                     np.array([0.0, 1.0]), mu_g)
    assert np.all(forces >= mu_g * masses.sum() - 1e-9)


# Frozen from the independent fine-grid oracle (tests/oracles.py, G=401):
HEAVY_POSITIONS = [-0.135, -0.105, -0.075, -0.045, -0.015, 0.015, 0.045, 0.075, 0.105]
HEAVY_ORACLE_401 = [0.485723496009, 0.550486628810, 0.635176879396, 0.750663584741,
                    0.917477714684, 1.179614204593, 1.651459886430, 2.752433144051,
                    8.257299432152]


def test_heavy_end_box_profile_against_brute_force_oracle():
    scene = sc.build_scene(heavy_box_config())
    prod = [sc.stiction_force(scene, 7, [x, -0.05, 0.04], [0, 1], grid_n=401)
            for x in HEAVY_POSITIONS]
    assert prod == pytest.approx(HEAVY_ORACLE_401, rel=1e-6)
    assert np.all(np.diff(prod) > 0)  # monotone toward the heavy end


def test_heavy_oracle_frozen_values_are_current():
    live = heavy_end_profile(np.array(HEAVY_POSITIONS[:3]), push_from_y=-0.05, grid_n=401)
    assert live == pytest.approx(HEAVY_ORACLE_401[:3], rel=1e-9)


def test_coarse_vs_fine_grid_within_3pct():
    scene = sc.build_scene(heavy_box_config())
    for x in HEAVY_POSITIONS:
        f81 = sc.stiction_force(scene, 7, [x, -0.05, 0.04], [0, 1], grid_n=81)
        f401 = sc.stiction_force(scene, 7, [x, -0.05, 0.04], [0, 1], grid_n=401)
        assert abs(f81 - f401) / f401 < 0.03


def test_stiction_rigid_transform_invariance():
    base = heavy_box_config()
    scene0 = sc.build_scene(base)
    moved = heavy_box_config()
    moved["objects"][0]["pose"] = {"position": [0.21, -0.13], "yaw_deg": 37.0}
    scene1 = sc.build_scene(moved)
    rot = geom.rot2d(np.deg2rad(37.0))
    shift = np.array([0.21, -0.13])
    for x in (-0.1, 0.0, 0.08):
        c0 = np.array([x, -0.05])
        d0 = np.array([0.0, 1.0])
        f0 = sc.stiction_force(scene0, 7, [*c0, 0.04], d0)
        c1 = rot @ c0 + shift
        d1 = rot @ d0
        f1 = sc.stiction_force(scene1, 7, [*c1, 0.04], d1)
        assert abs(f0 - f1) < 1e-6


def test_stiction_linear_in_mu_and_mass():
    cfg = heavy_box_config()
    f1 = sc.stiction_force(sc.build_scene(cfg), 7, [0.0, -0.05, 0.04], [0, 1])
    cfg["objects"][0]["mu"] = 0.408
    f2 = sc.stiction_force(sc.build_scene(cfg), 7, [0.0, -0.05, 0.04], [0, 1])
    assert f2 == pytest.approx(2 * f1, rel=1e-9)
    cfg["objects"][0]["mu"] = 0.204
    cfg["objects"][0]["masses"] = {"uniform": 1.0, "points": [[10.0, [0.12, 0.0, -0.04]]]}
    f3 = sc.stiction_force(sc.build_scene(cfg), 7, [0.0, -0.05, 0.04], [0, 1])
    assert f3 == pytest.approx(2 * f1, rel=1e-9)


def test_push_into_footprint_required():
    scene = sc.build_scene(heavy_box_config())
    with pytest.raises(sc.MechanicsError):
        sc.stiction_force(scene, 7, [0.0, -0.05, 0.04], [0, -1])  # pushing away
    with pytest.raises(sc.MechanicsError):
        sc.stiction_force(scene, 7, [0.5, 0.5, 0.04], [0, 1])     # far from surface


def test_deformable_object_refuses_push():
    cfg = heavy_box_config()
    cfg["objects"][0]["rigid"] = False
    scene = sc.build_scene(cfg)
    with pytest.raises(sc.MechanicsError, match="deformable"):
        sc.stiction_force(scene, 7, [0.0, -0.05, 0.04], [0, 1])


def test_brute_oracle_agrees_on_simple_cylinder():
    scene = sc.build_scene(cylinders_config())
    obj = scene.object_by_id(1)
    masses, xy = obj.support_world_xy()
    f_prod = sc.stiction_force(scene, 1, [-0.2 + 0.03, -0.04 + 0.0, 0.03], [-1, 0])
    f_ref = brute_stiction(masses, xy, [-0.17, -0.04], [-1, 0], obj.mu, scene.gravity,
                           grid_center=obj.translation[:2], grid_half=(0.08, 0.08),
                           grid_n=201)
    assert f_prod == pytest.approx(f_ref, rel=0.02)


# --- push displacement ----------------------------------------------------------

def test_center_push_pure_translation():
    scene = sc.build_scene(cylinders_config())
    before = scene.object_by_id(2).translation.copy()
    after, move = sc.apply_push_displacement(scene, 2, [0.0, -0.04, 0.03], [0, 1])
    assert move.rotation_center is None
    assert move.angle == 0.0
    assert after.object_by_id(2).translation == pytest.approx(before + [0, 0.02, 0], abs=1e-12)


def test_zero_step_identity():
    scene = sc.build_scene(cylinders_config())
    after, move = sc.apply_push_displacement(scene, 2, [0.0, -0.04, 0.03], [0, 1], step=0.0)
    assert np.array_equal(after.object_by_id(2).translation, scene.object_by_id(2).translation)
    assert np.array_equal(after.object_by_id(2).rotation, scene.object_by_id(2).rotation)


def test_corner_push_rotates_with_oracle_sense():
    cfg = {"objects": [{"id": 1, "shape": {"type": "box", "half_extents": [0.1, 0.05, 0.04]},
                        "pose": {"position": [0, 0]}, "masses": 1.0, "mu": 0.3}]}
    scene = sc.build_scene(cfg)
    contact = [0.09, -0.05, 0.04]          # near +x corner of the -y face
    _, q_star = sc._stiction_solve(scene, 1, contact, [0, 1])
    assert q_star is not None
    after, move = sc.apply_push_displacement(scene, 1, contact, [0, 1])
    assert move.angle != 0.0
    arm = np.array(contact[:2]) - q_star
    expected_sense = np.sign(arm[0] * 1.0 - arm[1] * 0.0)
    assert np.sign(move.angle) == expected_sense
    # the contact point, carried with the object, must advance along the push
    carried = sc.transform_point_by_move(contact, move)
    assert carried[1] > contact[1]


def test_push_preserves_mass_and_other_objects_bitexact():
    scene = sc.build_scene(cylinders_config())
    after, _ = sc.apply_push_displacement(scene, 2, [0.0, -0.04, 0.03], [0, 1])
    assert after.object_by_id(2).total_mass == scene.object_by_id(2).total_mass
    for oid in (1, 3):
        a, b = scene.object_by_id(oid), after.object_by_id(oid)
        assert np.array_equal(a.translation, b.translation)
        assert np.array_equal(a.rotation, b.rotation)


def test_blocked_push_clips_to_contact():
    cfg = {"objects": [
        {"id": 1, "shape": {"type": "box", "half_extents": [0.05, 0.05, 0.04]},
         "pose": {"position": [0.0, 0.0]}, "masses": 1.0},
        {"id": 2, "shape": {"type": "box", "half_extents": [0.05, 0.05, 0.04]},
         "pose": {"position": [0.0, 0.105]}, "masses": 1.0}]}
    scene = sc.build_scene(cfg)
    after, move = sc.apply_push_displacement(scene, 1, [0.0, -0.05, 0.04], [0, 1], step=0.02)
    assert move.clipped
    moved_y = after.object_by_id(1).translation[1]
    assert moved_y == pytest.approx(0.005, abs=1e-4)  # gap closed, not penetrated
    assert not sc._footprints_collide(after.object_by_id(1), after.object_by_id(2), -1e-9)
