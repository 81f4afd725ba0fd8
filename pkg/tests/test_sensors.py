"""Simulated poke / spectrometer / push instruments."""

import numpy as np
import pytest

import fieldlab.scene as sc
import fieldlab.sensors as sn
from fieldlab.explorer import POKE, PUSH, SPECTRO, Query

from test_scene import cylinders_config, heavy_box_config


def q(mode, point, normal=(0, 0, 1.0), push_dir=None):
    return Query(u=0, v=0, point3d=np.asarray(point, float),
                 normal=np.asarray(normal, float), mode=mode,
                 push_dir=None if push_dir is None else np.asarray(push_dir, float),
                 score=1.0)


# --- spectral model ---------------------------------------------------------------

def test_spectral_model_separable_and_deterministic():
    a = sn.build_spectral_model(4, seed=3)
    b = sn.build_spectral_model(4, seed=3)
    assert np.array_equal(a.true_centroids, b.true_centroids)
    assert np.array_equal(a.centroids, b.centroids)
    d = a.true_centroids
    min_gap = min(np.linalg.norm(d[i] - d[j])
                  for i in range(4) for j in range(i + 1, 4))
    assert min_gap > 4 * a.sigma * np.sqrt(d.shape[1])


def test_spectro_zero_noise_perfect():
    scene = sc.build_scene(cylinders_config())
    model = sn.build_spectral_model(len(scene.material_names), sigma=0.0)
    m = sn.read_spectrum(scene, model, q(SPECTRO, [-0.2, 0.0, 0.12]))
    assert m.success and m.label == 1


def test_spectro_noise_accuracy():
    model = sn.build_spectral_model(4, sigma=sn.SPEC_NOISE, seed=0)
    rng = np.random.default_rng(0)
    hits = 0
    n = 1000
    for i in range(n):
        cls = i % 4
        spec = model.true_centroids[cls] + rng.normal(0, model.sigma, 18)
        hits += model.classify(spec) == cls
    assert hits / n >= 0.99


def test_spectro_on_table_reads_table_class():
    scene = sc.build_scene(cylinders_config())
    model = sn.build_spectral_model(len(scene.material_names), sigma=0.0)
    m = sn.read_spectrum(scene, model, q(SPECTRO, [0.4, 0.4, 0.0]))
    assert m.label == scene.table_material


# --- poke -------------------------------------------------------------------------

def test_poke_table_is_rigid():
    scene = sc.build_scene(cylinders_config())
    m = sn.poke(scene, q(POKE, [0.3, 0.3, 0.0]))
    assert m.label == sn.RIGID
    assert m.raw >= sn.POKE_THRESHOLD


def test_poke_soft_object_force_arithmetic():
    cfg = cylinders_config()
    cfg["objects"][0]["stiffness"] = 100.0
    cfg["objects"][0]["rigid"] = False
    scene = sc.build_scene(cfg)
    m = sn.poke(scene, q(POKE, [-0.2, 0.0, 0.12]))
    assert m.raw == pytest.approx(100.0 * 0.005)     # 0.5 N
    assert m.label == sn.DEFORMABLE


def test_poke_matches_ground_truth_noiseless():
    scene = sc.build_scene(cylinders_config())
    rng = np.random.default_rng(1)
    for _ in range(100):
        if rng.random() < 0.5:
            obj = scene.objects[rng.integers(0, 3)]
            p = obj.translation + [0, 0, obj.half_height]
            want = sn.RIGID if obj.stiffness * sn.POKE_DEPTH >= sn.POKE_THRESHOLD \
                else sn.DEFORMABLE
        else:
            p = np.array([rng.uniform(-0.3, 0.3), rng.uniform(0.25, 0.4), 0.0])
            want = sn.RIGID
        m = sn.poke(scene, q(POKE, p))
        assert m.label == want


def test_poke_off_surface_raises():
    scene = sc.build_scene(cylinders_config())
    with pytest.raises(sc.NoSurfaceError):
        sn.poke(scene, q(POKE, [0.0, 0.0, 0.9]))


def test_poke_wrong_mode_rejected():
    scene = sc.build_scene(cylinders_config())
    with pytest.raises(sn.SensorError):
        sn.poke(scene, q(PUSH, [0.3, 0.3, 0.0]))


# --- push -------------------------------------------------------------------------

def test_push_center_cylinder_force():
    scene = sc.build_scene(cylinders_config())
    m, after = sn.push(scene, q(PUSH, [-0.2, -0.045, 0.03], push_dir=[0, 1]),
                       force_noise=0.0)
    assert m.success
    assert m.label == pytest.approx(1.0, rel=0.02)   # mu*m*g for 0.5 kg
    assert after.object_by_id(1).translation[1] > scene.object_by_id(1).translation[1]


def test_push_on_table_fails_soft():
    scene = sc.build_scene(cylinders_config())
    m, after = sn.push(scene, q(PUSH, [0.3, 0.3, 0.0], push_dir=[0, 1]))
    assert not m.success and m.label is None
    assert after is scene


def test_push_on_deformable_fails_soft():
    cfg = cylinders_config()
    cfg["objects"][1]["rigid"] = False
    scene = sc.build_scene(cfg)
    m, after = sn.push(scene, q(PUSH, [0.0, -0.045, 0.03], push_dir=[0, 1]))
    assert not m.success
    assert after is scene


def test_push_does_not_mutate_input_scene():
    scene = sc.build_scene(cylinders_config())
    before = [o.translation.copy() for o in scene.objects]
    sn.push(scene, q(PUSH, [-0.2, -0.045, 0.03], push_dir=[0, 1]), force_noise=0.0)
    for o, t in zip(scene.objects, before):
        assert np.array_equal(o.translation, t)


def test_push_profile_monotone_toward_heavy_end():
    scene = sc.build_scene(heavy_box_config())
    forces = []
    for x in (-0.10, 0.0, 0.09):
        m, scene_after = sn.push(scene, q(PUSH, [x, -0.05, 0.04], push_dir=[0, 1]),
                                 force_noise=0.0)
        assert m.success
        forces.append(m.label)
    assert forces[0] < forces[1] < forces[2]


def test_push_noise_seeded():
    scene = sc.build_scene(cylinders_config())
    query = q(PUSH, [-0.2, -0.045, 0.03], push_dir=[0, 1])
    m1, _ = sn.push(scene, query, rng=np.random.default_rng(4))
    m2, _ = sn.push(scene, query, rng=np.random.default_rng(4))
    assert m1.label == m2.label
    assert m1.label != pytest.approx(1.0006, abs=1e-6)  # noise actually applied


# --- measurement log --------------------------------------------------------------

def test_measurement_csv(tmp_path):
    scene = sc.build_scene(cylinders_config())
    log = sn.MeasurementLog(tmp_path / "m.csv")
    m = sn.poke(scene, q(POKE, [0.3, 0.3, 0.0]))
    log.append(1, m)
    model = sn.build_spectral_model(2, sigma=0.0)
    log.append(2, sn.read_spectrum(scene, model, q(SPECTRO, [0.3, -0.3, 0.0])))
    log.close()
    lines = (tmp_path / "m.csv").read_text().strip().split("\n")
    assert lines[0].startswith("index,mode,u,v,x,y,z,raw,label,success")
    assert len(lines) == 3
    assert lines[1].split(",")[1] == "poke"
