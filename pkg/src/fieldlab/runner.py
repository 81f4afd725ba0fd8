"""Experiment orchestration: scan, pretrain, interact, train, evaluate.

One run: capture orbit keyframes of the scene, seed free 'table' labels from
the depth image, pretrain the field, then loop up to the interaction budget:
render the entropy map from the canonical keyframe, mask infeasible pixels,
select a query (entropy argmax or uniform random), execute the sensor, feed
the resulting label back, train, and log metrics. Every random draw derives
from the run seed, so a run replays bit-identically in single-threaded mode.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import backend, camera as cam, evalkit, explorer as xp, mapper as mp
from . import scene as sc, sensors as sn, volrender as vr
from .field import init_field, load_checkpoint, save_checkpoint

MODES = ("rigidity", "material", "push_force")
STRATEGIES = ("entropy", "random")

SENSOR_FOR_MODE = {"rigidity": xp.POKE, "material": xp.SPECTRO,
                   "push_force": xp.PUSH}


class ConfigError(ValueError):
    pass


class RunAbort(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"aborted in stage {stage!r}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ExperimentConfig:
    scene: dict                       # resolved scene document
    mode: str = "material"
    strategy: str = "entropy"
    budget: int = 50
    seed: int = 0
    camera: dict = dc_field(default_factory=dict)
    field: dict = dc_field(default_factory=dict)
    train: dict = dc_field(default_factory=dict)
    explorer: dict = dc_field(default_factory=dict)
    sensors: dict = dc_field(default_factory=dict)

    DEFAULTS = {
        "camera": {"width": 120, "height": 90, "fov_deg": 55.0, "near": 0.15,
                   "far": 2.5, "orbit_radius": 0.80, "orbit_elevation_deg": 52.0,
                   "orbit_count": 8, "look_at_height": 0.03},
        "field": {"freqs": 8, "layers": 4, "hidden": 64, "lr": 1e-3,
                  "force_scale": 10.0, "bounds_halfwidth": None},
        "train": {"geometry_steps": 2000, "interaction_steps": 100,
                  "pixels_per_step": 96, "samples_per_ray": 32,
                  "loss_weights": [5.0, 1.0, 1.0, 1.0], "sem_decay": 0.0},
        "explorer": {"method": "clip", "clip_thresh": 0.7, "kernel_px": 41,
                     "clip_ref": "lnc", "history_radius_px": None,
                     "min_entropy_frac": 0.05, "auto_table_labels": 20},
        "sensors": {"poke_threshold": 5.0, "poke_depth": 0.005, "flip_prob": 0.0,
                    "spec_noise": 0.02, "force_noise": 0.05, "push_step": 0.02,
                    "stiction_grid": 81},
    }

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}")
        if not isinstance(self.budget, int) or self.budget < 1:
            raise ConfigError("budget must be an integer >= 1")
        if not isinstance(self.scene, dict) or "objects" not in self.scene:
            raise ConfigError("config needs an embedded scene document")
        for section in ("camera", "field", "train", "explorer", "sensors"):
            merged = dict(self.DEFAULTS[section])
            given = getattr(self, section)
            unknown = set(given) - set(merged)
            if unknown:
                raise ConfigError(f"unknown {section} keys: {sorted(unknown)}")
            merged.update(given)
            setattr(self, section, merged)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            doc = json.load(f)
        return cls.from_dict(doc, base_dir=Path(path).parent)

    @classmethod
    def from_dict(cls, doc: dict, base_dir=None) -> "ExperimentConfig":
        doc = dict(doc)
        scene_ref = doc.pop("scene", None)
        if isinstance(scene_ref, str):
            path = _resolve_scene_path(scene_ref, base_dir)
            with open(path) as f:
                scene_doc = json.load(f)
        elif isinstance(scene_ref, dict):
            scene_doc = scene_ref
        else:
            raise ConfigError("config requires a 'scene' path or document")
        known = {"mode", "strategy", "budget", "seed", "camera", "field",
                 "train", "explorer", "sensors"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(scene=scene_doc, **doc)

    def to_dict(self) -> dict:
        return {"scene": self.scene, "mode": self.mode, "strategy": self.strategy,
                "budget": self.budget, "seed": self.seed, "camera": self.camera,
                "field": self.field, "train": self.train,
                "explorer": self.explorer, "sensors": self.sensors}


def _resolve_scene_path(ref: str, base_dir) -> Path:
    cand = Path(ref)
    if cand.is_file():
        return cand
    if base_dir is not None and (Path(base_dir) / cand).is_file():
        return Path(base_dir) / cand
    packaged = Path(__file__).parent / "scenes" / ref
    if packaged.is_file():
        return packaged
    raise ConfigError(f"scene file not found: {ref}")


def class_setup(config: ExperimentConfig, scene: sc.Scene):
    """(class count, class names, auto-table class) for the run's mode."""
    if config.mode == "material":
        names = list(scene.material_names)
        return len(names), names, scene.table_material
    if config.mode == "rigidity":
        return 2, ["deformable", "rigid"], sn.RIGID
    return 2, ["table", "object"], 0


def _seed_table_labels(state, kf_index, scene, config, rng):
    count = config.explorer["auto_table_labels"]
    if count <= 0:
        return 0
    kf = state.keyframes[kf_index]
    _, _, table_class = class_setup(config, scene)
    pixels = xp.auto_table_pixels(kf, scene.reach_center, scene.reach_radius,
                                  count, rng, table_height=scene.table_height)
    for u, v in pixels:
        mp.add_label(state, kf_index, u, v, cam.CAT, table_class)
    return len(pixels)


def run_experiment(config: ExperimentConfig, out_dir) -> dict:
    """Execute one experiment; writes all artifacts into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")

    stage = "setup"
    try:
        scene = sc.build_scene(config.scene)
        ccfg = config.camera
        intr = cam.CameraIntrinsics.from_fov(ccfg["width"], ccfg["height"],
                                             ccfg["fov_deg"], ccfg["near"], ccfg["far"])
        look_at = np.array([scene.reach_center[0], scene.reach_center[1],
                            scene.table_height + ccfg["look_at_height"]])
        poses = cam.orbit_poses(look_at, ccfg["orbit_radius"],
                                np.deg2rad(ccfg["orbit_elevation_deg"]),
                                ccfg["orbit_count"])
        n_classes, class_names, _ = class_setup(config, scene)
        fcfg = config.field
        # the field must cover everything the camera sees (the whole visible
        # table), not just the reach sphere, or border rays alias badly
        lo, hi = scene.bounds()
        halfwidth = fcfg["bounds_halfwidth"]
        if halfwidth is None:
            halfwidth = 1.5 * ccfg["orbit_radius"]
        lo = np.minimum(lo, [look_at[0] - halfwidth, look_at[1] - halfwidth, lo[2]])
        hi = np.maximum(hi, [look_at[0] + halfwidth, look_at[1] + halfwidth,
                             scene.table_height + 0.35])
        params = init_field(n_classes, seed=config.seed, freqs=fcfg["freqs"],
                            layers=fcfg["layers"], hidden=fcfg["hidden"],
                            bounds=(lo, hi))
        params.camera_pose = poses[0].copy()
        params.camera_spec = np.array([intr.width, intr.height, intr.fx, intr.fy,
                                       intr.cx, intr.cy, intr.near, intr.far])
        tcfg = config.train
        lw = tcfg["loss_weights"]
        state = mp.MapperState(
            params=params, intr=intr,
            weights=mp.LossWeights(rgb=lw[0], depth=lw[1], sem=lw[2], cont=lw[3]),
            pixels_per_step=tcfg["pixels_per_step"],
            n_samples=tcfg["samples_per_ray"],
            lr=fcfg["lr"], force_scale=fcfg["force_scale"],
            sem_decay=tcfg["sem_decay"])

        stage = "scan"
        for pose in poses:
            mp.add_keyframe(state, cam.raycast_scene(scene, intr, pose))

        stage = "pretrain"
        train_log = mp.TrainLogger(out / "train_log.csv")
        mp.run_until(state, iterations=tcfg["geometry_steps"], seed=config.seed,
                     log=train_log)

        stage = "seed_labels"
        rng_seed_labels = np.random.default_rng([config.seed, 5])
        _seed_table_labels(state, 0, scene, config, rng_seed_labels)

        stage = "interaction_loop"
        report = _interaction_loop(config, scene, state, poses, out, train_log)
        train_log.close()

        stage = "finalize"
        save_checkpoint(state.params, out / "checkpoint.ckpt")
        digest = hashlib.sha256((out / "checkpoint.ckpt").read_bytes()).hexdigest()
        report.update({
            "mode": config.mode, "strategy": config.strategy, "seed": config.seed,
            "budget": config.budget, "classes": class_names,
            "checkpoint_sha256": digest, "kernel_lane": backend.lane(),
        })
        evalkit.write_report(out / "report.json", report)
        return report
    except (sc.SceneError, ValueError, RuntimeError) as e:
        if isinstance(e, RunAbort):
            raise
        raise RunAbort(stage, e) from e


def _interaction_loop(config, scene, state, poses, out: Path, train_log) -> dict:
    intr = state.intr
    mode_sensor = SENSOR_FOR_MODE[config.mode]
    n_classes, _, _ = class_setup(config, scene)
    max_entropy = float(np.log(n_classes))
    ecfg = config.explorer
    scfg = config.sensors
    tcfg = config.train
    r_hist = ecfg["history_radius_px"]
    if r_hist is None:
        r_hist = xp.history_radius_for(intr.width)
    history = xp.QueryHistory(intr.height, intr.width, radius_px=r_hist)
    conv = evalkit.ConvergenceLog(out / "convergence.csv")
    meas_log = sn.MeasurementLog(out / "measurements.csv")
    rng_strategy = np.random.default_rng([config.seed, 17])
    rng_sensor = np.random.default_rng([config.seed, 23])
    rng_seed_labels = np.random.default_rng([config.seed, 31])
    spectral = sn.build_spectral_model(len(scene.material_names),
                                       sigma=scfg["spec_noise"], seed=config.seed)
    interactions = 0
    failures = 0
    label_events = 0
    stop_reason = "budget"
    single_frame_active = False

    while True:
        maps = vr.render_maps(state.params, intr, poses[0],
                              n_samples=tcfg["samples_per_ray"])
        kf0 = state.keyframes[0 if not single_frame_active else -1]
        truth, valid = evalkit.truth_classes_for_mode(kf0, config.mode)
        metrics = evalkit.segmentation_metrics(maps, truth, valid,
                                               interactions, state.iteration)
        conv.append(interactions, metrics, config.strategy, config.seed)
        if interactions >= config.budget:
            break

        clip_ref = max_entropy if ecfg["clip_ref"] == "lnc" \
            else float(maps.entropy.max())
        processed = xp.process_entropy(maps.entropy, clip_ref,
                                       method=ecfg["method"],
                                       clip_thresh=ecfg["clip_thresh"],
                                       kernel_px=ecfg["kernel_px"],
                                       image_width=intr.width)
        mask = xp.build_mask(maps, intr, poses[0], scene.reach_center,
                             scene.reach_radius, mode_sensor, history)
        if config.strategy == "entropy":
            query = xp.select_query(processed, mask, maps, intr, poses[0],
                                    mode_sensor, min_frac=ecfg["min_entropy_frac"])
        else:
            query = xp.random_query(mask, maps, intr, poses[0], mode_sensor,
                                    rng_strategy)
        if query is None:
            stop_reason = "exploration_complete"
            break

        xp.save_query_overlay(out / f"query_{interactions:04d}.ppm",
                              maps.color, query.u, query.v, filled=False)
        measurement, scene = _execute(config, scene, query, spectral,
                                      rng_sensor, scfg)
        interactions += 1
        history.mark(query.u, query.v)
        meas_log.append(interactions, measurement)

        if measurement.success:
            if mode_sensor == xp.PUSH:
                if not single_frame_active:
                    mp.set_single_frame(state)
                    single_frame_active = True
                kf_new = cam.raycast_scene(scene, intr, poses[0])
                mp.add_keyframe(state, kf_new)   # drops previous labels
                _seed_table_labels(state, 0, scene, config, rng_seed_labels)
                carried = sc.transform_point_by_move(query.point3d, measurement.info)
                us, vs, zs = cam.project(intr, poses[0], carried)
                u2, v2 = int(round(us[0])), int(round(vs[0]))
                if zs[0] > 0 and 0 <= u2 < intr.width and 0 <= v2 < intr.height:
                    mp.add_label(state, 0, u2, v2, cam.CONT, measurement.label)
                    label_events += 1
            else:
                mp.add_label(state, 0, query.u, query.v, cam.CAT, measurement.label)
                label_events += 1
            xp.save_query_overlay(out / f"query_{interactions - 1:04d}.ppm",
                                  maps.color, query.u, query.v, filled=True)
        else:
            failures += 1

        mp.run_until(state, iterations=tcfg["interaction_steps"],
                     seed=config.seed, log=train_log)

    conv.close()
    meas_log.close()
    final_scene_doc = sc.scene_to_config(scene)
    with open(out / "scene_final.json", "w") as f:
        json.dump(final_scene_doc, f, indent=2, sort_keys=True)
    vr.save_maps(maps, str(out / "final"), max_entropy)
    cam.save_keyframe(state.keyframes[-1], str(out / "keyframe0"))

    report = {
        "interactions": interactions,
        "failures": failures,
        "labels_added": label_events,
        "stop_reason": stop_reason,
        "final_miou": metrics.miou,
        "final_false_confidence": metrics.false_confidence,
        "final_iou_per_class": {str(k): v for k, v in metrics.iou.items()},
        "iterations": state.iteration,
        "history_pixels": int(history.blocked.sum()),
        "query_count": len(history.records),
    }
    if config.mode == "push_force" and scene.objects:
        profile = evalkit.force_profile(
            state.params, scene, scene.objects[0].id, "length", 15, intr,
            poses[0], n_samples=tcfg["samples_per_ray"],
            grid_n=scfg["stiction_grid"])
        evalkit.save_profile(profile, out / "profile_length.csv")
        report["profile_mean_abs_rel_err"] = float(
            np.mean(np.abs(profile.rendered - profile.oracle) / profile.oracle))
    return report


def _execute(config, scene, query, spectral, rng, scfg):
    mode_sensor = SENSOR_FOR_MODE[config.mode]
    if mode_sensor == xp.POKE:
        try:
            m = sn.poke(scene, query, threshold=scfg["poke_threshold"],
                        depth=scfg["poke_depth"], flip_prob=scfg["flip_prob"],
                        rng=rng)
        except sc.SceneError:
            m = sn.Measurement(xp.POKE, None, None, False, query)
        return m, scene
    if mode_sensor == xp.SPECTRO:
        try:
            m = sn.read_spectrum(scene, spectral, query, rng=rng)
        except sc.SceneError:
            m = sn.Measurement(xp.SPECTRO, None, None, False, query)
        return m, scene
    m, new_scene = sn.push(scene, query, force_noise=scfg["force_noise"],
                           rng=rng, step=scfg["push_step"],
                           grid_n=scfg["stiction_grid"])
    return m, new_scene


def replay(run_dir, out_dir=None) -> dict:
    """Re-execute a run from its stored config; verify bit-identical results."""
    run = Path(run_dir)
    cfg_path = run / "config.json"
    if not cfg_path.is_file():
        raise ConfigError(f"no config.json under {run}")
    config = ExperimentConfig.from_file(cfg_path)
    if out_dir is None:
        out_dir = run / "replay"
    report = run_experiment(config, out_dir)
    mismatches = []
    for name in ("checkpoint.ckpt", "report.json", "convergence.csv"):
        a, b = run / name, Path(out_dir) / name
        if not a.is_file():
            mismatches.append(f"{name}: missing in original")
        elif a.read_bytes() != b.read_bytes():
            mismatches.append(name)
    report["replay_match"] = not mismatches
    report["replay_mismatches"] = mismatches
    return report


def eval_run(run_dir) -> dict:
    """Recompute final metrics for a finished run from its artifacts."""
    run = Path(run_dir)
    config = ExperimentConfig.from_file(run / "config.json")
    params = load_checkpoint(run / "checkpoint.ckpt")
    with open(run / "scene_final.json") as f:
        scene = sc.build_scene(json.load(f))
    spec = params.camera_spec
    intr = cam.CameraIntrinsics(int(spec[0]), int(spec[1]), spec[2], spec[3],
                                spec[4], spec[5], spec[6], spec[7])
    pose = params.camera_pose
    kf = cam.raycast_scene(scene, intr, pose)
    maps = vr.render_maps(params, intr, pose,
                          n_samples=config.train["samples_per_ray"])
    truth, valid = evalkit.truth_classes_for_mode(kf, config.mode)
    metrics = evalkit.segmentation_metrics(maps, truth, valid, -1, params.step)
    out = {"miou": metrics.miou, "false_confidence": metrics.false_confidence,
           "iou_per_class": {str(k): v for k, v in metrics.iou.items()}}
    if config.mode == "push_force" and scene.objects:
        profile = evalkit.force_profile(params, scene, scene.objects[0].id,
                                        "length", 15, intr, pose,
                                        grid_n=config.sensors["stiction_grid"])
        out["profile_mean_abs_rel_err"] = float(
            np.mean(np.abs(profile.rendered - profile.oracle) / profile.oracle))
    return out


def render_from_checkpoint(ckpt_path, out_dir) -> None:
    """Render the full map set from a checkpoint's stored camera."""
    params = load_checkpoint(ckpt_path)
    if params.camera_spec is None or params.camera_pose is None:
        raise ConfigError("checkpoint carries no camera block")
    spec = params.camera_spec
    intr = cam.CameraIntrinsics(int(spec[0]), int(spec[1]), spec[2], spec[3],
                                spec[4], spec[5], spec[6], spec[7])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    maps = vr.render_maps(params, intr, params.camera_pose)
    vr.save_maps(maps, str(out / "render"), np.log(params.hyper.classes))
