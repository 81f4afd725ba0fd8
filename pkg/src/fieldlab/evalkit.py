"""Metrics and comparisons: mIoU, false confidence, convergence logs, and
rendered-vs-analytic stiction force profiles."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import scene as sc
from . import volrender as vr
from .camera import CameraIntrinsics, Keyframe
from .field import FieldParams, forward


@dataclass
class SegmentationMetrics:
    iou: dict
    miou: float
    false_confidence: float
    interaction_count: int
    iteration: int


@dataclass
class ForceProfile:
    axis: str
    positions: np.ndarray   # m along the object axis, strictly increasing
    rendered: np.ndarray    # N
    oracle: np.ndarray      # N

    def __post_init__(self):
        if not (len(self.positions) == len(self.rendered) == len(self.oracle)):
            raise ValueError("profile arrays must have equal length")
        if np.any(np.diff(self.positions) <= 0):
            raise ValueError("positions must be strictly increasing")


def miou(pred: np.ndarray, truth: np.ndarray, valid: np.ndarray):
    """(mean IoU over classes present in truth, per-class IoU dict)."""
    if pred.shape != truth.shape or pred.shape != valid.shape:
        raise ValueError("shape mismatch")
    classes = np.unique(truth[valid])
    iou = {}
    for c in classes:
        p = (pred == c) & valid
        t = (truth == c) & valid
        union = (p | t).sum()
        iou[int(c)] = float((p & t).sum() / union) if union else 1.0
    return float(np.mean(list(iou.values()))) if iou else 1.0, iou


def false_confidence(sem_dist: np.ndarray, truth: np.ndarray, valid: np.ndarray,
                     p_conf: float = 0.8) -> float:
    """Fraction of valid pixels predicted with confidence > p_conf yet wrong."""
    c = sem_dist.shape[-1]
    if not (1.0 / c < p_conf < 1.0):
        raise ValueError(f"p_conf must lie in (1/{c}, 1)")
    conf = sem_dist.max(axis=-1)
    pred = sem_dist.argmax(axis=-1)
    bad = valid & (conf > p_conf) & (pred != truth)
    n = valid.sum()
    return float(bad.sum() / n) if n else 0.0


def truth_classes_for_mode(kf: Keyframe, mode: str):
    """(class map, valid mask) for the evaluation keyframe in a given mode."""
    valid = kf.depth > 0
    if mode == "material":
        return kf.truth_material.copy(), valid
    if mode == "rigidity":
        return kf.truth_rigid.astype(np.int64), valid      # deformable=0, rigid=1
    if mode == "push_force":
        return (kf.truth_object >= 0).astype(np.int64), valid  # table=0, object=1
    raise ValueError(f"unknown mode {mode!r}")


def segmentation_metrics(maps: vr.RenderedMaps, truth: np.ndarray,
                         valid: np.ndarray, interaction_count: int,
                         iteration: int, p_conf: float = 0.8) -> SegmentationMetrics:
    pred = maps.sem_dist.argmax(axis=-1)
    m, per_class = miou(pred, truth, valid)
    fc = false_confidence(maps.sem_dist, truth, valid, p_conf)
    return SegmentationMetrics(iou=per_class, miou=m, false_confidence=fc,
                               interaction_count=interaction_count,
                               iteration=iteration)


def force_profile(params: FieldParams, scene: sc.Scene, object_id: int,
                  axis: str, k: int, intr: CameraIntrinsics, pose: np.ndarray,
                  n_samples: int = 32, grid_n: int = sc.DEFAULT_GRID,
                  span: float = 0.9) -> ForceProfile:
    """Rendered continuous channel vs the analytic stiction oracle.

    Samples k top-surface points along the object's length or width axis,
    renders the continuous channel through each from the canonical view, and
    computes the stiction force of a lateral push whose line of action passes
    through the same point.
    """
    obj = scene.object_by_id(object_id)
    half = obj.footprint_half_extents()
    if axis == "length":
        ax = int(np.argmax(half))
    elif axis == "width":
        ax = int(np.argmin(half))
    else:
        raise ValueError(f"axis must be length or width, got {axis!r}")
    other = 1 - ax
    positions = np.linspace(-span * half[ax], span * half[ax], k)

    origin = pose[:3, 3]
    rendered = np.empty(k)
    oracle = np.empty(k)
    for i, s in enumerate(positions):
        local = np.zeros(3)
        local[ax] = s
        local[2] = obj.half_height
        world = obj.rotation @ local + obj.translation
        d = world - origin
        d = d / np.linalg.norm(d)
        ts = vr.sample_depths_batch(1, n_samples, intr.near, intr.far, None, params.dtype)
        deltas = vr.deltas_from_ts(ts, intr.far)
        pts = origin.astype(params.dtype) + ts[0][:, None] * d.astype(params.dtype)
        sigma, rgb, sem, cont = forward(params, pts)
        _, _, _, _, _, cv, _ = vr.composite_batch(
            sigma[None], rgb[None], sem[None], cont[None], ts, deltas)
        rendered[i] = float(cv[0])

        contact_local = np.zeros(3)
        contact_local[ax] = s
        contact_local[other] = -half[other]
        contact_local[2] = 0.0
        contact = obj.rotation @ contact_local + obj.translation
        push_local = np.zeros(3)
        push_local[other] = 1.0
        push_dir = (obj.rotation @ push_local)[:2]
        oracle[i] = sc.stiction_force(scene, object_id, contact, push_dir,
                                      grid_n=grid_n)
    return ForceProfile(axis=axis, positions=positions, rendered=rendered,
                        oracle=oracle)


def save_profile(profile: ForceProfile, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["position", "rendered", "oracle"])
        for p, r, o in zip(profile.positions, profile.rendered, profile.oracle):
            w.writerow([f"{p:.6f}", f"{r:.6f}", f"{o:.6f}"])


class ConvergenceLog:
    """convergence.csv: one row per interaction count, plus the baseline row."""

    COLUMNS = ["count", "miou", "false_confidence", "strategy", "seed"]

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "a", newline="")
        self._csv = csv.writer(self._fh)
        if self._fh.tell() == 0:
            self._csv.writerow(self.COLUMNS)

    def append(self, count: int, m: SegmentationMetrics, strategy: str, seed: int) -> None:
        self._csv.writerow([count, f"{m.miou:.6f}", f"{m.false_confidence:.6f}",
                            strategy, seed])

    def close(self) -> None:
        self._fh.close()


def read_convergence(path):
    rows = []
    with open(path) as f:
        for row in csv.DictReader(f):
            rows.append({"count": int(row["count"]), "miou": float(row["miou"]),
                         "false_confidence": float(row["false_confidence"]),
                         "strategy": row["strategy"], "seed": int(row["seed"])})
    return rows


def write_report(path, data: dict) -> None:
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
