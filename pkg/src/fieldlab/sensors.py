"""Simulated measurement instruments.

Three interaction modes against the ground-truth scene: a top-down rigidity
poke (force thresholding on a fixed indentation), a single-pixel multiband
spectrometer with a pretrained nearest-centroid material classifier, and a
lateral push that measures stiction force and displaces the object.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import scene as sc
from .explorer import POKE, PUSH, SPECTRO, Query

DEFORMABLE = 0
RIGID = 1

POKE_DEPTH = 0.005        # m of indentation
POKE_THRESHOLD = 5.0      # N; at or above reads RIGID
SPEC_CHANNELS = 18        # matches the triad multiband sensor
SPEC_NOISE = 0.02
SPEC_TRAIN_SAMPLES = 50   # offline samples per class for the 'pretrained' centroids
FORCE_NOISE = 0.05        # N, joint-torque-sensing resolution


class SensorError(RuntimeError):
    pass


@dataclass
class Measurement:
    mode: str
    raw: object            # scalar force | spectrum vector
    label: object          # class index | force in N | None on failure
    success: bool
    query: Query
    info: object = None    # PushMove for successful pushes


@dataclass
class SpectralModel:
    """Gaussian spectra per material with a nearest-centroid classifier.

    The classifier is 'pretrained': its centroids are fit from offline noisy
    samples before any experiment, never from ground truth directly.
    """
    true_centroids: np.ndarray     # (M, D)
    centroids: np.ndarray          # (M, D) fit from offline samples
    sigma: float

    @property
    def n_classes(self) -> int:
        return self.true_centroids.shape[0]

    def classify(self, spectrum: np.ndarray) -> int:
        d = np.linalg.norm(self.centroids - spectrum[None, :], axis=1)
        return int(np.argmin(d))


def build_spectral_model(n_materials: int, channels: int = SPEC_CHANNELS,
                         sigma: float = SPEC_NOISE, seed: int = 0,
                         train_samples: int = SPEC_TRAIN_SAMPLES) -> SpectralModel:
    """Deterministic spectra with guaranteed class separability."""
    if channels < 2:
        raise ValueError("need at least two spectral channels")
    rng = np.random.default_rng([seed, 71])
    min_gap = 4.0 * sigma * np.sqrt(channels)
    for _ in range(64):
        true = rng.uniform(0.0, 1.0, (n_materials, channels))
        gaps = [np.linalg.norm(true[i] - true[j])
                for i in range(n_materials) for j in range(i + 1, n_materials)]
        if not gaps or min(gaps) > min_gap:
            break
    else:
        raise SensorError("could not draw separable spectra; lower the noise")
    train_rng = np.random.default_rng([seed, 72])
    fit = np.empty_like(true)
    for m in range(n_materials):
        samples = true[m] + train_rng.normal(0.0, sigma, (train_samples, channels))
        fit[m] = samples.mean(axis=0)
    return SpectralModel(true_centroids=true, centroids=fit, sigma=sigma)


def poke(scene: sc.Scene, query: Query, threshold: float = POKE_THRESHOLD,
         depth: float = POKE_DEPTH, flip_prob: float = 0.0,
         rng: np.random.Generator | None = None) -> Measurement:
    """Top-down indentation: raw force = stiffness * depth, thresholded."""
    if query.mode != POKE:
        raise SensorError("poke called with a non-poke query")
    truth = sc.point_properties(scene, query.point3d)   # raises off-surface
    stiffness = sc.TABLE_STIFFNESS if truth.object_id == sc.TABLE_ID \
        else scene.object_by_id(truth.object_id).stiffness
    raw = float(stiffness * depth)
    label = RIGID if raw >= threshold else DEFORMABLE
    if flip_prob > 0.0 and rng is not None and rng.random() < flip_prob:
        label = 1 - label
    return Measurement(mode=POKE, raw=raw, label=label, success=True, query=query)


def read_spectrum(scene: sc.Scene, model: SpectralModel, query: Query,
                  rng: np.random.Generator | None = None) -> Measurement:
    """Noisy spectrum of the surface material, classified to a material id."""
    if query.mode != SPECTRO:
        raise SensorError("read_spectrum called with a non-spectro query")
    truth = sc.point_properties(scene, query.point3d)
    spectrum = model.true_centroids[truth.material_id].copy()
    if model.sigma > 0.0 and rng is not None:
        spectrum += rng.normal(0.0, model.sigma, spectrum.shape)
    label = model.classify(spectrum)
    return Measurement(mode=SPECTRO, raw=spectrum, label=label, success=True, query=query)


def push(scene: sc.Scene, query: Query, force_noise: float = FORCE_NOISE,
         rng: np.random.Generator | None = None, step: float = sc.DEFAULT_PUSH_STEP,
         grid_n: int = sc.DEFAULT_GRID) -> tuple[Measurement, sc.Scene]:
    """Lateral push: stiction force measurement plus scene displacement.

    Table or deformable targets fail softly (success=False, scene unchanged);
    so do mechanics violations. The input scene is never mutated.
    """
    if query.mode != PUSH:
        raise SensorError("push called with a non-push query")
    if query.push_dir is None:
        raise SensorError("push query without a direction")
    try:
        truth = sc.point_properties(scene, query.point3d)
    except sc.NoSurfaceError:
        return Measurement(PUSH, None, None, False, query), scene
    if truth.object_id == sc.TABLE_ID or not truth.rigid:
        return Measurement(PUSH, None, None, False, query), scene
    try:
        force = sc.stiction_force(scene, truth.object_id, query.point3d,
                                  query.push_dir, grid_n=grid_n)
        displaced, move = sc.apply_push_displacement(
            scene, truth.object_id, query.point3d, query.push_dir,
            step=step, grid_n=grid_n)
    except sc.MechanicsError:
        return Measurement(PUSH, None, None, False, query), scene
    raw = force
    if force_noise > 0.0 and rng is not None:
        raw = max(0.0, float(force + rng.normal(0.0, force_noise)))
    return Measurement(PUSH, raw, raw, True, query, info=move), displaced


class MeasurementLog:
    """measurements.csv: index, mode, pixel, 3D point, raw, label, success."""

    def __init__(self, path):
        self._fh = open(path, "a", newline="")
        self._csv = csv.writer(self._fh)
        if self._fh.tell() == 0:
            self._csv.writerow(["index", "mode", "u", "v", "x", "y", "z",
                                "raw", "label", "success"])

    def append(self, index: int, m: Measurement) -> None:
        q = m.query
        raw = m.raw
        if isinstance(raw, np.ndarray):
            raw = "|".join(f"{x:.5f}" for x in raw)
        elif raw is None:
            raw = ""
        else:
            raw = f"{raw:.6f}"
        label = "" if m.label is None else m.label
        self._csv.writerow([index, m.mode, q.u, q.v,
                            f"{q.point3d[0]:.6f}", f"{q.point3d[1]:.6f}",
                            f"{q.point3d[2]:.6f}", raw, label, int(m.success)])

    def close(self) -> None:
        self._fh.close()
