"""Online field training against keyframes and sparse semantic labels.

Every step renders a batch of rays: uniformly sampled pixels plus every
labelled pixel (sparse labels would otherwise almost never be drawn). The
loss is L1 photometric + L1 depth on hit pixels + cross-entropy on labelled
categorical pixels + L1 on labelled continuous pixels (scaled by a force
normalization constant). Single-frame mode keeps only the latest keyframe,
dropping its predecessors' labels, which is what lets the field track a
scene that moves under interaction.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import field as fld
from . import volrender as vr
from .camera import CameraIntrinsics, CAT, CONT, Keyframe

MULTI_FRAME = "multi_frame"
SINGLE_FRAME = "single_frame"


@dataclass
class LossWeights:
    rgb: float = 5.0
    depth: float = 1.0
    sem: float = 1.0
    cont: float = 1.0


@dataclass
class TrainStats:
    iteration: int
    l_rgb: float
    l_depth: float
    l_sem: float
    l_cont: float
    grad_norm: float
    ms: float

    def total(self, w: "LossWeights") -> float:
        return (w.rgb * self.l_rgb + w.depth * self.l_depth
                + w.sem * self.l_sem + w.cont * self.l_cont)


@dataclass
class MapperState:
    params: fld.FieldParams
    intr: CameraIntrinsics
    keyframes: list = dc_field(default_factory=list)
    mode: str = MULTI_FRAME
    weights: LossWeights = dc_field(default_factory=LossWeights)
    pixels_per_step: int = 96
    n_samples: int = 32
    lr: float = 1e-3
    force_scale: float = 10.0
    sem_decay: float = 0.0
    iteration: int = 0


def add_keyframe(state: MapperState, kf: Keyframe) -> MapperState:
    """Append (multi-frame) or replace-and-drop-labels (single-frame)."""
    if kf.depth.shape != (state.intr.height, state.intr.width):
        raise ValueError("keyframe resolution does not match mapper intrinsics")
    if state.mode == SINGLE_FRAME:
        state.keyframes = [kf]
    else:
        state.keyframes.append(kf)
    return state


def set_single_frame(state: MapperState) -> MapperState:
    """Switch to single-frame optimization, keeping only the latest keyframe."""
    state.mode = SINGLE_FRAME
    if len(state.keyframes) > 1:
        state.keyframes = [state.keyframes[-1]]
    return state


def add_label(state: MapperState, kf_index: int, u: int, v: int,
              channel: str, value) -> MapperState:
    if channel == CAT and not (0 <= int(value) < state.params.hyper.classes):
        raise ValueError(f"class {value} out of range")
    if channel not in (CAT, CONT):
        raise ValueError(f"unknown channel {channel!r}")
    state.keyframes[kf_index].add_label(u, v, channel, value)
    return state


def _gather_rays(state: MapperState, rng: np.random.Generator):
    """Uniform pixels + every labelled pixel, across all keyframes."""
    h, w = state.intr.height, state.intr.width
    n_kf = len(state.keyframes)
    kf_idx = rng.integers(0, n_kf, state.pixels_per_step)
    us = rng.integers(0, w, state.pixels_per_step)
    vs = rng.integers(0, h, state.pixels_per_step)
    rows = [(int(k), int(u), int(v)) for k, u, v in zip(kf_idx, us, vs)]
    sem_targets = []
    cont_targets = []
    for k, kf in enumerate(state.keyframes):
        for (v, u), cls in kf.labels_cat.items():
            sem_targets.append((len(rows), cls))
            rows.append((k, u, v))
        for (v, u), val in kf.labels_cont.items():
            cont_targets.append((len(rows), val))
            rows.append((k, u, v))
    return rows, sem_targets, cont_targets


def train_step(state: MapperState, seed) -> TrainStats:
    """One optimization step; deterministic per seed; params untouched on error."""
    if not state.keyframes:
        raise ValueError("mapper needs at least one keyframe")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    rows, sem_targets, cont_targets = _gather_rays(state, rng)
    n_rays = len(rows)
    dt = state.params.dtype
    intr = state.intr

    origins = np.empty((n_rays, 3), dt)
    dirs = np.empty((n_rays, 3), dt)
    tgt_rgb = np.empty((n_rays, 3), dt)
    tgt_depth = np.empty(n_rays, np.float64)
    for i, (k, u, v) in enumerate(rows):
        kf = state.keyframes[k]
        origins[i] = kf.ray_origin
        dirs[i] = kf.ray_dirs[v, u]
        tgt_rgb[i] = kf.rgb[v, u]
        tgt_depth[i] = kf.depth[v, u]

    n = state.n_samples
    ts = vr.sample_depths_batch(n_rays, n, intr.near, intr.far, rng, dt)
    deltas = vr.deltas_from_ts(ts, intr.far)
    pts = origins[:, None, :] + ts[:, :, None] * dirs[:, None, :]

    sigma, rgb, sem, cont, cache = fld.forward(state.params, pts.reshape(-1, 3),
                                               want_cache=True)
    c = state.params.hyper.classes
    sigma_r = sigma.reshape(n_rays, n)
    rgb_r = rgb.reshape(n_rays, n, 3)
    sem_r = sem.reshape(n_rays, n, c)
    cont_r = cont.reshape(n_rays, n)
    weights_s, trans, col, dep, semlog, contv, wsum = vr.composite_batch(
        sigma_r, rgb_r, sem_r, cont_r, ts, deltas)

    w = state.weights
    # photometric L1 over every ray
    diff_rgb = col - tgt_rgb
    l_rgb = float(np.abs(diff_rgb).mean())
    d_color = (w.rgb / diff_rgb.size) * np.sign(diff_rgb)
    # depth L1 over hit pixels only
    hit = tgt_depth > 0
    n_hit = max(int(hit.sum()), 1)
    diff_d = dep.astype(np.float64) - tgt_depth
    l_depth = float(np.abs(diff_d[hit]).sum() / n_hit)
    d_depth = np.where(hit, (w.depth / n_hit) * np.sign(diff_d), 0.0)
    # cross-entropy on labelled categorical pixels
    d_semlog = np.zeros((n_rays, c), np.float64)
    l_sem = 0.0
    if sem_targets:
        idx = np.array([i for i, _ in sem_targets])
        cls = np.array([cl for _, cl in sem_targets])
        p = vr.softmax(semlog[idx].astype(np.float64))
        l_sem = float(-np.log(np.maximum(p[np.arange(len(idx)), cls], 1e-30)).mean())
        grad = p
        grad[np.arange(len(idx)), cls] -= 1.0
        d_semlog[idx] = (w.sem / len(idx)) * grad
    # L1 on labelled continuous pixels, normalized by the force scale
    d_cont = np.zeros(n_rays, np.float64)
    l_cont = 0.0
    if cont_targets:
        idx = np.array([i for i, _ in cont_targets])
        val = np.array([x for _, x in cont_targets])
        diff_c = contv[idx].astype(np.float64) - val
        l_cont = float(np.abs(diff_c).mean() / state.force_scale)
        d_cont[idx] = (w.cont / (len(idx) * state.force_scale)) * np.sign(diff_c)

    ds, drgb, dsem, dcont_s = vr.composite_backward(
        sigma_r, deltas, weights_s, trans, rgb_r, sem_r, cont_r, ts,
        d_color.astype(dt), d_depth.astype(dt), d_semlog.astype(dt),
        d_cont.astype(dt))
    grads = fld.backward(state.params, cache,
                         ds.reshape(-1), drgb.reshape(-1, 3),
                         dsem.reshape(-1, c), dcont_s.reshape(-1))
    fld.adam_step(state.params, grads, lr=state.lr)
    if state.sem_decay > 0.0:
        # decoupled decay on the semantic head: confidence has to be renewed
        # by label evidence, so unlabelled regions relax back toward uniform
        state.params.values["w_sem"] *= 1.0 - state.sem_decay
    state.iteration += 1
    gnorm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum())
                              for g in grads.values())))
    ms = (time.perf_counter() - t0) * 1e3
    return TrainStats(state.iteration, l_rgb, l_depth, l_sem, l_cont, gnorm, ms)


def run_until(state: MapperState, iterations: int | None = None,
              loss_threshold: float | None = None, wall_ms: float | None = None,
              seed: int = 0, log=None) -> MapperState:
    """Repeated train_step until a stop criterion; per-step seeds derive from
    (seed, iteration) so restarts are reproducible."""
    if iterations is None and loss_threshold is None and wall_ms is None:
        raise ValueError("need a stop criterion")
    t0 = time.perf_counter()
    done = 0
    while True:
        if iterations is not None and done >= iterations:
            break
        if wall_ms is not None and (time.perf_counter() - t0) * 1e3 >= wall_ms:
            break
        stats = train_step(state, [seed, state.iteration])
        done += 1
        if log is not None:
            log(stats)
        if loss_threshold is not None and stats.total(state.weights) < loss_threshold:
            break
    return state


class TrainLogger:
    """Appends TrainStats rows to train_log.csv."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "a")
        if self._fh.tell() == 0:
            self._fh.write("iteration,l_rgb,l_depth,l_sem,l_cont,grad_norm,ms\n")

    def __call__(self, s: TrainStats) -> None:
        self._fh.write(f"{s.iteration},{s.l_rgb:.6g},{s.l_depth:.6g},"
                       f"{s.l_sem:.6g},{s.l_cont:.6g},{s.grad_norm:.6g},{s.ms:.3f}\n")

    def close(self) -> None:
        self._fh.close()
