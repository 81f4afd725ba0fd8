"""The compact neural field: encoding, forward heads, explicit backprop, Adam.

A small fixed-topology MLP maps world coordinates to volume density, color,
categorical logits and one continuous physical value. Gradients are
hand-written (checked against central finite differences in the tests), so
no autodiff framework is involved; the hot math lives in the kernel lanes.

Checkpoint format (little-endian), documented for external tooling:

    magic   b"FLAB"
    u32     version (1)
    u32     freqs, layers, hidden, classes
    u64     adam step counter
    f64[3]  padded lower bounds, f64[3] padded upper bounds
    f64[16] canonical camera pose (row-major 4x4)
    f64[8]  camera block: width, height, fx, fy, cx, cy, near, far
    f32[..] parameter arrays in PARAM_NAMES order
    f32[..] Adam first moments, then second moments, same order

The camera block lets `fieldlab render` work from a checkpoint alone; zeros
mean "not recorded".
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .backend import kernels

CHECKPOINT_MAGIC = b"FLAB"
CHECKPOINT_VERSION = 1

PARAM_NAMES = ("w_in", "b_in", "w_hid", "b_hid", "w_den", "b_den",
               "w_col", "b_col", "w_sem", "b_sem", "w_con", "b_con")

# softplus(b) = 0.1/m everywhere at init
DENSITY_BIAS = float(np.log(np.expm1(0.1)))

# heads start almost flat so the initial semantic softmax is near-uniform
HEAD_INIT_SCALE = 0.1

# parameter count at the default hyperparameters (F=8, L=4, H=128, C=4)
DEFAULT_PARAM_COUNT = 57_353


class NumericsError(RuntimeError):
    """Non-finite value met in parameters or gradients."""


@dataclass
class FieldHyper:
    freqs: int = 8
    layers: int = 4          # trunk weight matrices (input layer included)
    hidden: int = 128
    classes: int = 4
    bounds_lo: np.ndarray = field(default_factory=lambda: np.array([-1.0, -1.0, -1.0]))
    bounds_hi: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0, 1.0]))

    @property
    def input_dim(self) -> int:
        return 3 + 6 * self.freqs

    def shapes(self) -> dict:
        d, h, c, nh = self.input_dim, self.hidden, self.classes, self.layers - 1
        return {"w_in": (d, h), "b_in": (h,), "w_hid": (nh, h, h), "b_hid": (nh, h),
                "w_den": (h, 1), "b_den": (1,), "w_col": (h, 3), "b_col": (3,),
                "w_sem": (h, c), "b_sem": (c,), "w_con": (h, 1), "b_con": (1,)}


@dataclass
class PointOutput:
    sigma: float
    color: np.ndarray
    sem_logits: np.ndarray
    cont: float


@dataclass
class FieldParams:
    hyper: FieldHyper
    values: dict
    adam_m: dict
    adam_v: dict
    step: int = 0
    camera_pose: np.ndarray | None = None   # canonical view, for self-contained rendering
    camera_spec: np.ndarray | None = None   # w, h, fx, fy, cx, cy, near, far

    @property
    def dtype(self):
        return self.values["w_in"].dtype

    @property
    def param_count(self) -> int:
        return sum(v.size for v in self.values.values())

    def copy(self) -> "FieldParams":
        return FieldParams(
            hyper=replace(self.hyper, bounds_lo=self.hyper.bounds_lo.copy(),
                          bounds_hi=self.hyper.bounds_hi.copy()),
            values={k: v.copy() for k, v in self.values.items()},
            adam_m={k: v.copy() for k, v in self.adam_m.items()},
            adam_v={k: v.copy() for k, v in self.adam_v.items()},
            step=self.step,
            camera_pose=None if self.camera_pose is None else self.camera_pose.copy(),
            camera_spec=None if self.camera_spec is None else self.camera_spec.copy(),
        )

    def encode_frame(self):
        """(lo, inv_half) in the parameter dtype, padded 10% beyond bounds."""
        lo = self.hyper.bounds_lo
        hi = self.hyper.bounds_hi
        pad = 0.1 * (hi - lo)
        lo_p = lo - pad
        span = (hi - lo) + 2 * pad
        return lo_p.astype(self.dtype), (2.0 / span).astype(self.dtype)

    def check_finite(self) -> None:
        for name, v in self.values.items():
            if not np.all(np.isfinite(v)):
                raise NumericsError(f"non-finite parameter in {name}")


def init_field(classes: int, seed: int = 0, freqs: int = 8, layers: int = 4,
               hidden: int = 128, bounds=None, dtype=np.float32) -> FieldParams:
    """Glorot-uniform weights, zero biases, density bias set for init sigma 0.1."""
    if classes < 2:
        raise ValueError("need at least two semantic classes")
    if layers < 2:
        raise ValueError("trunk needs at least two layers")
    hyper = FieldHyper(freqs=freqs, layers=layers, hidden=hidden, classes=classes)
    if bounds is not None:
        hyper.bounds_lo = np.asarray(bounds[0], dtype=float).copy()
        hyper.bounds_hi = np.asarray(bounds[1], dtype=float).copy()
    rng = np.random.default_rng(seed)
    values = {}
    for name, shape in hyper.shapes().items():
        if name.startswith("b_"):
            values[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in, fan_out = shape[-2], shape[-1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            if name in ("w_den", "w_col", "w_sem", "w_con"):
                limit *= HEAD_INIT_SCALE
            values[name] = rng.uniform(-limit, limit, shape).astype(dtype)
    values["b_den"][0] = DENSITY_BIAS
    zeros = {k: np.zeros_like(v) for k, v in values.items()}
    return FieldParams(hyper=hyper, values=values,
                       adam_m=zeros, adam_v={k: v.copy() for k, v in zeros.items()})


def encode(params: FieldParams, pts) -> tuple[np.ndarray, np.ndarray]:
    """Positional encoding of (B, 3) world points.

    Returns (features, clipped) where clipped flags points outside twice the
    scene bounds (their coordinates are clamped before encoding).
    """
    pts = np.atleast_2d(np.asarray(pts)).astype(params.dtype, copy=False)
    lo, inv_half = params.encode_frame()
    normed = (pts - lo) * inv_half - 1.0
    clipped = np.any(np.abs(normed) > 2.0, axis=1)
    return kernels().encode_points(np.ascontiguousarray(pts), lo, inv_half,
                                   params.hyper.freqs), clipped


def forward(params: FieldParams, pts, want_cache: bool = False):
    """Batched field evaluation.

    Returns (sigma, color, sem_logits, cont[, cache]); arrays are (B, ...) in
    the parameter dtype. The cache feeds backward().
    """
    params.check_finite()
    x, _ = encode(params, pts)
    v = params.values
    acts, sigma, rgb, sem, cont = kernels().mlp_forward(
        x, v["w_in"], v["b_in"], v["w_hid"], v["b_hid"], v["w_den"], v["b_den"],
        v["w_col"], v["b_col"], v["w_sem"], v["b_sem"], v["w_con"], v["b_con"],
        want_cache)
    if want_cache:
        return sigma, rgb, sem, cont, (x, acts, sigma, rgb)
    return sigma, rgb, sem, cont


def forward_point(params: FieldParams, p) -> PointOutput:
    sigma, rgb, sem, cont = forward(params, np.asarray(p, dtype=float).reshape(1, 3))
    return PointOutput(float(sigma[0]), rgb[0], sem[0], float(cont[0]))


def backward(params: FieldParams, cache, d_sigma, d_rgb, d_sem, d_cont) -> dict:
    """Parameter gradients for the cached forward pass (exact chain rule)."""
    x, acts, sigma, rgb = cache
    b = x.shape[0]
    if d_sigma.shape != (b,) or d_rgb.shape != (b, 3) or d_cont.shape != (b,):
        raise ValueError("upstream gradient shapes do not match the forward batch")
    if d_sem.shape != (b, params.hyper.classes):
        raise ValueError("d_sem shape mismatch")
    v = params.values
    dt = params.dtype
    out = kernels().mlp_backward(
        x, acts, sigma, rgb, v["w_in"], v["w_hid"], v["w_den"], v["w_col"],
        v["w_sem"], v["w_con"],
        np.ascontiguousarray(d_sigma, dtype=dt),
        np.ascontiguousarray(d_rgb, dtype=dt),
        np.ascontiguousarray(d_sem, dtype=dt),
        np.ascontiguousarray(d_cont, dtype=dt))
    return dict(zip(PARAM_NAMES, out))


def adam_step(params: FieldParams, grads: dict, lr: float = 1e-3,
              betas=(0.9, 0.999), eps: float = 1e-8) -> FieldParams:
    """Bias-corrected Adam update in place; rejects non-finite gradients."""
    for name in PARAM_NAMES:
        if not np.all(np.isfinite(grads[name])):
            raise NumericsError(f"non-finite gradient for {name}; step rejected")
    b1, b2 = betas
    params.step += 1
    t = params.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name in PARAM_NAMES:
        g = grads[name]
        m = params.adam_m[name]
        v = params.adam_v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params.values[name] -= (lr / c1) * m / (np.sqrt(v / c2) + eps)
    return params


# --- checkpoints ----------------------------------------------------------------

def save_checkpoint(params: FieldParams, path) -> None:
    h = params.hyper
    pose = params.camera_pose if params.camera_pose is not None else np.zeros((4, 4))
    camspec = params.camera_spec if params.camera_spec is not None else np.zeros(8)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IIIIIQ", CHECKPOINT_VERSION, h.freqs, h.layers,
                            h.hidden, h.classes, params.step))
        f.write(np.asarray(h.bounds_lo, dtype="<f8").tobytes())
        f.write(np.asarray(h.bounds_hi, dtype="<f8").tobytes())
        f.write(np.asarray(pose, dtype="<f8").tobytes())
        f.write(np.asarray(camspec, dtype="<f8").tobytes())
        for group in (params.values, params.adam_m, params.adam_v):
            for name in PARAM_NAMES:
                f.write(np.ascontiguousarray(group[name], dtype="<f4").tobytes())


def load_checkpoint(path) -> FieldParams:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a field checkpoint (bad magic)")
    version, freqs, layers, hidden, classes, step = struct.unpack_from("<IIIIIQ", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 4 + struct.calcsize("<IIIIIQ")
    bounds_lo = np.frombuffer(data, "<f8", 3, off).copy(); off += 24
    bounds_hi = np.frombuffer(data, "<f8", 3, off).copy(); off += 24
    pose = np.frombuffer(data, "<f8", 16, off).reshape(4, 4).copy(); off += 128
    camspec = np.frombuffer(data, "<f8", 8, off).copy(); off += 64
    hyper = FieldHyper(freqs=freqs, layers=layers, hidden=hidden, classes=classes,
                       bounds_lo=bounds_lo, bounds_hi=bounds_hi)
    groups = []
    for _ in range(3):
        group = {}
        for name, shape in hyper.shapes().items():
            n = int(np.prod(shape))
            group[name] = np.frombuffer(data, "<f4", n, off).reshape(shape).copy()
            off += 4 * n
        groups.append(group)
    values, adam_m, adam_v = groups
    return FieldParams(hyper=hyper, values=values, adam_m=adam_m, adam_v=adam_v,
                       step=step,
                       camera_pose=None if not pose.any() else pose,
                       camera_spec=None if not camspec.any() else camspec)
