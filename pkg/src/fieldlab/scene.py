"""Ground-truth tabletop world model.

Parametric scenes of primitives (box / cylinder / sphere) resting on a table
plane, each carrying appearance and physical properties: material class,
rigidity + stiffness, a discrete support-mass distribution and a friction
coefficient. Provides the surface-property oracle the simulated sensors
consult, the quasi-static stiction-force model (minimum lateral force over
candidate rotation centers plus pure translation), and post-push object
displacement.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import geom
from .backend import kernels

TABLE_ID = -1
NO_HIT_ID = -2
TABLE_STIFFNESS = 1.0e5   # N/m; anything >= poke threshold / poke depth
DEFAULT_MU = 0.204
DEFAULT_GRID = 81
DEFAULT_EPS_COF = 0.002   # m; pure translation admitted within this of the center of friction
DEFAULT_PUSH_STEP = 0.02  # m
UNIFORM_GRID = 5          # support-mass discretization per axis

_SHAPE_CODES = {"box": 0, "cylinder": 1, "sphere": 2}


class SceneError(ValueError):
    """Scene construction or lookup failure."""


class NoSurfaceError(SceneError):
    """Query point is farther than the surface tolerance from everything."""


class MechanicsError(SceneError):
    """Invalid push configuration for the stiction model."""


@dataclass(frozen=True)
class SurfaceTruth:
    object_id: int          # TABLE_ID for the table (or out-of-reach points)
    material_id: int
    rigid: bool
    albedo: np.ndarray


@dataclass(frozen=True)
class PushMove:
    """Rigid displacement applied by one push."""
    translation: np.ndarray          # world xy
    rotation_center: np.ndarray | None  # None for pure translation
    angle: float
    clipped: bool


@dataclass(frozen=True)
class SceneObject:
    id: int
    shape: str                 # box | cylinder | sphere
    size: np.ndarray           # box: half extents; cylinder: (r, half_h, 0); sphere: (r, 0, 0)
    rotation: np.ndarray       # 3x3, must keep local z vertical
    translation: np.ndarray
    albedo: np.ndarray
    material_id: int
    rigid: bool
    stiffness: float
    support_masses: np.ndarray  # (K, 4): mass, offset xyz in object frame
    mu: float

    def __post_init__(self):
        if self.shape not in _SHAPE_CODES:
            raise SceneError(f"object {self.id}: unknown shape {self.shape!r}")
        if np.any(self.size[self._ndim()] <= 0):
            raise SceneError(f"object {self.id}: non-positive dimension")
        if self.stiffness <= 0 or self.mu < 0:
            raise SceneError(f"object {self.id}: stiffness must be > 0, mu >= 0")
        if self.support_masses.ndim != 2 or self.support_masses.shape[0] < 1:
            raise SceneError(f"object {self.id}: need at least one support mass")
        if np.any(self.support_masses[:, 0] <= 0):
            raise SceneError(f"object {self.id}: masses must be positive")
        if not geom.is_upright(self.rotation, tol=1e-6):
            raise SceneError(f"object {self.id}: pose must keep the shape axis vertical")
        tol = 1e-6
        for k in range(self.support_masses.shape[0]):
            off = self.support_masses[k, 1:3]
            if self.footprint_sdf_local(off) > tol:
                raise SceneError(f"object {self.id}: support mass {k} outside footprint")

    def _ndim(self):
        return {"box": slice(0, 3), "cylinder": slice(0, 2), "sphere": slice(0, 1)}[self.shape]

    @property
    def total_mass(self) -> float:
        return float(self.support_masses[:, 0].sum())

    @property
    def half_height(self) -> float:
        if self.shape == "box":
            return float(self.size[2])
        if self.shape == "cylinder":
            return float(self.size[1])
        return float(self.size[0])

    @property
    def yaw(self) -> float:
        return geom.yaw_of(self.rotation)

    def footprint_sdf_local(self, p_xy) -> float:
        """Signed distance of a local-frame 2D point to the footprint boundary."""
        if self.shape == "box":
            return geom.rect_sdf(np.asarray(p_xy, float), self.size[0], self.size[1])
        return geom.circle_sdf(np.asarray(p_xy, float), float(self.size[0]))

    def footprint_sdf_world(self, p_xy) -> float:
        rel = geom.rot2d(-self.yaw) @ (np.asarray(p_xy, float) - self.translation[:2])
        return self.footprint_sdf_local(rel)

    def footprint_half_extents(self) -> np.ndarray:
        """Local-frame half extents of the footprint bounding box."""
        if self.shape == "box":
            return self.size[:2].copy()
        return np.array([self.size[0], self.size[0]])

    def support_world_xy(self) -> tuple[np.ndarray, np.ndarray]:
        """(masses, world xy positions) of the support points."""
        pts = self.support_masses[:, 1:4] @ self.rotation.T + self.translation
        return self.support_masses[:, 0].copy(), pts[:, :2].copy()

    def center_of_friction(self) -> np.ndarray:
        m, xy = self.support_world_xy()
        return (m[:, None] * xy).sum(axis=0) / m.sum()

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        h = self.footprint_half_extents()
        r2 = np.abs(geom.rot2d(self.yaw))
        ext = r2 @ h
        lo = np.array([self.translation[0] - ext[0], self.translation[1] - ext[1],
                       self.translation[2] - self.half_height])
        hi = np.array([self.translation[0] + ext[0], self.translation[1] + ext[1],
                       self.translation[2] + self.half_height])
        return lo, hi


def _footprints_collide(a: SceneObject, b: SceneObject, margin: float) -> bool:
    ca, cb = a.translation[:2], b.translation[:2]
    box_a, box_b = a.shape == "box", b.shape == "box"
    if box_a and box_b:
        return geom.rects_overlap(ca, a.yaw, a.size[:2], cb, b.yaw, b.size[:2], margin)
    if box_a:
        return geom.rect_circle_overlap(ca, a.yaw, a.size[:2], cb, float(b.size[0]), margin)
    if box_b:
        return geom.rect_circle_overlap(cb, b.yaw, b.size[:2], ca, float(a.size[0]), margin)
    return geom.circles_overlap(ca, float(a.size[0]), cb, float(b.size[0]), margin)


@dataclass
class Scene:
    objects: list[SceneObject]
    table_height: float = 0.0
    table_albedo: np.ndarray = field(default_factory=lambda: np.array([0.45, 0.42, 0.38]))
    table_material: int = 0
    reach_center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    reach_radius: float = 0.5
    gravity: float = 9.81
    material_names: list[str] = field(default_factory=lambda: ["table"])

    def __post_init__(self):
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise SceneError("object ids must be unique")
        for o in self.objects:
            low = o.translation[2] - o.half_height
            if abs(low - self.table_height) > 1e-6:
                raise SceneError(f"object {o.id}: not resting on the table plane")
        for i, a in enumerate(self.objects):
            for b in self.objects[i + 1:]:
                if _footprints_collide(a, b, margin=-1e-9):
                    raise SceneError(f"objects {a.id} and {b.id} interpenetrate")
        self._packed = None

    def object_by_id(self, object_id: int) -> SceneObject:
        for o in self.objects:
            if o.id == object_id:
                return o
        raise SceneError(f"no object with id {object_id}")

    def packed(self):
        """Primitive arrays for the raycast kernel (cached)."""
        if self._packed is None:
            n = len(self.objects)
            types = np.empty(n, dtype=np.int64)
            params = np.zeros((n, 3))
            rot_lw = np.zeros((n, 3, 3))
            trans = np.zeros((n, 3))
            albedo = np.zeros((n, 3))
            material = np.zeros(n, dtype=np.int64)
            rigid = np.zeros(n, dtype=bool)
            ids = np.zeros(n, dtype=np.int64)
            for i, o in enumerate(self.objects):
                types[i] = _SHAPE_CODES[o.shape]
                params[i] = o.size
                rot_lw[i] = o.rotation.T
                trans[i] = o.translation
                albedo[i] = o.albedo
                material[i] = o.material_id
                rigid[i] = o.rigid
                ids[i] = o.id
            self._packed = (types, params, rot_lw, trans, albedo, material, rigid, ids)
        return self._packed

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounds covering the reach disk and every object."""
        lo = np.array([self.reach_center[0] - self.reach_radius,
                       self.reach_center[1] - self.reach_radius,
                       self.table_height - 0.05])
        hi = np.array([self.reach_center[0] + self.reach_radius,
                       self.reach_center[1] + self.reach_radius,
                       self.table_height + 0.3])
        for o in self.objects:
            olo, ohi = o.aabb()
            lo = np.minimum(lo, olo)
            hi = np.maximum(hi, ohi)
        return lo, hi

    def with_object(self, obj: SceneObject) -> "Scene":
        objs = [obj if o.id == obj.id else o for o in self.objects]
        return replace(self, objects=objs)


# --- construction from config -------------------------------------------------

def _uniform_support(obj_shape: str, size: np.ndarray, mass: float,
                     half_height: float) -> np.ndarray:
    """Point-mass grid over the footprint (UNIFORM_GRID x UNIFORM_GRID)."""
    g = UNIFORM_GRID
    if obj_shape == "box":
        xs = np.linspace(-size[0], size[0], g + 2)[1:-1]
        ys = np.linspace(-size[1], size[1], g + 2)[1:-1]
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    else:
        r = float(size[0])
        xs = np.linspace(-r, r, g + 2)[1:-1]
        gx, gy = np.meshgrid(xs, xs, indexing="ij")
        keep = gx ** 2 + gy ** 2 <= r ** 2 * (1 - 1e-9)
        pts = np.stack([gx[keep], gy[keep]], axis=1)
    k = pts.shape[0]
    out = np.zeros((k, 4))
    out[:, 0] = mass / k
    out[:, 1:3] = pts
    out[:, 3] = -half_height
    return out


def _parse_masses(spec, obj_shape, size, half_height, obj_id) -> np.ndarray:
    if isinstance(spec, (int, float)):
        spec = {"uniform": float(spec)}
    rows = []
    if isinstance(spec, dict):
        if "uniform" in spec:
            rows.append(_uniform_support(obj_shape, size, float(spec["uniform"]), half_height))
        for m, off in spec.get("points", []):
            off = list(off) + [0.0] * (3 - len(off))
            rows.append(np.array([[float(m), off[0], off[1], off[2]]]))
    elif isinstance(spec, list):
        for m, off in spec:
            off = list(off) + [0.0] * (3 - len(off))
            rows.append(np.array([[float(m), off[0], off[1], off[2]]]))
    if not rows:
        raise SceneError(f"object {obj_id}: empty mass specification")
    return np.concatenate(rows, axis=0)


def _parse_object(cfg: dict, table_height: float) -> SceneObject:
    oid = int(cfg["id"])
    shape_cfg = cfg["shape"]
    kind = shape_cfg["type"]
    if kind == "box":
        size = np.asarray(shape_cfg["half_extents"], dtype=float)
    elif kind == "cylinder":
        size = np.array([shape_cfg["radius"], shape_cfg["height"] / 2.0, 0.0])
    elif kind == "sphere":
        size = np.array([shape_cfg["radius"], 0.0, 0.0])
    else:
        raise SceneError(f"object {oid}: unknown shape {kind!r}")
    pose = cfg.get("pose", {})
    pos = list(pose.get("position", [0.0, 0.0]))
    yaw = float(pose.get("yaw_deg", 0.0)) * np.pi / 180.0
    half_h = {"box": size[2], "cylinder": size[1], "sphere": size[0]}[kind]
    if len(pos) < 3:
        pos = pos + [table_height + half_h]   # auto-seat on the table
    masses = _parse_masses(cfg.get("masses", 1.0), kind, size, half_h, oid)
    return SceneObject(
        id=oid, shape=kind, size=size,
        rotation=geom.rot_z(yaw), translation=np.asarray(pos, dtype=float),
        albedo=np.asarray(cfg.get("albedo", [0.5, 0.5, 0.5]), dtype=float),
        material_id=int(cfg.get("material", 0)),
        rigid=bool(cfg.get("rigid", True)),
        stiffness=float(cfg.get("stiffness", 1e4)),
        support_masses=masses,
        mu=float(cfg.get("mu", DEFAULT_MU)),
    )


def build_scene(config: dict) -> Scene:
    """Validated Scene from a parsed SceneConfig document."""
    table = config.get("table", {})
    reach = config.get("reach", {})
    table_height = float(table.get("height", 0.0))
    objects = [_parse_object(c, table_height) for c in config.get("objects", [])]
    return Scene(
        objects=objects,
        table_height=table_height,
        table_albedo=np.asarray(table.get("albedo", [0.45, 0.42, 0.38]), dtype=float),
        table_material=int(table.get("material", 0)),
        reach_center=np.asarray(reach.get("center", [0.0, 0.0, table_height]), dtype=float),
        reach_radius=float(reach.get("radius", 0.5)),
        gravity=float(config.get("gravity", 9.81)),
        material_names=list(config.get("materials", ["table"])),
    )


def load_scene(path) -> Scene:
    with open(path) as f:
        return build_scene(json.load(f))


def scene_to_config(scene: Scene) -> dict:
    """Round-trippable config document (support masses become explicit points)."""
    objects = []
    for o in scene.objects:
        if o.shape == "box":
            shape = {"type": "box", "half_extents": [float(x) for x in o.size]}
        elif o.shape == "cylinder":
            shape = {"type": "cylinder", "radius": float(o.size[0]),
                     "height": float(2 * o.size[1])}
        else:
            shape = {"type": "sphere", "radius": float(o.size[0])}
        objects.append({
            "id": o.id, "shape": shape,
            "pose": {"position": [float(x) for x in o.translation],
                     "yaw_deg": float(np.rad2deg(o.yaw))},
            "albedo": [float(x) for x in o.albedo],
            "material": o.material_id, "rigid": o.rigid,
            "stiffness": o.stiffness,
            "masses": [[float(m), [float(x), float(y), float(z)]]
                       for m, x, y, z in o.support_masses],
            "mu": o.mu,
        })
    return {
        "table": {"height": scene.table_height,
                  "albedo": [float(x) for x in scene.table_albedo],
                  "material": scene.table_material},
        "reach": {"center": [float(x) for x in scene.reach_center],
                  "radius": scene.reach_radius},
        "gravity": scene.gravity,
        "materials": list(scene.material_names),
        "objects": objects,
    }


# --- surface-property oracle ---------------------------------------------------

_SURFACE_TOL = 0.01  # m


def _object_surface_distance(o: SceneObject, p: np.ndarray) -> float:
    local = o.rotation.T @ (p - o.translation)
    if o.shape == "box":
        q = np.abs(local) - o.size
        sdf = np.linalg.norm(np.maximum(q, 0.0)) + min(q.max(), 0.0)
    elif o.shape == "cylinder":
        dr = np.hypot(local[0], local[1]) - o.size[0]
        dz = abs(local[2]) - o.size[1]
        sdf = min(max(dr, dz), 0.0) + np.hypot(max(dr, 0.0), max(dz, 0.0))
    else:
        sdf = np.linalg.norm(local) - o.size[0]
    return abs(float(sdf))


def point_properties(scene: Scene, p) -> SurfaceTruth:
    """Ground-truth properties of the surface nearest to p (within 1 cm).

    Points whose nearest surface is the table, or that lie beyond the reach
    radius, report the table class regardless of what they touch.
    """
    p = np.asarray(p, dtype=float)
    best = abs(p[2] - scene.table_height)
    best_obj = None
    for o in scene.objects:
        d = _object_surface_distance(o, p)
        if d < best:
            best = d
            best_obj = o
    if best > _SURFACE_TOL:
        raise NoSurfaceError(f"point {p.tolist()} is {best:.3f} m from any surface")
    out_of_reach = np.linalg.norm(p - scene.reach_center) > scene.reach_radius
    if best_obj is None or out_of_reach:
        return SurfaceTruth(TABLE_ID, scene.table_material, True, scene.table_albedo.copy())
    return SurfaceTruth(best_obj.id, best_obj.material_id, best_obj.rigid,
                        best_obj.albedo.copy())


# --- quasi-static stiction model -----------------------------------------------

def _push_setup(scene: Scene, object_id: int, contact, push_dir):
    obj = scene.object_by_id(object_id)
    if not obj.rigid:
        raise MechanicsError(f"object {object_id} is deformable; lateral pushes need a rigid target")
    c = np.asarray(contact, dtype=float)[:2]
    d = np.asarray(push_dir, dtype=float)[:2]
    n = np.linalg.norm(d)
    if n < 1e-12:
        raise MechanicsError("zero push direction")
    d = d / n
    sdf_here = obj.footprint_sdf_world(c)
    if abs(sdf_here) > 0.02:
        raise MechanicsError(f"contact is {sdf_here:.3f} m from the footprint of object {object_id}")
    if obj.footprint_sdf_world(c + 1e-4 * d) >= sdf_here:
        raise MechanicsError("push direction does not point into the object footprint")
    return obj, c, d


def _rotation_candidates(obj: SceneObject, grid_n: int) -> np.ndarray:
    """World-frame rotation-center grid: 2x the footprint bbox, object-aligned.

    Building the grid in the object frame keeps the force invariant under
    rigid transformation of the whole scene.
    """
    h = obj.footprint_half_extents() * 2.0
    xs = np.linspace(-h[0], h[0], grid_n)
    ys = np.linspace(-h[1], h[1], grid_n)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    local = np.stack([gx.ravel(), gy.ravel()], axis=1)
    return local @ geom.rot2d(obj.yaw).T + obj.translation[:2]


def _stiction_solve(scene: Scene, object_id: int, contact, push_dir,
                    grid_n: int = DEFAULT_GRID, eps_cof: float = DEFAULT_EPS_COF):
    """(force, rotation center or None-for-translation)."""
    obj, c, d = _push_setup(scene, object_id, contact, push_dir)
    masses, pos_xy = obj.support_world_xy()
    mu_g = obj.mu * scene.gravity
    cof = (masses[:, None] * pos_xy).sum(axis=0) / masses.sum()
    rel = cof - c
    cof_offset = abs(rel[0] * d[1] - rel[1] * d[0])
    f_trans = mu_g * masses.sum() if cof_offset <= eps_cof else np.inf

    q_grid = _rotation_candidates(obj, grid_n)
    forces = kernels().stiction_grid(masses, pos_xy, q_grid, c, d, mu_g)
    i_best = int(np.argmin(forces))
    f_rot = float(forces[i_best])
    if not np.isfinite(f_rot) and not np.isfinite(f_trans):
        raise MechanicsError("no admissible motion candidate for this push")
    if f_trans <= f_rot:
        return float(f_trans), None
    return f_rot, q_grid[i_best]


def stiction_force(scene: Scene, object_id: int, contact, push_dir,
                   grid_n: int = DEFAULT_GRID, eps_cof: float = DEFAULT_EPS_COF) -> float:
    """Minimum horizontal force starting quasi-static motion of the object.

    Minimizes F(q) = mu*g*sum_i m_i*d(r_i, q) / arm(q) over an object-aligned
    grid of rotation centers q (2x footprint bbox, grid_n per axis), plus the
    pure-translation candidate mu*g*M when the push line passes within
    eps_cof of the center of friction.
    """
    force, _ = _stiction_solve(scene, object_id, contact, push_dir, grid_n, eps_cof)
    return force


def apply_push_displacement(scene: Scene, object_id: int, contact, push_dir,
                            step: float = DEFAULT_PUSH_STEP,
                            grid_n: int = DEFAULT_GRID,
                            eps_cof: float = DEFAULT_EPS_COF) -> tuple[Scene, PushMove]:
    """Scene after pushing the object by ``step`` along push_dir.

    Pure translation when the solve picks the translation candidate;
    otherwise a rotation about the minimizing center q* by step/|contact-q*|
    in the sense driven by the push. If the moved object would interpenetrate
    a neighbour the displacement is bisected back to contact and flagged.
    """
    _, q_star = _stiction_solve(scene, object_id, contact, push_dir, grid_n, eps_cof)
    obj = scene.object_by_id(object_id)
    c = np.asarray(contact, dtype=float)[:2]
    d = np.asarray(push_dir, dtype=float)[:2]
    d = d / np.linalg.norm(d)

    if q_star is not None:
        arm = c - q_star
        sense = np.sign(arm[0] * d[1] - arm[1] * d[0])
        ang_unit = step / max(np.linalg.norm(arm), 1e-9) * (sense if sense != 0 else 1.0)

    def moved(scale: float) -> tuple[SceneObject, float]:
        if q_star is None:
            delta = scale * step * d
            t = obj.translation + np.array([delta[0], delta[1], 0.0])
            return replace(obj, translation=t), 0.0
        ang = scale * ang_unit
        r2 = geom.rot2d(ang)
        new_xy = q_star + r2 @ (obj.translation[:2] - q_star)
        t = np.array([new_xy[0], new_xy[1], obj.translation[2]])
        return replace(obj, rotation=geom.rot_z(ang) @ obj.rotation, translation=t), ang

    others = [o for o in scene.objects if o.id != object_id]

    def free(scale: float) -> bool:
        cand, _ = moved(scale)
        return not any(_footprints_collide(cand, o, margin=-1e-9) for o in others)

    scale = 1.0
    clipped = False
    if step > 0 and not free(1.0):
        clipped = True
        lo_s, hi_s = 0.0, 1.0
        for _ in range(30):
            mid = 0.5 * (lo_s + hi_s)
            if free(mid):
                lo_s = mid
            else:
                hi_s = mid
        scale = lo_s
    new_obj, angle = moved(scale)
    # re-seat on the table (no-op for upright yaw rotations, kept for safety)
    z = scene.table_height + new_obj.half_height
    new_obj = replace(new_obj, translation=np.array([new_obj.translation[0],
                                                     new_obj.translation[1], z]))
    move = PushMove(
        translation=new_obj.translation[:2] - obj.translation[:2],
        rotation_center=None if q_star is None else q_star.copy(),
        angle=angle,
        clipped=clipped,
    )
    return scene.with_object(new_obj), move


def transform_point_by_move(p, move: PushMove) -> np.ndarray:
    """Where a world point attached to the pushed object lands after the move."""
    p = np.asarray(p, dtype=float)
    if move.rotation_center is None:
        return p + np.array([move.translation[0], move.translation[1], 0.0])
    r2 = geom.rot2d(move.angle)
    xy = move.rotation_center + r2 @ (p[:2] - move.rotation_center)
    return np.array([xy[0], xy[1], p[2]])
