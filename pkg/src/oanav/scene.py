"""Procedural furniture models, scene description, and scenario generation.

Object models are simple box compositions in a canonical frame: +x forward,
origin at the footprint center, z = 0 on the ground. Chairs get a back rest
(so front and back are distinguishable); tables are two-fold symmetric.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import OrientedBox3, PointCloud, YawPose, wrap_angle

# Point labels used by the simulator and the binary cloud format.
GROUND_LABEL = 0
STRUCTURE_LABEL = 1
INSTANCE_OFFSET = 2  # object instance i is labeled INSTANCE_OFFSET + i

CHAIR = "chair"
TABLE = "table"
CLASSES = (CHAIR, TABLE)


@dataclass(frozen=True)
class CadModel:
    """Triangle mesh plus densely sampled surface points with normals."""

    cls: str
    mesh: np.ndarray          # (T, 3, 3) vertices, outward winding
    samples: PointCloud       # on-surface points with outward unit normals
    nominal_size: np.ndarray  # AABB extents (3,)
    seed: int

    @property
    def key(self) -> str:
        return f"{self.cls}-{self.seed}"

    @property
    def packed_mesh(self) -> np.ndarray:
        return self.mesh.reshape(-1, 9)

    @property
    def aabb_center(self) -> np.ndarray:
        """AABB center in the canonical frame (maps box centers to poses)."""
        v = self.mesh.reshape(-1, 3)
        return (v.min(axis=0) + v.max(axis=0)) / 2.0

    def box_at(self, pose: YawPose) -> OrientedBox3:
        """Nominal-size bounding box of the model placed at a ground pose."""
        center = pose.to_pose3().apply(self.aabb_center)
        return OrientedBox3(center, self.nominal_size, pose.yaw)


def _quad(c0, c1, c2, c3) -> list:
    """Two triangles for a quad whose corners are CCW seen from outside."""
    return [np.array([c0, c1, c2]), np.array([c0, c2, c3])]


def box_mesh(center, size) -> np.ndarray:
    """12 outward-facing triangles of an axis-aligned box, (12, 3, 3)."""
    cx, cy, cz = center
    hx, hy, hz = np.asarray(size) / 2.0
    lo = np.array([cx - hx, cy - hy, cz - hz])
    hi = np.array([cx + hx, cy + hy, cz + hz])

    def p(ix, iy, iz):
        return np.array([hi[0] if ix else lo[0],
                         hi[1] if iy else lo[1],
                         hi[2] if iz else lo[2]])

    tris = []
    tris += _quad(p(1, 0, 0), p(1, 1, 0), p(1, 1, 1), p(1, 0, 1))  # +x
    tris += _quad(p(0, 1, 0), p(0, 0, 0), p(0, 0, 1), p(0, 1, 1))  # -x
    tris += _quad(p(1, 1, 0), p(0, 1, 0), p(0, 1, 1), p(1, 1, 1))  # +y
    tris += _quad(p(0, 0, 0), p(1, 0, 0), p(1, 0, 1), p(0, 0, 1))  # -y
    tris += _quad(p(0, 0, 1), p(1, 0, 1), p(1, 1, 1), p(0, 1, 1))  # +z
    tris += _quad(p(0, 1, 0), p(1, 1, 0), p(1, 0, 0), p(0, 0, 0))  # -z
    return np.array(tris)


def mesh_area(mesh: np.ndarray) -> float:
    e1 = mesh[:, 1] - mesh[:, 0]
    e2 = mesh[:, 2] - mesh[:, 0]
    return float(np.linalg.norm(np.cross(e1, e2), axis=1).sum() / 2.0)


def sample_surface(mesh: np.ndarray, density: float,
                   rng: np.random.Generator) -> PointCloud:
    """Area-weighted uniform surface sampling with per-triangle normals.

    The total count is round(area * density), split across triangles by a
    multinomial draw on relative areas.
    """
    if density <= 0:
        raise ValueError("density must be positive")
    e1 = mesh[:, 1] - mesh[:, 0]
    e2 = mesh[:, 2] - mesh[:, 0]
    cross = np.cross(e1, e2)
    areas = np.linalg.norm(cross, axis=1) / 2.0
    total_area = areas.sum()
    n = int(round(total_area * density))
    counts = rng.multinomial(n, areas / total_area)
    normals_tri = cross / np.linalg.norm(cross, axis=1, keepdims=True)

    pts, nrm = [], []
    for t, k in enumerate(counts):
        if k == 0:
            continue
        u = rng.uniform(size=k)
        v = rng.uniform(size=k)
        fold = u + v > 1.0
        u[fold] = 1.0 - u[fold]
        v[fold] = 1.0 - v[fold]
        pts.append(mesh[t, 0] + u[:, None] * e1[t] + v[:, None] * e2[t])
        nrm.append(np.tile(normals_tri[t], (k, 1)))
    if not pts:
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3)))
    return PointCloud(np.vstack(pts), np.vstack(nrm))


_MIN_MODEL_SAMPLES = 2000


def _build_model(cls: str, mesh: np.ndarray, seed: int) -> CadModel:
    area = mesh_area(mesh)
    density = max(1600.0, (_MIN_MODEL_SAMPLES + 200) / area)
    samples = sample_surface(mesh, density, np.random.default_rng(seed + 7919))
    v = mesh.reshape(-1, 3)
    nominal = v.max(axis=0) - v.min(axis=0)
    return CadModel(cls, mesh, samples, nominal, seed)


def make_chair(seed: int = 0) -> CadModel:
    """Chair: seat, back rest (at -x), four legs. Asymmetric front/back."""
    rng = np.random.default_rng(seed)
    j = lambda: 1.0 + rng.uniform(-0.03, 0.03)
    depth, width = 0.5 * j(), 0.5 * j()
    seat_h, total_h = 0.42 * j(), 0.9 * j()
    seat_t, back_t, leg = 0.05, 0.06, 0.045

    parts = [
        box_mesh((0.0, 0.0, seat_h - seat_t / 2.0), (depth, width, seat_t)),
        box_mesh((-depth / 2.0 + back_t / 2.0, 0.0, (seat_h + total_h) / 2.0),
                 (back_t, width, total_h - seat_h)),
    ]
    leg_h = seat_h - seat_t
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            parts.append(box_mesh((sx * (depth - leg) / 2.0,
                                   sy * (width - leg) / 2.0,
                                   leg_h / 2.0), (leg, leg, leg_h)))
    return _build_model(CHAIR, np.vstack(parts), seed)


def make_table(seed: int = 0) -> CadModel:
    """Table: top plus four corner legs; two-fold rotationally symmetric."""
    rng = np.random.default_rng(seed)
    j = lambda: 1.0 + rng.uniform(-0.03, 0.03)
    length, width, height = 1.2 * j(), 0.8 * j(), 0.75 * j()
    top_t, leg, inset = 0.05, 0.06, 0.08

    parts = [box_mesh((0.0, 0.0, height - top_t / 2.0), (length, width, top_t))]
    leg_h = height - top_t
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            parts.append(box_mesh((sx * (length / 2.0 - inset - leg / 2.0),
                                   sy * (width / 2.0 - inset - leg / 2.0),
                                   leg_h / 2.0), (leg, leg, leg_h)))
    return _build_model(TABLE, np.vstack(parts), seed)


def make_model(cls: str, seed: int = 0) -> CadModel:
    if cls == CHAIR:
        return make_chair(seed)
    if cls == TABLE:
        return make_table(seed)
    raise ValueError(f"unknown model class {cls!r}")


class ModelDb:
    """Cache of CAD models keyed by (class, seed)."""

    def __init__(self):
        self._models: dict[tuple[str, int], CadModel] = {}

    def get(self, cls: str, seed: int = 0) -> CadModel:
        key = (cls, seed)
        if key not in self._models:
            self._models[key] = make_model(cls, seed)
        return self._models[key]

    def models_of_class(self, cls: str) -> list[CadModel]:
        return [m for m in self._models.values() if m.cls == cls]

    def best_match(self, cls: str, size: np.ndarray) -> CadModel:
        """Model of the class whose nominal size is closest to `size`."""
        candidates = self.models_of_class(cls)
        if not candidates:
            return self.get(cls, 0)
        return min(candidates,
                   key=lambda m: float(np.abs(m.nominal_size - size).sum()))


@dataclass(frozen=True)
class SceneObject:
    cls: str
    pose: YawPose          # ground pose, z = 0
    model_seed: int
    instance_id: int

    @property
    def label(self) -> int:
        return INSTANCE_OFFSET + self.instance_id


@dataclass
class Scene:
    """Static indoor scene: bounds, walls, furniture, route."""

    bounds: tuple[float, float, float, float]   # xmin, ymin, xmax, ymax
    walls: list[np.ndarray]                     # each (2, 3): [min, max]
    objects: list[SceneObject]
    robot_start: YawPose
    waypoints: np.ndarray                       # (K, 2)
    density: str = "custom"
    con_feasible: bool = True

    def object_box(self, obj: SceneObject, models: ModelDb) -> OrientedBox3:
        return models.get(obj.cls, obj.model_seed).box_at(obj.pose)

    def validate(self, models: ModelDb) -> None:
        """Raise if objects overlap, float, or leave the bounds."""
        ids = [o.instance_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError("instance ids must be unique")
        boxes = [self.object_box(o, models) for o in self.objects]
        for i, a in enumerate(boxes):
            if abs(self.objects[i].pose.z) > 1e-9:
                raise ValueError("objects must rest on the ground plane")
            for b in boxes[i + 1:]:
                if footprint_separation(a, b) < 0.05 - 1e-9:
                    raise ValueError("object footprints too close")

    def to_dict(self) -> dict:
        return {
            "format": 1,
            "bounds": list(self.bounds),
            "walls": [[list(w[0]), list(w[1])] for w in self.walls],
            "objects": [
                {"class": o.cls, "x": o.pose.x, "y": o.pose.y, "yaw": o.pose.yaw,
                 "model_seed": o.model_seed, "id": o.instance_id}
                for o in self.objects
            ],
            "robot_start": {"x": self.robot_start.x, "y": self.robot_start.y,
                            "yaw": self.robot_start.yaw},
            "waypoints": [list(map(float, w)) for w in self.waypoints],
            "density": self.density,
            "con_feasible": self.con_feasible,
        }

    @staticmethod
    def from_dict(d: dict) -> "Scene":
        if d.get("format") != 1:
            raise ValueError(f"unsupported scene format {d.get('format')!r}")
        return Scene(
            bounds=tuple(d["bounds"]),
            walls=[np.array(w, dtype=float) for w in d["walls"]],
            objects=[SceneObject(o["class"],
                                 YawPose(o["x"], o["y"], 0.0, o["yaw"]),
                                 int(o["model_seed"]), int(o["id"]))
                     for o in d["objects"]],
            robot_start=YawPose(d["robot_start"]["x"], d["robot_start"]["y"],
                                0.0, d["robot_start"]["yaw"]),
            waypoints=np.array(d["waypoints"], dtype=float).reshape(-1, 2),
            density=d.get("density", "custom"),
            con_feasible=bool(d.get("con_feasible", True)),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @staticmethod
    def load(path) -> "Scene":
        return Scene.from_dict(json.loads(Path(path).read_text()))


def footprint_separation(a: OrientedBox3, b: OrientedBox3) -> float:
    """Minimum xy distance between two box footprints (0 if overlapping)."""
    pa = a.footprint_corners()
    pb = b.footprint_corners()
    if _footprints_overlap(pa, pb):
        return 0.0
    best = math.inf
    for p in pa:
        for q0, q1 in zip(pb, np.roll(pb, -1, axis=0)):
            best = min(best, _point_segment_dist(p, q0, q1))
    for p in pb:
        for q0, q1 in zip(pa, np.roll(pa, -1, axis=0)):
            best = min(best, _point_segment_dist(p, q0, q1))
    return best


def _footprints_overlap(pa: np.ndarray, pb: np.ndarray) -> bool:
    # Separating-axis test for two convex quads.
    for poly_pair in ((pa, pb), (pb, pa)):
        edges = np.roll(poly_pair[0], -1, axis=0) - poly_pair[0]
        for e in edges:
            axis = np.array([-e[1], e[0]])
            p0 = poly_pair[0] @ axis
            p1 = poly_pair[1] @ axis
            if p0.max() < p1.min() or p1.max() < p0.min():
                return False
    return True


def _point_segment_dist(p, a, b) -> float:
    ab = b - a
    t = float(np.clip((p - a) @ ab / max(ab @ ab, 1e-12), 0.0, 1.0))
    return float(np.linalg.norm(a + t * ab - p))


# ---------------------------------------------------------------------------
# Packed world geometry for the raycast kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RaycastGeometry:
    """Scene geometry packed into flat arrays for the raycast kernels."""

    aabbs: np.ndarray        # (B, 6) walls
    aabb_labels: np.ndarray  # (B,) int32
    tri_verts: np.ndarray    # (T, 9) object triangles in world frame
    group_start: np.ndarray  # (G+1,) int64
    group_aabbs: np.ndarray  # (G, 6)
    group_labels: np.ndarray  # (G,) int32
    ground_z: float = 0.0


def build_raycast_geometry(scene: Scene, models: ModelDb) -> RaycastGeometry:
    aabbs = (np.array([np.concatenate([w[0], w[1]]) for w in scene.walls])
             if scene.walls else np.zeros((0, 6)))
    aabb_labels = np.full(len(scene.walls), STRUCTURE_LABEL, dtype=np.int32)

    tri_chunks, starts, g_aabbs, g_labels = [], [0], [], []
    total = 0
    for obj in scene.objects:
        model = models.get(obj.cls, obj.model_seed)
        pose = obj.pose.to_pose3()
        world = pose.apply(model.mesh.reshape(-1, 3)).reshape(-1, 3, 3)
        tri_chunks.append(world.reshape(-1, 9))
        total += len(world)
        starts.append(total)
        flat = world.reshape(-1, 3)
        g_aabbs.append(np.concatenate([flat.min(axis=0), flat.max(axis=0)]))
        g_labels.append(obj.label)
    return RaycastGeometry(
        aabbs=aabbs,
        aabb_labels=aabb_labels,
        tri_verts=(np.vstack(tri_chunks) if tri_chunks else np.zeros((0, 9))),
        group_start=np.array(starts, dtype=np.int64),
        group_aabbs=(np.array(g_aabbs) if g_aabbs else np.zeros((0, 6))),
        group_labels=np.array(g_labels, dtype=np.int32),
    )


def perimeter_walls(bounds, thickness: float = 0.1,
                    height: float = 2.5) -> list[np.ndarray]:
    x0, y0, x1, y1 = bounds
    t = thickness
    return [
        np.array([[x0 - t, y0 - t, 0.0], [x1 + t, y0, height]]),
        np.array([[x0 - t, y1, 0.0], [x1 + t, y1 + t, height]]),
        np.array([[x0 - t, y0, 0.0], [x0, y1, height]]),
        np.array([[x1, y0, 0.0], [x1 + t, y1, height]]),
    ]


# ---------------------------------------------------------------------------
# Scenario randomization
# ---------------------------------------------------------------------------

@dataclass
class SceneConfig:
    n_chairs: int = 6
    n_tables: int = 2
    bounds: tuple[float, float, float, float] = (0.0, 0.0, 11.0, 8.0)
    seed: int = 0
    density: str = "custom"          # sparse | medium | dense | custom
    divider_gap: float | None = None  # doorway width; None = no divider
    n_waypoints: int = 2
    max_attempts: int = 400
    # The shortest semantics-free route must cross at least this much
    # affordance region, so planner comparisons are never vacuous.
    min_risk_exposure: float = 0.3


DENSITY_PRESETS = {
    "sparse": dict(n_chairs=(3, 5), n_tables=(1, 2), divider_gap=None),
    "medium": dict(n_chairs=(6, 9), n_tables=(2, 3), divider_gap=(2.0, 2.6)),
    "dense": dict(n_chairs=(8, 11), n_tables=(2, 4), divider_gap=(1.0, 1.25)),
}


def randomize_scene(config: SceneConfig, models: ModelDb | None = None) -> Scene:
    """Generate a random valid scene with a feasibility-checked route.

    Placements never overlap (footprint separation >= 0.05 m), the route is
    always traversable with single-radius clearance while avoiding every
    affordance region, and dense scenes include a doorway too narrow for
    triple-radius clearance (so the conservative planner cannot pass).
    """
    from . import costmap as cm  # local import: generation needs planning maps

    models = models or ModelDb()
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    if cfg.density in DENSITY_PRESETS:
        preset = DENSITY_PRESETS[cfg.density]
        lo, hi = preset["n_chairs"]
        cfg_chairs = int(rng.integers(lo, hi + 1))
        lo, hi = preset["n_tables"]
        cfg_tables = int(rng.integers(lo, hi + 1))
        gap_range = preset["divider_gap"]
        gap = None if gap_range is None else float(rng.uniform(*gap_range))
    else:
        cfg_chairs, cfg_tables, gap = cfg.n_chairs, cfg.n_tables, cfg.divider_gap

    for attempt in range(cfg.max_attempts):
        scene = _try_generate(cfg, cfg_chairs, cfg_tables, gap, rng, models, cm)
        if scene is not None:
            return scene
    raise RuntimeError(f"scene generation failed after {cfg.max_attempts} attempts")


def _divider_walls(bounds, gap_width: float, gap_y: float,
                   x: float) -> list[np.ndarray]:
    x0, y0, x1, y1 = bounds
    t = 0.1
    lo = gap_y - gap_width / 2.0
    hi = gap_y + gap_width / 2.0
    walls = []
    if lo > y0 + 0.05:
        walls.append(np.array([[x - t / 2, y0, 0.0], [x + t / 2, lo, 2.5]]))
    if hi < y1 - 0.05:
        walls.append(np.array([[x - t / 2, hi, 0.0], [x + t / 2, y1, 2.5]]))
    return walls


def _try_generate(cfg, n_chairs, n_tables, gap, rng, models, cm):
    x0, y0, x1, y1 = cfg.bounds
    walls = perimeter_walls(cfg.bounds)
    divider_x = None
    if gap is not None:
        divider_x = float(rng.uniform((x0 + x1) / 2 - 1.0, (x0 + x1) / 2 + 1.0))
        gap_y = float(rng.uniform(y0 + gap / 2 + 0.8, y1 - gap / 2 - 0.8))
        walls += _divider_walls(cfg.bounds, gap, gap_y, divider_x)
        channel = (divider_x, gap_y)
    else:
        channel = None

    # Place furniture with margins against walls and the doorway channel.
    placed: list[tuple[str, YawPose, int]] = []
    boxes: list[OrientedBox3] = []
    classes = [CHAIR] * n_chairs + [TABLE] * n_tables
    for cls in classes:
        seed_choice = int(rng.integers(0, 2))
        model = models.get(cls, seed_choice)
        ok = False
        for _ in range(80):
            px = float(rng.uniform(x0 + 0.8, x1 - 0.8))
            py = float(rng.uniform(y0 + 0.8, y1 - 0.8))
            yaw = float(rng.uniform(-math.pi, math.pi))
            pose = YawPose(px, py, 0.0, yaw)
            box = model.box_at(pose)
            if channel is not None:
                # Keep the doorway channel itself clear of furniture bodies
                # and their affordance halos.
                if abs(px - channel[0]) < 2.2 and abs(py - channel[1]) < 1.9:
                    continue
            if any(footprint_separation(box, other) < 0.05 for other in boxes):
                continue
            placed.append((cls, pose, seed_choice))
            boxes.append(box)
            ok = True
            break
        if not ok:
            return None

    objects = [SceneObject(cls, pose, seed, i)
               for i, (cls, pose, seed) in enumerate(placed)]
    scene = Scene(cfg.bounds, walls, objects, YawPose(0, 0, 0, 0),
                  np.zeros((0, 2)), density=cfg.density,
                  con_feasible=gap is None or gap >= 1.6)

    # Sample a start and waypoints in clear space, alternating sides of the
    # divider so the route must pass the doorway.
    free = cm.placement_validity_maps(scene, models)
    picks = _sample_route(scene, rng, free, divider_x, cfg.n_waypoints)
    if picks is None:
        return None
    start_xy, waypoints = picks
    yaw0 = math.atan2(waypoints[0][1] - start_xy[1], waypoints[0][0] - start_xy[0])
    scene.robot_start = YawPose(start_xy[0], start_xy[1], 0.0, yaw0)
    scene.waypoints = np.array(waypoints)

    if not cm.route_feasible(scene, models, conservative=False,
                             avoid_affordance=True):
        return None
    con_ok = cm.route_feasible(scene, models, conservative=True,
                               avoid_affordance=False)
    want_con = gap is None or gap >= 1.6
    if con_ok != want_con:
        return None
    if cm.oppo_risk_exposure(scene, models) < cfg.min_risk_exposure:
        return None
    scene.con_feasible = con_ok
    return scene


def _sample_route(scene, rng, free_mask_fn, divider_x, n_waypoints):
    x0, y0, x1, y1 = scene.bounds
    pts = []
    want = n_waypoints + 1
    for k in range(want):
        found = None
        for _ in range(120):
            px = float(rng.uniform(x0 + 0.9, x1 - 0.9))
            py = float(rng.uniform(y0 + 0.9, y1 - 0.9))
            if divider_x is not None:
                side = -1.0 if k % 2 == 0 else 1.0
                if (px - divider_x) * side > -0.9:
                    continue
            if not free_mask_fn(px, py):
                continue
            if any((px - q[0]) ** 2 + (py - q[1]) ** 2 < 2.5 ** 2 for q in pts):
                continue
            found = (px, py)
            break
        if found is None:
            return None
        pts.append(found)
    return pts[0], pts[1:]
