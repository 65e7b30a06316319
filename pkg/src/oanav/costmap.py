"""Occupancy costmaps: background obstacles with inflation, per-object
affordance layers attached to tracks, merged maps for planning, and the
ground-truth map builders shared by scenario generation and the benchmark's
risk accounting.

Cost convention follows the usual 2D navigation stack: 0 free, 1..252 soft,
253 inscribed (robot center in collision), 254 lethal obstacle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import OrientedBox3, YawPose
from .scene import CHAIR, TABLE, ModelDb, Scene

LETHAL = 254
INSCRIBED = 253
DEFAULT_RESOLUTION = 0.05


@dataclass
class Grid2:
    """2D cost grid; world x maps to columns, y to rows, origin at the
    lower-left cell corner."""

    resolution: float
    origin: tuple[float, float]
    cost: np.ndarray   # (H, W) uint8

    @staticmethod
    def blank(resolution: float, origin: tuple[float, float],
              width: int, height: int) -> "Grid2":
        return Grid2(resolution, origin,
                     np.zeros((height, width), dtype=np.uint8))

    @property
    def width(self) -> int:
        return self.cost.shape[1]

    @property
    def height(self) -> int:
        return self.cost.shape[0]

    def same_geometry(self, other: "Grid2") -> bool:
        return (self.cost.shape == other.cost.shape
                and abs(self.resolution - other.resolution) < 1e-12
                and abs(self.origin[0] - other.origin[0]) < 1e-9
                and abs(self.origin[1] - other.origin[1]) < 1e-9)

    def world_to_cell(self, x: float, y: float) -> tuple[int, int] | None:
        col = int(math.floor((x - self.origin[0]) / self.resolution))
        row = int(math.floor((y - self.origin[1]) / self.resolution))
        if 0 <= row < self.height and 0 <= col < self.width:
            return row, col
        return None

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(X, Y) world coordinates of all cell centers, each (H, W)."""
        xs = self.origin[0] + (np.arange(self.width) + 0.5) * self.resolution
        ys = self.origin[1] + (np.arange(self.height) + 0.5) * self.resolution
        return np.meshgrid(xs, ys)

    def copy(self) -> "Grid2":
        return Grid2(self.resolution, self.origin, self.cost.copy())


def grid_for_scene(scene: Scene, resolution: float = DEFAULT_RESOLUTION,
                   margin: float = 0.3) -> Grid2:
    x0, y0, x1, y1 = scene.bounds
    ox, oy = x0 - margin, y0 - margin
    w = int(math.ceil((x1 - x0 + 2 * margin) / resolution))
    h = int(math.ceil((y1 - y0 + 2 * margin) / resolution))
    return Grid2.blank(resolution, (ox, oy), w, h)


def mark_rect(grid: Grid2, x_min: float, y_min: float, x_max: float,
              y_max: float, value: int = LETHAL) -> None:
    """Set cells whose centers fall inside an axis-aligned rectangle
    (boundary inclusive)."""
    res = grid.resolution
    c0 = int(math.ceil((x_min - grid.origin[0]) / res - 0.5))
    c1 = int(math.floor((x_max - grid.origin[0]) / res - 0.5))
    r0 = int(math.ceil((y_min - grid.origin[1]) / res - 0.5))
    r1 = int(math.floor((y_max - grid.origin[1]) / res - 0.5))
    c0, c1 = max(c0, 0), min(c1, grid.width - 1)
    r0, r1 = max(r0, 0), min(r1, grid.height - 1)
    if c0 <= c1 and r0 <= r1:
        grid.cost[r0:r1 + 1, c0:c1 + 1] = np.maximum(
            grid.cost[r0:r1 + 1, c0:c1 + 1], value)


def mark_footprint(grid: Grid2, box: OrientedBox3, value: int = LETHAL) -> None:
    """Set cells whose centers fall inside an oriented box footprint."""
    half_diag = float(np.linalg.norm(box.size[:2])) / 2.0
    cx, cy = box.center[0], box.center[1]
    window = _window(grid, cx, cy, half_diag)
    if window is None:
        return
    r0, r1, c0, c1, xs, ys = window
    dx = xs - cx
    dy = ys - cy
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    inside = (np.abs(u) <= box.size[0] / 2.0) & (np.abs(v) <= box.size[1] / 2.0)
    region = grid.cost[r0:r1, c0:c1]
    region[inside] = np.maximum(region[inside], value)


def mark_points(grid: Grid2, xy: np.ndarray, value: int = LETHAL) -> None:
    """Set the cells containing the given world points."""
    if len(xy) == 0:
        return
    cols = np.floor((xy[:, 0] - grid.origin[0]) / grid.resolution).astype(int)
    rows = np.floor((xy[:, 1] - grid.origin[1]) / grid.resolution).astype(int)
    ok = (rows >= 0) & (rows < grid.height) & (cols >= 0) & (cols < grid.width)
    grid.cost[rows[ok], cols[ok]] = np.maximum(grid.cost[rows[ok], cols[ok]],
                                               value)


def _window(grid: Grid2, cx: float, cy: float, radius: float):
    res = grid.resolution
    c0 = max(int((cx - radius - grid.origin[0]) / res) - 1, 0)
    c1 = min(int((cx + radius - grid.origin[0]) / res) + 2, grid.width)
    r0 = max(int((cy - radius - grid.origin[1]) / res) - 1, 0)
    r1 = min(int((cy + radius - grid.origin[1]) / res) + 2, grid.height)
    if c0 >= c1 or r0 >= r1:
        return None
    xs = grid.origin[0] + (np.arange(c0, c1) + 0.5) * res
    ys = grid.origin[1] + (np.arange(r0, r1) + 0.5) * res
    xs, ys = np.meshgrid(xs, ys)
    return r0, r1, c0, c1, xs, ys


def background_map(scene: Scene, resolution: float = DEFAULT_RESOLUTION,
                   include_objects: bool = False,
                   models: ModelDb | None = None) -> Grid2:
    """Rasterize the scene's static structure as lethal cells.

    With include_objects the ground-truth furniture footprints are stamped
    in as well (the semantics-free view the baseline planners use).
    """
    grid = grid_for_scene(scene, resolution)
    for wall in scene.walls:
        mark_rect(grid, wall[0][0], wall[0][1], wall[1][0], wall[1][1])
    if include_objects:
        models = models or ModelDb()
        for obj in scene.objects:
            mark_footprint(grid, scene.object_box(obj, models))
    return grid


def inflate(grid: Grid2, robot_radius: float, inflation_radius: float,
            cost_scaling: float = 10.0) -> Grid2:
    """Inflate lethal cells: inscribed (253) within robot_radius, then an
    exponential falloff exp(-k (d - robot_radius)) out to inflation_radius.
    """
    if inflation_radius < robot_radius:
        raise ValueError("inflation_radius must be >= robot_radius")
    lethal = grid.cost >= LETHAL
    out = grid.copy()
    if not lethal.any():
        return out
    dist = ndimage.distance_transform_edt(~lethal, sampling=grid.resolution)
    field = np.zeros_like(grid.cost)
    inscribed = (dist <= robot_radius) & ~lethal
    field[inscribed] = INSCRIBED
    shell = (dist > robot_radius) & (dist <= inflation_radius)
    field[shell] = np.rint(
        (INSCRIBED - 1) * np.exp(-cost_scaling * (dist[shell] - robot_radius))
    ).astype(np.uint8)
    out.cost = np.maximum(out.cost, field)
    return out


# ---------------------------------------------------------------------------
# Affordance layers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffordanceSpec:
    """Class-specific risk shape around an object.

    Chairs: ellipse aligned with the chair's forward axis (they slide
    forwards/backwards), semi_major >= semi_minor. Tables: the footprint
    rectangle padded on the +-y sides only (sitting happens at the sides,
    not the ends). Costs peak at the center and fall off linearly.
    """

    cls: str
    semi_major: float = 1.0   # chair ellipse, along +x
    semi_minor: float = 0.5
    side_pad: float = 0.6     # table, extra reach on +-y
    peak_cost: int = 200

    def __post_init__(self):
        if self.cls == CHAIR and self.semi_major < self.semi_minor:
            raise ValueError("chair ellipse must be elongated along +x")
        if not (0 < self.peak_cost < INSCRIBED):
            raise ValueError("peak_cost must be below the inscribed cost")

    def padded(self, margin: float) -> "AffordanceSpec":
        if margin == 0.0:
            return self
        return replace(self, semi_major=self.semi_major + margin,
                       semi_minor=self.semi_minor + margin,
                       side_pad=self.side_pad + margin)

    def contains(self, box: OrientedBox3, x, y):
        """Whether world points fall inside the affordance region around a
        (ground-truth or tracked) object box."""
        dx = np.asarray(x) - box.center[0]
        dy = np.asarray(y) - box.center[1]
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        u = c * dx + s * dy
        v = -s * dx + c * dy
        if self.cls == CHAIR:
            return (u / self.semi_major) ** 2 + (v / self.semi_minor) ** 2 <= 1.0
        half_l, half_w = box.size[0] / 2.0, box.size[1] / 2.0
        return (np.abs(u) <= half_l) & (np.abs(v) <= half_w + self.side_pad)


DEFAULT_AFFORDANCE = {
    CHAIR: AffordanceSpec(CHAIR),
    TABLE: AffordanceSpec(TABLE),
}


def object_layer(box: OrientedBox3, spec: AffordanceSpec,
                 template: Grid2, margin: float = 0.0) -> Grid2:
    """Affordance cost layer for one object on the template's geometry.

    The footprint interior is lethal (the physical body); around it the
    affordance shape carries soft cost falling linearly from peak_cost at
    the center to zero at the shape boundary. `margin` grows the shape for
    planning without changing the footprint.
    """
    layer = Grid2.blank(template.resolution, template.origin,
                        template.width, template.height)
    spec_m = spec.padded(margin)
    cx, cy = box.center[0], box.center[1]
    half_l, half_w = box.size[0] / 2.0, box.size[1] / 2.0
    if spec.cls == CHAIR:
        reach = max(spec_m.semi_major, spec_m.semi_minor,
                    float(np.hypot(half_l, half_w)))
    else:
        reach = float(np.hypot(half_l + spec_m.side_pad,
                               half_w + spec_m.side_pad)) + 0.1
    window = _window(layer, cx, cy, reach)
    if window is None:
        return layer
    r0, r1, c0, c1, xs, ys = window
    dx = xs - cx
    dy = ys - cy
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    u = c * dx + s * dy
    v = -s * dx + c * dy

    field = np.zeros(xs.shape, dtype=np.uint8)
    if spec.cls == CHAIR:
        rho = np.sqrt((u / spec_m.semi_major) ** 2 + (v / spec_m.semi_minor) ** 2)
        soft = np.rint(spec.peak_cost * np.maximum(0.0, 1.0 - rho))
        field = soft.astype(np.uint8)
    else:
        el = half_l + (margin if margin > 0 else 0.0)
        inside_x = np.abs(u) <= el
        over = np.abs(v) - half_w
        frac = 1.0 - np.clip(over / spec_m.side_pad, 0.0, 1.0)
        soft = np.rint(spec.peak_cost * frac)
        soft[~inside_x | (np.abs(v) > half_w + spec_m.side_pad)] = 0.0
        field = soft.astype(np.uint8)

    body = (np.abs(u) <= half_l) & (np.abs(v) <= half_w)
    field[body] = LETHAL
    layer.cost[r0:r1, c0:c1] = field
    return layer


def merge(background: Grid2, layers: list[Grid2]) -> Grid2:
    """Cell-wise maximum of the background and all object layers."""
    out = background.copy()
    for layer in layers:
        if not background.same_geometry(layer):
            raise ValueError("layer geometry mismatch")
        np.maximum(out.cost, layer.cost, out=out.cost)
    return out


# ---------------------------------------------------------------------------
# Ground-truth maps: scenario validation and episode risk accounting
# ---------------------------------------------------------------------------

def make_risk_checker(scene: Scene, models: ModelDb,
                      specs: dict[str, AffordanceSpec] | None = None):
    """Callable (x, y) -> bool testing the union of ground-truth affordance
    regions; this is the region that accrues risk time."""
    specs = specs or DEFAULT_AFFORDANCE
    entries = [(specs[obj.cls], scene.object_box(obj, models))
               for obj in scene.objects]

    def contains(x: float, y: float) -> bool:
        return any(spec.contains(box, x, y) for spec, box in entries)

    return contains


def static_gt_map(scene: Scene, models: ModelDb, robot_radius: float,
                  inflation_mult: float, resolution: float = DEFAULT_RESOLUTION,
                  soft_shell: float = 0.45,
                  affordance_lethal: bool = False,
                  affordance_pad: float = 0.0,
                  specs: dict[str, AffordanceSpec] | None = None) -> Grid2:
    """Fully-informed static costmap: walls and true footprints, inflated
    with the variant's effective clearance radius. Optionally stamps the
    (padded) affordance regions as lethal, for affordance-free
    reachability checks.
    """
    grid = background_map(scene, resolution, include_objects=True, models=models)
    if affordance_lethal:
        specs = specs or DEFAULT_AFFORDANCE
        for obj in scene.objects:
            box = scene.object_box(obj, models)
            spec = specs[obj.cls]
            layer = object_layer(box, spec, grid, margin=affordance_pad)
            grid.cost = np.maximum(grid.cost,
                                   np.where(layer.cost > 0, LETHAL, 0
                                            ).astype(np.uint8))
    r_eff = robot_radius * inflation_mult
    return inflate(grid, r_eff, r_eff + soft_shell)


def route_feasible(scene: Scene, models: ModelDb, conservative: bool,
                   avoid_affordance: bool, robot_radius: float = 0.25,
                   affordance_pad: float = 0.3,
                   resolution: float = DEFAULT_RESOLUTION) -> bool:
    """Whether start -> waypoints is traversable on the ground-truth map.

    The affordance-avoiding check pads the shapes so a route stays clear
    even after the planner adds its own margin and the local planner
    tracks with some error.
    """
    from . import planner  # local import to avoid a cycle

    grid = static_gt_map(scene, models, robot_radius,
                         3.0 if conservative else 1.0,
                         resolution=resolution,
                         affordance_lethal=avoid_affordance,
                         affordance_pad=affordance_pad)
    pts = [scene.robot_start.xy] + [w for w in scene.waypoints]
    for a, b in zip(pts[:-1], pts[1:]):
        try:
            result = planner.astar(grid, tuple(a), tuple(b), cost_weight=0.0)
        except ValueError:
            return False
        if result is None:
            return False
    return True


def oppo_risk_exposure(scene: Scene, models: ModelDb,
                       robot_radius: float = 0.25,
                       resolution: float = DEFAULT_RESOLUTION) -> float:
    """Path length (m) the semantics-free shortest route spends inside
    ground-truth affordance regions."""
    from . import planner  # local import to avoid a cycle

    grid = static_gt_map(scene, models, robot_radius, 1.0,
                         resolution=resolution)
    risk_at = make_risk_checker(scene, models)
    exposure = 0.0
    pts = [scene.robot_start.xy] + [w for w in scene.waypoints]
    for a, b in zip(pts[:-1], pts[1:]):
        try:
            result = planner.astar(grid, tuple(a), tuple(b), cost_weight=0.01)
        except ValueError:
            return 0.0
        if result is None:
            return 0.0
        path = result.path
        for p, q in zip(path[:-1], path[1:]):
            if risk_at(*(0.5 * (p + q))):
                exposure += float(np.linalg.norm(q - p))
    return exposure


def placement_validity_maps(scene: Scene, models: ModelDb,
                            clearance: float = 0.9,
                            affordance_margin: float = 0.3,
                            resolution: float = DEFAULT_RESOLUTION):
    """Callable (x, y) -> bool for sampling route endpoints: far enough from
    every obstacle and outside all (margin-padded) affordance regions."""
    grid = background_map(scene, resolution, include_objects=True, models=models)
    dist = ndimage.distance_transform_edt(grid.cost < LETHAL,
                                          sampling=resolution)
    specs = {cls: spec.padded(affordance_margin)
             for cls, spec in DEFAULT_AFFORDANCE.items()}
    entries = [(specs[obj.cls], scene.object_box(obj, models))
               for obj in scene.objects]

    def ok(x: float, y: float) -> bool:
        cell = grid.world_to_cell(x, y)
        if cell is None or dist[cell] < clearance:
            return False
        return not any(spec.contains(box, x, y) for spec, box in entries)

    return ok


# ---------------------------------------------------------------------------
# PGM export
# ---------------------------------------------------------------------------

def write_pgm(path, grid: Grid2) -> None:
    """P5 image plus a companion JSON metadata file (resolution, origin)."""
    path = Path(path)
    with open(path, "wb") as f:
        f.write(f"P5\n{grid.width} {grid.height}\n255\n".encode())
        f.write(np.flipud(grid.cost).tobytes())  # row 0 at the bottom
    meta = {"resolution": grid.resolution,
            "origin": [grid.origin[0], grid.origin[1]],
            "width": grid.width, "height": grid.height}
    path.with_suffix(path.suffix + ".meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True))


def read_pgm(path) -> Grid2:
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(b"P5"):
        raise ValueError("not a binary PGM")
    parts = raw.split(b"\n", 3)
    w, h = map(int, parts[1].split())
    data = np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)
    meta = json.loads(path.with_suffix(path.suffix + ".meta.json").read_text())
    return Grid2(meta["resolution"], tuple(meta["origin"]),
                 np.flipud(data).copy())
