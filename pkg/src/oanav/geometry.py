"""Shared geometric primitives: rigid poses, yaw-constrained poses, oriented
boxes, point clouds, and the exact ray / box intersection routines the
perception and mapping stages are built on.

All types are immutable value objects; arrays are marked read-only after
construction so instances can be shared freely across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(angle: float) -> float:
    """Normalize an angle to [-pi, pi)."""
    a = math.fmod(angle + math.pi, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    return a - math.pi


def wrap_angle_array(angles: np.ndarray) -> np.ndarray:
    """Vectorized wrap to [-pi, pi)."""
    return np.mod(np.asarray(angles) + np.pi, TWO_PI) - np.pi


def angle_diff(a: float, b: float) -> float:
    """Shortest signed angular difference a - b, in [-pi, pi)."""
    return wrap_angle(a - b)


def rot_z(yaw: float) -> np.ndarray:
    """3x3 rotation about +z."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Pose3:
    """Rigid transform: p_parent = rotation @ p_child + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _freeze(self.rotation))
        object.__setattr__(self, "translation", _freeze(np.reshape(self.translation, 3)))
        if self.rotation.shape != (3, 3):
            raise ValueError("rotation must be 3x3")

    @staticmethod
    def identity() -> "Pose3":
        return Pose3(np.eye(3), np.zeros(3))

    @staticmethod
    def from_yaw(yaw: float, translation=(0.0, 0.0, 0.0)) -> "Pose3":
        return Pose3(rot_z(yaw), np.asarray(translation, dtype=float))

    def inverse(self) -> "Pose3":
        rt = self.rotation.T
        return Pose3(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) array or single 3-vector into the parent frame."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            return self.rotation @ pts + self.translation
        return pts @ self.rotation.T + self.translation

    def is_valid(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        return (np.abs(r @ r.T - np.eye(3)).max() <= tol
                and abs(np.linalg.det(r) - 1.0) <= tol)


def compose(a: Pose3, b: Pose3) -> Pose3:
    """Compose two rigid transforms: (a o b).apply(p) == a.apply(b.apply(p))."""
    return Pose3(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


@dataclass(frozen=True)
class YawPose:
    """Ground-constrained pose: translation plus rotation about +z only."""

    x: float
    y: float
    z: float
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def to_pose3(self) -> Pose3:
        return Pose3(rot_z(self.yaw), np.array([self.x, self.y, self.z]))

    @staticmethod
    def from_pose3(pose: Pose3) -> "YawPose":
        """Project a z-axis rotation back to (x, y, z, yaw)."""
        yaw = math.atan2(pose.rotation[1, 0], pose.rotation[0, 0])
        t = pose.translation
        return YawPose(t[0], t[1], t[2], yaw)

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class OrientedBox3:
    """Ground-aligned 3D box: center, size (full extents, all > 0), yaw."""

    center: np.ndarray
    size: np.ndarray
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "center", _freeze(np.reshape(self.center, 3)))
        object.__setattr__(self, "size", _freeze(np.reshape(self.size, 3)))
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))
        if np.any(self.size <= 0.0):
            raise ValueError(f"box size must be positive, got {self.size}")

    @property
    def volume(self) -> float:
        return float(self.size[0] * self.size[1] * self.size[2])

    def corners(self) -> np.ndarray:
        """All 8 corners, (8, 3), in the parent frame."""
        half = self.size / 2.0
        signs = np.array([[sx, sy, sz]
                          for sx in (-1.0, 1.0)
                          for sy in (-1.0, 1.0)
                          for sz in (-1.0, 1.0)])
        return (signs * half) @ rot_z(self.yaw).T + self.center

    def footprint_corners(self) -> np.ndarray:
        """The 4 xy corners, (4, 2), counter-clockwise."""
        hx, hy = self.size[0] / 2.0, self.size[1] / 2.0
        local = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + self.center[:2]

    def aabb(self) -> np.ndarray:
        """Axis-aligned bounds as (2, 3): [min_corner, max_corner]."""
        cs = self.corners()
        return np.stack([cs.min(axis=0), cs.max(axis=0)])

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside the box (boundary inclusive)."""
        pts = np.atleast_2d(points) - self.center
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        px = c * pts[:, 0] + s * pts[:, 1]
        py = -s * pts[:, 0] + c * pts[:, 1]
        half = self.size / 2.0
        return ((np.abs(px) <= half[0]) & (np.abs(py) <= half[1])
                & (np.abs(pts[:, 2]) <= half[2]))

    def inflated(self, factor: float) -> "OrientedBox3":
        return OrientedBox3(self.center, self.size * factor, self.yaw)


@dataclass(frozen=True)
class PointCloud:
    """Points with optional unit normals and integer per-point labels."""

    points: np.ndarray
    normals: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "points", _freeze(pts))
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if len(nrm) != len(pts):
                raise ValueError("normals count must match points")
            norms = np.linalg.norm(nrm, axis=1)
            if len(nrm) and np.abs(norms - 1.0).max() > 1e-6:
                raise ValueError("normals must be unit length")
            object.__setattr__(self, "normals", _freeze(nrm))
        if self.labels is not None:
            lab = np.asarray(self.labels).reshape(-1).astype(np.int64)
            if len(lab) != len(pts):
                raise ValueError("labels count must match points")
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return len(self.points)

    def transformed(self, pose: Pose3) -> "PointCloud":
        normals = None if self.normals is None else self.normals @ pose.rotation.T
        return PointCloud(pose.apply(self.points), normals, self.labels)

    def select(self, mask_or_idx) -> "PointCloud":
        return PointCloud(
            self.points[mask_or_idx],
            None if self.normals is None else self.normals[mask_or_idx],
            None if self.labels is None else self.labels[mask_or_idx],
        )

    @staticmethod
    def concatenate(clouds: list["PointCloud"]) -> "PointCloud":
        clouds = [c for c in clouds if len(c)]
        if not clouds:
            return PointCloud(np.zeros((0, 3)))
        pts = np.vstack([c.points for c in clouds])
        normals = None
        if all(c.normals is not None for c in clouds):
            normals = np.vstack([c.normals for c in clouds])
        labels = None
        if all(c.labels is not None for c in clouds):
            labels = np.concatenate([c.labels for c in clouds])
        return PointCloud(pts, normals, labels)


# ---------------------------------------------------------------------------
# Rotated-box GIoU
# ---------------------------------------------------------------------------

_DEGENERATE_SIZE = 1e-6


def _clip_poly_halfplane(poly: list, axis: int, bound: float, keep_below: bool) -> list:
    """Clip a convex polygon by an axis-aligned half-plane (inclusive)."""
    out = []
    n = len(poly)
    for i in range(n):
        cur, nxt = poly[i], poly[(i + 1) % n]
        cv, nv = cur[axis], nxt[axis]
        cur_in = cv <= bound if keep_below else cv >= bound
        nxt_in = nv <= bound if keep_below else nv >= bound
        if cur_in:
            out.append(cur)
        if cur_in != nxt_in:
            t = (bound - cv) / (nv - cv)
            out.append((cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])))
    return out


def _poly_area(poly: list) -> float:
    if len(poly) < 3:
        return 0.0
    area = 0.0
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        area += x0 * y1 - x1 * y0
    return abs(area) / 2.0


def _footprint_in_frame(box: OrientedBox3, frame: OrientedBox3) -> list:
    """Footprint corners of `box` expressed in `frame`'s yaw-aligned frame."""
    rel_yaw = box.yaw - frame.yaw
    c, s = math.cos(rel_yaw), math.sin(rel_yaw)
    dc = box.center[:2] - frame.center[:2]
    fc, fs = math.cos(frame.yaw), math.sin(frame.yaw)
    cx = fc * dc[0] + fs * dc[1]
    cy = -fs * dc[0] + fc * dc[1]
    hx, hy = box.size[0] / 2.0, box.size[1] / 2.0
    local = [(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)]
    return [(c * px - s * py + cx, s * px + c * py + cy) for px, py in local]


def _enclosing_volume(a: OrientedBox3, b: OrientedBox3, frame: OrientedBox3) -> float:
    """Volume of the smallest box aligned with `frame`'s yaw containing both."""
    pa = _footprint_in_frame(a, frame)
    pb = _footprint_in_frame(b, frame)
    xs = [p[0] for p in pa] + [p[0] for p in pb]
    ys = [p[1] for p in pa] + [p[1] for p in pb]
    # z relative to the frame box keeps identical inputs numerically exact
    dz = b.center[2] - frame.center[2]
    az = a.center[2] - frame.center[2]
    z_lo = min(az - a.size[2] / 2.0, dz - b.size[2] / 2.0)
    z_hi = max(az + a.size[2] / 2.0, dz + b.size[2] / 2.0)
    return (max(xs) - min(xs)) * (max(ys) - min(ys)) * (z_hi - z_lo)


def box_intersection_volume(a: OrientedBox3, b: OrientedBox3) -> float:
    """Overlap volume: clipped footprint polygon area times z-interval overlap."""
    dz = b.center[2] - a.center[2]
    z_overlap = (min(a.size[2] / 2.0, dz + b.size[2] / 2.0)
                 - max(-a.size[2] / 2.0, dz - b.size[2] / 2.0))
    if z_overlap <= 0.0:
        return 0.0
    # Clip b's footprint against a's axis-aligned rectangle, in a's yaw frame.
    poly = _footprint_in_frame(b, a)
    hx, hy = a.size[0] / 2.0, a.size[1] / 2.0
    for axis, bound, keep_below in ((0, hx, True), (0, -hx, False),
                                    (1, hy, True), (1, -hy, False)):
        poly = _clip_poly_halfplane(poly, axis, bound, keep_below)
        if not poly:
            return 0.0
    return _poly_area(poly) * z_overlap


def box_giou3d(a: OrientedBox3, b: OrientedBox3) -> float:
    """Generalized IoU for yaw-rotated 3D boxes, in (-1, 1].

    GIoU = IoU - |C \\ (A u B)| / |C| with C the smaller of the two
    yaw-aligned enclosing boxes (keeps the metric symmetric).
    """
    if np.any(a.size < _DEGENERATE_SIZE) or np.any(b.size < _DEGENERATE_SIZE):
        raise ValueError("degenerate box size")
    inter = box_intersection_volume(a, b)
    union = a.volume + b.volume - inter
    iou = inter / union
    vc = min(_enclosing_volume(a, b, a), _enclosing_volume(a, b, b))
    return iou - (vc - union) / vc


# ---------------------------------------------------------------------------
# Ray intersections
# ---------------------------------------------------------------------------

def ray_aabb_hit(origin: np.ndarray, direction: np.ndarray,
                 box_min: np.ndarray, box_max: np.ndarray) -> float | None:
    """Nearest nonnegative distance at which a ray enters an AABB.

    A ray starting inside returns 0.0 (counts as an immediate hit). Returns
    None when the box is missed or lies entirely behind the origin.
    """
    t_near, t_far = -math.inf, math.inf
    for k in range(3):
        o, d = origin[k], direction[k]
        if abs(d) < 1e-15:
            if o < box_min[k] or o > box_max[k]:
                return None
            continue
        t0 = (box_min[k] - o) / d
        t1 = (box_max[k] - o) / d
        if t0 > t1:
            t0, t1 = t1, t0
        t_near = max(t_near, t0)
        t_far = min(t_far, t1)
    if t_near > t_far or t_far < 0.0:
        return None
    return max(t_near, 0.0)


def ray_triangle_hit(origin: np.ndarray, direction: np.ndarray,
                     triangle: np.ndarray) -> float | None:
    """Moeller-Trumbore ray/triangle intersection distance (either facing)."""
    v0, v1, v2 = triangle[0], triangle[1], triangle[2]
    e1 = v1 - v0
    e2 = v2 - v0
    pvec = np.cross(direction, e2)
    det = float(e1 @ pvec)
    if abs(det) < 1e-12:
        return None
    inv_det = 1.0 / det
    tvec = origin - v0
    u = float(tvec @ pvec) * inv_det
    if u < 0.0 or u > 1.0:
        return None
    qvec = np.cross(tvec, e1)
    v = float(direction @ qvec) * inv_det
    if v < 0.0 or u + v > 1.0:
        return None
    t = float(e2 @ qvec) * inv_det
    return t if t >= 0.0 else None
