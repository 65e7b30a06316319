"""Simulated spinning LiDAR, keyframe accumulation, ground detection, and
point-cloud filtering, plus the binary cloud dump format."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .geometry import Pose3, PointCloud, compose
from .scene import ModelDb, RaycastGeometry, Scene, build_raycast_geometry

NO_LABEL = 0xFFFF


@dataclass(frozen=True)
class LidarConfig:
    n_beams: int = 32
    vertical_fov: float = math.radians(40.0)     # full span
    vertical_center: float = math.radians(-5.0)  # beam fan tilt
    horizontal_step: float = math.radians(2.0)
    max_range: float = 15.0
    range_noise_sigma: float = 0.01
    rate: float = 10.0

    def __post_init__(self):
        if self.max_range <= 0 or self.n_beams < 1:
            raise ValueError("invalid lidar config")

    def ray_directions(self) -> np.ndarray:
        """Unit directions (N, 3) in the sensor frame, beam-major order."""
        if self.n_beams == 1:
            elevations = np.array([self.vertical_center])
        else:
            half = self.vertical_fov / 2.0
            elevations = np.linspace(self.vertical_center - half,
                                     self.vertical_center + half, self.n_beams)
        n_az = max(1, int(round(2.0 * math.pi / self.horizontal_step)))
        azimuths = -math.pi + np.arange(n_az) * (2.0 * math.pi / n_az)
        el, az = np.meshgrid(elevations, azimuths, indexing="ij")
        ce = np.cos(el)
        return np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)],
                        axis=-1).reshape(-1, 3)


@dataclass(frozen=True)
class Keyframe:
    pose: Pose3           # sensor-to-world
    cloud: PointCloud     # sensor frame
    frame_index: int


def scan(scene: Scene, sensor_pose: Pose3, cfg: LidarConfig,
         rng: np.random.Generator, models: ModelDb | None = None,
         geometry: RaycastGeometry | None = None) -> PointCloud:
    """One full sweep: nearest hit per ray over ground, walls, and objects.

    Gaussian range noise is applied along each ray; missed rays are dropped.
    Points come back in the sensor frame, labeled by what they hit
    (see scene.GROUND_LABEL / STRUCTURE_LABEL / INSTANCE_OFFSET).
    """
    if geometry is None:
        geometry = build_raycast_geometry(scene, models or ModelDb())
    dirs_sensor = cfg.ray_directions()
    dirs_world = dirs_sensor @ sensor_pose.rotation.T
    dist, label = _kernels.raycast(
        sensor_pose.translation, dirs_world, cfg.max_range, geometry.ground_z,
        geometry.aabbs, geometry.aabb_labels, geometry.tri_verts,
        geometry.group_start, geometry.group_aabbs, geometry.group_labels)
    hit = np.isfinite(dist)
    dist = dist[hit]
    if cfg.range_noise_sigma > 0.0:
        dist = dist + rng.normal(0.0, cfg.range_noise_sigma, size=len(dist))
    points = dirs_sensor[hit] * dist[:, None]
    return PointCloud(points, labels=label[hit])


def accumulate(frames: list[Keyframe]) -> PointCloud:
    """Merge a window of scans into the latest keyframe's sensor frame."""
    if not frames:
        raise ValueError("need at least one frame")
    latest_inv = frames[-1].pose.inverse()
    parts = []
    for kf in frames:
        rel = compose(latest_inv, kf.pose)
        parts.append(kf.cloud.transformed(rel))
    return PointCloud.concatenate(parts)


def detect_ground(cloud: PointCloud, iters: int = 200,
                  inlier_dist: float = 0.05,
                  rng: np.random.Generator | None = None,
                  max_tilt: float = math.radians(30.0)):
    """RANSAC plane fit returning (unit_normal, offset) with n . p = offset.

    Assumes the ground holds more points than any other *near-horizontal*
    plane: hypotheses tilted more than max_tilt from +z are rejected, which
    keeps wall or furniture faces from outvoting the floor in cluttered
    rooms. The winning hypothesis is refined by a least-squares fit over
    its inliers. Raises ValueError on fewer than 3 points or an inlier
    ratio below 10%.
    """
    pts = cloud.points
    n = len(pts)
    if n < 3:
        raise ValueError("ground detection needs at least 3 points")
    rng = rng or np.random.default_rng(0)
    min_nz = math.cos(max_tilt)

    best_count = -1
    best_mask = None
    for _ in range(iters):
        idx = rng.choice(n, size=3, replace=False)
        p0, p1, p2 = pts[idx]
        normal = np.cross(p1 - p0, p2 - p0)
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue
        normal = normal / norm
        if abs(normal[2]) < min_nz:
            continue
        d = pts @ normal - normal @ p0
        mask = np.abs(d) <= inlier_dist
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
    if best_mask is None or best_count < max(3, 0.1 * n):
        raise ValueError("no dominant plane found")

    inliers = pts[best_mask]
    centroid = inliers.mean(axis=0)
    _, _, vt = np.linalg.svd(inliers - centroid, full_matrices=False)
    normal = vt[-1]
    if normal[2] < 0:
        normal = -normal
    return normal, float(normal @ centroid)


def filter_cloud(cloud: PointCloud, ground_plane,
                 ceiling_height: float = 2.2,
                 inlier_dist: float = 0.05) -> PointCloud:
    """Drop points on the ground plane and points above the ceiling height."""
    normal, offset = ground_plane
    h = cloud.points @ np.asarray(normal) - offset
    keep = (np.abs(h) > inlier_dist) & (h < ceiling_height)
    return cloud.select(keep)


# ---------------------------------------------------------------------------
# Binary point-cloud dumps: 16-byte header (magic, version, count) then
# little-endian records of x, y, z (float32) and label (uint16).
# ---------------------------------------------------------------------------

_MAGIC = b"OAPC"
_HEADER = struct.Struct("<4sIQ")
_VERSION = 1


def write_oapc(path, cloud: PointCloud) -> None:
    n = len(cloud)
    labels = cloud.labels
    if labels is None:
        labels = np.full(n, NO_LABEL, dtype=np.uint16)
    else:
        labels = labels.astype(np.uint16)
    rec = np.zeros(n, dtype=np.dtype([("xyz", "<f4", 3), ("label", "<u2")]))
    rec["xyz"] = cloud.points
    rec["label"] = labels
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, _VERSION, n))
        f.write(rec.tobytes())


def read_oapc(path) -> PointCloud:
    raw = Path(path).read_bytes()
    magic, version, count = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise ValueError(f"not an OAPC file: bad magic {magic!r}")
    if version != _VERSION:
        raise ValueError(f"unsupported OAPC version {version}")
    rec = np.frombuffer(raw, dtype=np.dtype([("xyz", "<f4", 3), ("label", "<u2")]),
                        count=count, offset=_HEADER.size)
    return PointCloud(rec["xyz"].astype(float),
                      labels=rec["label"].astype(np.int64))


def write_xyz(path, cloud: PointCloud) -> None:
    """Plain-text export, one 'x y z' line per point."""
    with open(path, "w") as f:
        for p in cloud.points:
            f.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f}\n")
