"""Auto-annotation pipeline over multi-session point clouds.

Sessions are world-frame clouds of the same space with the furniture
rearranged between visits. Points are categorized (Ground / Permanent /
Movable / Dynamic) by voxel occupancy diffing, movable points are clustered
and boxed, boxes are refined by CAD alignment, and per-point semantic and
instance labels fall out of the aligned models. The first session is the
one that gets labeled; later sessions serve as the change reference.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import icp as icp_mod
from .detect import dbscan, pca_box
from .geometry import OrientedBox3, PointCloud, YawPose, rot_z, wrap_angle
from .lidar import detect_ground
from .scene import CHAIR, CLASSES, ModelDb

GROUND = 0
PERMANENT = 1
MOVABLE = 2
DYNAMIC = 3  # reserved: static sessions never produce it
CATEGORY_NAMES = {GROUND: "Ground", PERMANENT: "Permanent",
                  MOVABLE: "Movable", DYNAMIC: "Dynamic"}

SEMANTIC_NONE = "none"


@dataclass
class AnnotateConfig:
    voxel_size: float = 0.1
    ground_inlier_dist: float = 0.05
    cluster_eps: float = 0.3
    cluster_min_pts: int = 10
    min_cluster_points: int = 40
    dist_thresh: float = 0.05   # surface distance for semantic labeling
    icp: icp_mod.IcpConfig = field(default_factory=icp_mod.IcpConfig)


@dataclass
class InstanceLabel:
    instance_id: int
    cls: str
    box: OrientedBox3
    pose: YawPose | None      # aligned CAD pose; None when unaligned
    aligned: bool
    model_key: str | None = None


@dataclass
class LabeledCloud:
    """Per-point categories plus semantic/instance labels and instances."""

    cloud: PointCloud
    categories: np.ndarray    # (N,) ints, see CATEGORY_NAMES
    semantic: list[str]       # per point: class name or "none"
    instance: np.ndarray      # (N,) instance id, -1 = none
    instances: list[InstanceLabel]

    def to_dict(self) -> dict:
        return {
            "format": 1,
            "category_legend": {str(k): v for k, v in CATEGORY_NAMES.items()},
            "categories": self.categories.tolist(),
            "semantic": self.semantic,
            "instance": self.instance.tolist(),
            "instances": [
                {
                    "id": inst.instance_id,
                    "class": inst.cls,
                    "aligned": inst.aligned,
                    "model": inst.model_key,
                    "box": {
                        "center": [round(float(c), 6) for c in inst.box.center],
                        "size": [round(float(s), 6) for s in inst.box.size],
                        "yaw": round(float(inst.box.yaw), 6),
                    },
                    "pose": (None if inst.pose is None else {
                        "x": round(inst.pose.x, 6), "y": round(inst.pose.y, 6),
                        "z": round(inst.pose.z, 6),
                        "yaw": round(inst.pose.yaw, 6)}),
                }
                for inst in self.instances
            ],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True,
                                         separators=(",", ":")) + "\n")


def _voxel_keys(points: np.ndarray, voxel: float) -> np.ndarray:
    return np.floor(points / voxel).astype(np.int64)


def classify_movable(sessions: list[PointCloud],
                     cfg: AnnotateConfig = AnnotateConfig()) -> list[np.ndarray]:
    """Categorize every session's points as Ground / Permanent / Movable.

    Ground comes from a RANSAC plane per session; the rest is voxelized and
    diffed across sessions: voxels occupied in every session are Permanent,
    voxels occupied in only some are Movable.
    """
    if len(sessions) < 2:
        raise ValueError("need at least 2 sessions to separate movable points")
    ground_masks = []
    occupied: list[set] = []
    for cloud in sessions:
        normal, offset = detect_ground(cloud,
                                       inlier_dist=cfg.ground_inlier_dist)
        h = cloud.points @ normal - offset
        gmask = np.abs(h) <= cfg.ground_inlier_dist
        ground_masks.append(gmask)
        keys = _voxel_keys(cloud.points[~gmask], cfg.voxel_size)
        occupied.append(set(map(tuple, keys)))

    in_all = set.intersection(*occupied)
    out = []
    for cloud, gmask in zip(sessions, ground_masks):
        cats = np.full(len(cloud), MOVABLE, dtype=np.int64)
        cats[gmask] = GROUND
        rest = ~gmask
        keys = _voxel_keys(cloud.points[rest], cfg.voxel_size)
        perm = np.array([tuple(k) in in_all for k in keys]) if len(keys) else \
            np.zeros(0, dtype=bool)
        idx = np.nonzero(rest)[0]
        cats[idx[perm]] = PERMANENT
        out.append(cats)
    return out


def cluster_movable(points: np.ndarray,
                    cfg: AnnotateConfig = AnnotateConfig()) -> list[np.ndarray]:
    """DBSCAN the movable points; returns index arrays, one per cluster."""
    labels = dbscan(points, cfg.cluster_eps, cfg.cluster_min_pts)
    out = []
    for cid in range(labels.max() + 1 if len(labels) else 0):
        idx = np.nonzero(labels == cid)[0]
        if len(idx) >= cfg.min_cluster_points:
            out.append(idx)
    return out


def align_cad(cluster: np.ndarray, model, init: OrientedBox3,
              cfg: AnnotateConfig = AnnotateConfig()):
    """Align a cluster with a CAD model starting from a rough box.

    Returns (pose, box, residual); the box is the CAD nominal size at the
    aligned pose with only the z rotation retained. Raises IcpError when
    registration fails.
    """
    init_t = init.center - rot_z(init.yaw) @ model.aabb_center
    pose0 = YawPose(init_t[0], init_t[1], init_t[2], init.yaw)
    pose0 = icp_mod.best_orientation_init(model, cluster, pose0, cfg.icp)
    result = icp_mod.icp_refine(model, cluster, pose0, cfg.icp)
    return result.pose, model.box_at(result.pose), result.residual


def label_points(cluster: np.ndarray, model, pose: YawPose,
                 dist_thresh: float = 0.05) -> np.ndarray:
    """Inlier mask: points within dist_thresh of the aligned model surface."""
    local = pose.to_pose3().inverse().apply(cluster)
    dist, _ = icp_mod._model_tree(model).query(local)
    return dist <= dist_thresh


def _boxes_overlap_frac(idx_a: np.ndarray, box: OrientedBox3,
                        points: np.ndarray) -> float:
    inside = box.inflated(1.1).contains(points[idx_a])
    return float(inside.mean()) if len(idx_a) else 0.0


def annotate_sessions(sessions: list[PointCloud], models: ModelDb,
                      cfg: AnnotateConfig = AnnotateConfig(),
                      manual_boxes: list[OrientedBox3] | None = None
                      ) -> LabeledCloud:
    """Run the full labeling pipeline on the first session.

    Manual boxes (when clustering merges neighbors) replace overlapping
    automatic clusters; their member points are gathered directly from the
    movable set.
    """
    target = sessions[0]
    categories = classify_movable(sessions, cfg)[0]
    movable_idx = np.nonzero(categories == MOVABLE)[0]
    movable_pts = target.points[movable_idx]

    clusters = cluster_movable(movable_pts, cfg)
    if manual_boxes:
        kept = []
        for idx in clusters:
            overlap = max((_boxes_overlap_frac(idx, mb, movable_pts)
                           for mb in manual_boxes), default=0.0)
            if overlap < 0.5:
                kept.append(idx)
        clusters = kept
        for mb in manual_boxes:
            idx = np.nonzero(mb.inflated(1.1).contains(movable_pts))[0]
            if len(idx) >= cfg.cluster_min_pts:
                clusters.append(idx)

    semantic = [SEMANTIC_NONE] * len(target)
    instance = np.full(len(target), -1, dtype=np.int64)
    instances: list[InstanceLabel] = []

    for inst_id, idx in enumerate(clusters):
        pts = movable_pts[idx]
        rough = pca_box(pts)
        best = None
        for cls in CLASSES:
            model = models.get(cls, 0)
            try:
                pose, box, resid = align_cad(pts, model, rough, cfg)
            except icp_mod.IcpError:
                continue
            if best is None or resid < best[0]:
                best = (resid, cls, model, pose, box)
        if best is not None and best[0] <= cfg.icp.e_max:
            _, cls, model, pose, box = best
            inlier = label_points(pts, model, pose, cfg.dist_thresh)
            orig = movable_idx[idx[inlier]]
            for j in orig:
                semantic[j] = cls
            instance[orig] = inst_id
            instances.append(InstanceLabel(inst_id, cls, box, pose, True,
                                           model.key))
        else:
            instances.append(InstanceLabel(inst_id, _size_class(rough), rough,
                                           None, False))
    return LabeledCloud(target, categories, semantic, instance, instances)


def _size_class(box: OrientedBox3) -> str:
    """Fallback class guess for unaligned instances, by footprint area."""
    area = float(box.size[0] * box.size[1])
    return CHAIR if area < 0.55 else "table"
