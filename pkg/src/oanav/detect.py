"""Detector stage: a configurable-noise oracle standing in for a learned
network, and an unsupervised cluster-based detector (DBSCAN + PCA boxes)
shared with the annotation pipeline."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import OrientedBox3, Pose3, PointCloud, wrap_angle
from .scene import CLASSES, ModelDb, Scene

DETECTION_LOG_HEADER = "frame,x,y,z,sx,sy,sz,yaw,label,confidence"


@dataclass(frozen=True)
class Detection:
    """One detector output in the sensor frame: box, class scores."""

    box: OrientedBox3
    class_scores: np.ndarray  # over CLASSES, sums to 1

    def __post_init__(self):
        scores = np.asarray(self.class_scores, dtype=float)
        if abs(scores.sum() - 1.0) > 1e-9:
            raise ValueError("class scores must sum to 1")
        scores.setflags(write=False)
        object.__setattr__(self, "class_scores", scores)

    @property
    def label(self) -> str:
        return CLASSES[int(np.argmax(self.class_scores))]

    @property
    def confidence(self) -> float:
        return float(self.class_scores.max())

    def log_row(self, frame: int) -> str:
        c, s = self.box.center, self.box.size
        return (f"{frame},{c[0]:.4f},{c[1]:.4f},{c[2]:.4f},"
                f"{s[0]:.4f},{s[1]:.4f},{s[2]:.4f},{self.box.yaw:.4f},"
                f"{self.label},{self.confidence:.4f}")


@dataclass(frozen=True)
class DetectorNoise:
    """Error model for the oracle detector; all-zero reproduces ground truth."""

    sigma_center: float = 0.05
    sigma_size: float = 0.05
    sigma_yaw: float = 0.1
    p_flip: float = 0.2       # quarter-turn orientation mistakes
    p_miss: float = 0.1
    fp_rate: float = 0.05     # expected false positives per frame
    score_eps: float = 0.1    # mass leaked off the true class

    @staticmethod
    def exact() -> "DetectorNoise":
        return DetectorNoise(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def _sensor_yaw(sensor_pose: Pose3) -> float:
    return math.atan2(sensor_pose.rotation[1, 0], sensor_pose.rotation[0, 0])


def _scores_for(true_idx: int, eps: float, rng) -> np.ndarray:
    scores = np.zeros(len(CLASSES))
    if eps <= 0.0:
        scores[true_idx] = 1.0
        return scores
    leak = float(np.clip(abs(rng.normal(eps, eps / 3.0)), 0.005, 0.49))
    scores[:] = leak / (len(CLASSES) - 1)
    scores[true_idx] = 1.0 - leak
    return scores


def detect_oracle(scene: Scene, sensor_pose: Pose3, cloud: PointCloud | None,
                  noise: DetectorNoise, rng: np.random.Generator,
                  models: ModelDb, min_points: int = 30,
                  max_range: float = 8.0) -> list[Detection]:
    """Ground-truth-derived detections with a configurable error model.

    Each visible object (at least `min_points` of the cloud carrying its
    instance label, within `max_range`) yields its true box perturbed by
    Gaussian center/size/yaw noise; with probability p_flip the yaw is
    additionally rotated by a uniform quarter-turn multiple. Detections are
    dropped with p_miss, and Poisson(fp_rate) false positives are added.
    When no cloud is given, visibility falls back to the range gate alone.
    """
    inv = sensor_pose.inverse()
    yaw_s = _sensor_yaw(sensor_pose)
    out: list[Detection] = []

    for obj in scene.objects:
        model = models.get(obj.cls, obj.model_seed)
        box_w = model.box_at(obj.pose)
        center_s = inv.apply(box_w.center)
        if np.linalg.norm(center_s) > max_range:
            continue
        if cloud is not None:
            if cloud.labels is not None:
                n_pts = int((cloud.labels == obj.label).sum())
            else:
                n_pts = int(box_w.inflated(1.1).contains(
                    sensor_pose.apply(cloud.points)).sum())
            if n_pts < min_points:
                continue
        if noise.p_miss > 0.0 and rng.uniform() < noise.p_miss:
            continue
        yaw = wrap_angle(box_w.yaw - yaw_s)
        size = box_w.size.copy()
        if noise.sigma_center > 0.0:
            center_s = center_s + rng.normal(0.0, noise.sigma_center, 3)
        if noise.sigma_size > 0.0:
            size = np.maximum(size + rng.normal(0.0, noise.sigma_size, 3), 0.05)
        if noise.sigma_yaw > 0.0:
            yaw += rng.normal(0.0, noise.sigma_yaw)
        if noise.p_flip > 0.0 and rng.uniform() < noise.p_flip:
            yaw += rng.integers(1, 4) * math.pi / 2.0
        true_idx = CLASSES.index(obj.cls)
        out.append(Detection(OrientedBox3(center_s, size, wrap_angle(yaw)),
                             _scores_for(true_idx, noise.score_eps, rng)))

    if noise.fp_rate > 0.0:
        for _ in range(rng.poisson(noise.fp_rate)):
            r = rng.uniform(1.0, max_range)
            ang = rng.uniform(-math.pi, math.pi)
            center = np.array([r * math.cos(ang), r * math.sin(ang),
                               rng.uniform(0.2, 0.6)])
            size = rng.uniform(0.3, 1.0, 3)
            cls_idx = int(rng.integers(0, len(CLASSES)))
            out.append(Detection(
                OrientedBox3(center, size, rng.uniform(-math.pi, math.pi)),
                _scores_for(cls_idx, max(noise.score_eps, 0.2), rng)))
    return out


# ---------------------------------------------------------------------------
# Cluster-based detection
# ---------------------------------------------------------------------------

def dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Density-based clustering; returns per-point cluster ids (-1 = noise).

    Deterministic: clusters are numbered by the order their first core
    point appears.
    """
    n = len(points)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    tree = cKDTree(points)
    neighbors = tree.query_ball_point(points, eps)
    core = np.array([len(nb) >= min_pts for nb in neighbors])
    cluster = 0
    visited = np.zeros(n, dtype=bool)
    for i in range(n):
        if visited[i] or not core[i]:
            continue
        stack = [i]
        visited[i] = True
        labels[i] = cluster
        while stack:
            j = stack.pop()
            if not core[j]:
                continue
            for k in neighbors[j]:
                if labels[k] == -1:
                    labels[k] = cluster
                if not visited[k]:
                    visited[k] = True
                    stack.append(k)
        cluster += 1
    return labels


def pca_box(points: np.ndarray) -> OrientedBox3:
    """Oriented box from the xy principal axis; covers every input point.

    Yaw is defined modulo pi (principal directions have no sign) and is
    reported in [-pi/2, pi/2). Degenerate (collinear) clusters fall back to
    an axis-aligned box.
    """
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        raise ValueError("need at least 3 points")
    xy = pts[:, :2]
    cov = np.cov(xy.T)
    if not np.all(np.isfinite(cov)) or np.linalg.matrix_rank(cov, tol=1e-12) < 2:
        yaw = 0.0
    else:
        evals, evecs = np.linalg.eigh(cov)
        major = evecs[:, int(np.argmax(evals))]
        yaw = math.atan2(major[1], major[0])
    if yaw >= math.pi / 2.0:
        yaw -= math.pi
    elif yaw < -math.pi / 2.0:
        yaw += math.pi

    c, s = math.cos(yaw), math.sin(yaw)
    u = xy @ np.array([c, s])
    v = xy @ np.array([-s, c])
    z = pts[:, 2]
    lo = np.array([u.min(), v.min(), z.min()])
    hi = np.array([u.max(), v.max(), z.max()])
    size = np.maximum(hi - lo, 1e-4)
    mid = (lo + hi) / 2.0
    center = np.array([c * mid[0] - s * mid[1], s * mid[0] + c * mid[1], mid[2]])
    return OrientedBox3(center, size, yaw)


def _size_scores(size: np.ndarray, models: ModelDb, tau: float = 0.3) -> np.ndarray:
    """Softmax class scores from nominal-size similarity."""
    dists = []
    for cls in CLASSES:
        nominal = models.get(cls, 0).nominal_size
        dists.append(float(np.abs(size - nominal).sum()))
    logits = -np.array(dists) / tau
    e = np.exp(logits - logits.max())
    return e / e.sum()


def detect_cluster(cloud_filtered: PointCloud, models: ModelDb,
                   eps: float = 0.3, min_pts: int = 10,
                   min_cluster_points: int = 30) -> list[Detection]:
    """DBSCAN the (ground-free) cloud and box each cluster via PCA.

    Class scores come from nominal-size similarity; PCA yaw is only defined
    modulo pi and is resolved downstream by geometry verification.
    """
    pts = cloud_filtered.points
    if len(pts) == 0:
        return []
    labels = dbscan(pts, eps, min_pts)
    out = []
    for cid in range(labels.max() + 1 if len(labels) else 0):
        cluster = pts[labels == cid]
        if len(cluster) < min_cluster_points:
            continue
        box = pca_box(cluster)
        out.append(Detection(box, _size_scores(box.size, models)))
    return out
