"""Geometry verification: robust point-to-plane ICP against CAD models.

The optimization is 4-DoF (yaw about z plus full translation) with a Cauchy
robust loss, solved by Gauss-Newton over a three-level coarse-to-fine
schedule. Orientation ambiguity from the detector is handled by scoring
four quarter-turn yaw candidates before refinement; the fit residual seeds
the detection's existence probability and rejects bad detections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .detect import Detection
from .geometry import OrientedBox3, PointCloud, YawPose, rot_z, wrap_angle
from .scene import CadModel, ModelDb


class IcpError(RuntimeError):
    """Raised when registration cannot proceed (too few points, no
    correspondences within the gate, or a non-finite update)."""


@dataclass(frozen=True)
class IcpConfig:
    levels: tuple[int, ...] = (4, 2, 1)                # scan subsample strides
    corr_max_dist: tuple[float, ...] = (0.5, 0.25, 0.1)  # per-level gates
    max_iters: int = 20
    cauchy_scale: float = 0.05
    e_min: float = 0.01
    e_max: float = 0.10
    min_points: int = 10
    min_correspondences: int = 6
    crop_inflation: float = 1.2
    max_scan_points: int = 600   # crops larger than this are strided down
    conv_trans: float = 1e-5     # accepted-step size below which we stop
    conv_rot: float = 1e-5

    def __post_init__(self):
        if self.e_min >= self.e_max:
            raise ValueError("e_min must be below e_max")
        if len(self.levels) != len(self.corr_max_dist):
            raise ValueError("one gate per level required")


@dataclass(frozen=True)
class IcpResult:
    pose: YawPose
    residual: float
    iterations: int


@dataclass(frozen=True)
class VerifiedDetection:
    refined_pose: YawPose     # object-in-sensor, yaw-only rotation
    box: OrientedBox3         # CAD nominal size at the refined pose
    e_icp: float
    p_exist: float
    detection: Detection
    model_key: str

    @property
    def label(self) -> str:
        return self.detection.label


_tree_cache: dict[str, cKDTree] = {}


def _model_tree(model: CadModel) -> cKDTree:
    tree = _tree_cache.get(model.key)
    if tree is None:
        tree = cKDTree(model.samples.points)
        _tree_cache[model.key] = tree
    return tree


def residual_vector(phi: float, t: np.ndarray, x: np.ndarray,
                    normals: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Point-to-plane residuals r_i = n_i . (Rz(phi) x_i + t - p_i)."""
    moved = x @ rot_z(phi).T + t
    return np.einsum("ij,ij->i", normals, moved - p)


def residual_jacobian(phi: float, x: np.ndarray,
                      normals: np.ndarray) -> np.ndarray:
    """Analytic Jacobian of residual_vector w.r.t. (phi, tx, ty, tz)."""
    c, s = math.cos(phi), math.sin(phi)
    # d(Rz(phi) x)/dphi
    dx = np.stack([-s * x[:, 0] - c * x[:, 1],
                   c * x[:, 0] - s * x[:, 1],
                   np.zeros(len(x))], axis=1)
    j_phi = np.einsum("ij,ij->i", normals, dx)
    return np.column_stack([j_phi, normals])


def _cauchy_weights(r: np.ndarray, scale: float) -> np.ndarray:
    return 1.0 / (1.0 + (r / scale) ** 2)


def _cauchy_cost(r: np.ndarray, scale: float) -> float:
    return float(0.5 * scale ** 2 * np.log1p((r / scale) ** 2).sum())


def _to_object_frame(scan: np.ndarray, pose: YawPose) -> np.ndarray:
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    dx = scan[:, 0] - pose.x
    dy = scan[:, 1] - pose.y
    return np.stack([c * dx + s * dy, -s * dx + c * dy,
                     scan[:, 2] - pose.z], axis=1)


def _correspond(tree: cKDTree, scan: np.ndarray, pose: YawPose, gate: float):
    """Gated nearest-neighbor pairs, found in the (static) object frame."""
    local = _to_object_frame(scan, pose)
    dist, idx = tree.query(local, distance_upper_bound=gate)
    valid = np.isfinite(dist)
    return valid, idx[valid]


def icp_refine(model: CadModel, scan_pts, init: YawPose,
               cfg: IcpConfig = IcpConfig(),
               cost_trace: list | None = None) -> IcpResult:
    """Refine an object pose against its CAD model.

    Gauss-Newton on the Cauchy-robustified point-to-plane error, iterated
    coarse-to-fine; each accepted step is required not to increase the
    robust cost (with step halving as the fallback). The returned residual
    is the weighted mean absolute point-to-plane distance at the finest
    level. `cost_trace`, when given, collects (cost_before, cost_after)
    per accepted step.
    """
    scan = scan_pts.points if isinstance(scan_pts, PointCloud) else np.asarray(scan_pts)
    if len(scan) < cfg.min_points:
        raise IcpError(f"too few scan points ({len(scan)})")
    if not (np.isfinite([init.x, init.y, init.z, init.yaw]).all()):
        raise IcpError("non-finite initial pose")
    if len(scan) > cfg.max_scan_points:
        scan = scan[::int(math.ceil(len(scan) / cfg.max_scan_points))]
    tree = _model_tree(model)
    samples = model.samples.points
    normals = model.samples.normals

    pose = init
    iterations = 0
    for stride, gate in zip(cfg.levels, cfg.corr_max_dist):
        pts = scan[::stride]
        if len(pts) < cfg.min_points:
            pts = scan
        for _ in range(cfg.max_iters):
            valid, idx = _correspond(tree, pts, pose, gate)
            if idx.size < cfg.min_correspondences:
                raise IcpError("no correspondences within gate")
            rot = rot_z(pose.yaw)
            t_vec = np.array([pose.x, pose.y, pose.z])
            x = samples[idx] @ rot.T + t_vec     # model points, sensor frame
            n_hat = normals[idx] @ rot.T
            p = pts[valid]
            r = residual_vector(0.0, np.zeros(3), x, n_hat, p)
            if np.abs(r).mean() < 1e-9:
                break
            w = _cauchy_weights(r, cfg.cauchy_scale)
            jac = residual_jacobian(0.0, x, n_hat)
            jw = jac * w[:, None]
            lhs = jac.T @ jw + 1e-10 * np.eye(4)
            rhs = -(jw.T @ r)
            try:
                delta = np.linalg.solve(lhs, rhs)
            except np.linalg.LinAlgError as exc:
                raise IcpError(f"singular normal equations: {exc}") from exc
            if not np.all(np.isfinite(delta)):
                raise IcpError("non-finite update")

            cost0 = _cauchy_cost(r, cfg.cauchy_scale)
            scale = 1.0
            accepted = None
            for _ in range(8):
                phi = scale * delta[0]
                t = scale * delta[1:]
                r_new = residual_vector(phi, t, x, n_hat, p)
                cost_new = _cauchy_cost(r_new, cfg.cauchy_scale)
                if cost_new <= cost0:
                    accepted = (phi, t)
                    if cost_trace is not None:
                        cost_trace.append((cost0, cost_new))
                    break
                scale /= 2.0
            if accepted is None:
                break
            phi, t = accepted
            # Post-compose the increment: T <- dT o T.
            new_t = rot_z(phi) @ np.array([pose.x, pose.y, pose.z]) + t
            pose = YawPose(new_t[0], new_t[1], new_t[2],
                           wrap_angle(pose.yaw + phi))
            iterations += 1
            if abs(phi) < cfg.conv_rot and np.linalg.norm(t) < cfg.conv_trans:
                break

    fine_gate = cfg.corr_max_dist[-1]
    valid, idx = _correspond(tree, scan, pose, fine_gate)
    if idx.size < cfg.min_correspondences:
        raise IcpError("no correspondences within gate at finest level")
    rot = rot_z(pose.yaw)
    x = samples[idx] @ rot.T + np.array([pose.x, pose.y, pose.z])
    n_hat = normals[idx] @ rot.T
    r = residual_vector(0.0, np.zeros(3), x, n_hat, scan[valid])
    w = _cauchy_weights(r, cfg.cauchy_scale)
    e_icp = float((w * np.abs(r)).sum() / w.sum())
    return IcpResult(pose, e_icp, iterations)


def best_orientation_init(model: CadModel, scan_pts, pose0: YawPose,
                          cfg: IcpConfig = IcpConfig()) -> YawPose:
    """Pick the lowest-error yaw among four quarter-turn candidates.

    The score per candidate is the mean nearest-model-point distance with
    distances clamped at the coarsest gate, which stays meaningful when a
    wrong candidate leaves many points unmatched.
    """
    scan = scan_pts.points if isinstance(scan_pts, PointCloud) else np.asarray(scan_pts)
    if len(scan) < cfg.min_points:
        raise IcpError(f"too few scan points ({len(scan)})")
    if len(scan) > cfg.max_scan_points:
        scan = scan[::int(math.ceil(len(scan) / cfg.max_scan_points))]
    tree = _model_tree(model)
    gate = cfg.corr_max_dist[0]
    pts = scan[::cfg.levels[0]]
    if len(pts) < cfg.min_points:
        pts = scan
    best = None
    for k in range(4):
        cand = YawPose(pose0.x, pose0.y, pose0.z,
                       wrap_angle(pose0.yaw + k * math.pi / 2.0))
        dist, _ = tree.query(_to_object_frame(pts, cand),
                             distance_upper_bound=gate)
        score = float(np.minimum(dist, gate).mean())
        if best is None or score < best[0]:
            best = (score, cand)
    return best[1]


def existence_probability(e_icp: float, cfg: IcpConfig) -> float:
    """Map a fit residual to an existence probability in [0.5, 1]."""
    p = 1.0 - 0.5 * (e_icp - cfg.e_min) / (cfg.e_max - cfg.e_min)
    return float(np.clip(p, 0.5, 1.0))


def verify(detection: Detection, cloud: PointCloud, models: ModelDb,
           cfg: IcpConfig = IcpConfig(), log=None) -> VerifiedDetection | None:
    """Refine one detection against its CAD model; None if rejected.

    The cloud is cropped to the detection box inflated by 20%, the best of
    four yaw candidates seeds ICP, and fits with residual above e_max are
    rejected. Registration failures count as rejections.
    """
    model = models.best_match(detection.label, detection.box.size)
    crop = detection.box.inflated(cfg.crop_inflation)
    pts = cloud.points[crop.contains(cloud.points)]
    try:
        if len(pts) < cfg.min_points:
            raise IcpError(f"crop too sparse ({len(pts)} points)")
        init_t = detection.box.center - rot_z(detection.box.yaw) @ model.aabb_center
        init = YawPose(init_t[0], init_t[1], init_t[2], detection.box.yaw)
        init = best_orientation_init(model, pts, init, cfg)
        result = icp_refine(model, pts, init, cfg)
    except IcpError as exc:
        if log is not None:
            log(f"verification failed: {exc}")
        return None
    if result.residual > cfg.e_max:
        if log is not None:
            log(f"rejected: e_icp={result.residual:.3f} > {cfg.e_max}")
        return None
    return VerifiedDetection(
        refined_pose=result.pose,
        box=model.box_at(result.pose),
        e_icp=result.residual,
        p_exist=existence_probability(result.residual, cfg),
        detection=detection,
        model_key=model.key,
    )
