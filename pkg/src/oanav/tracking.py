"""Multi-object tracking: GIoU data association, per-object Kalman filters
(constant-velocity position, random-walk yaw and scale), semantic and
existence fusion, occlusion-aware miss handling, and track lifecycle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import (OrientedBox3, Pose3, box_giou3d, ray_aabb_hit,
                       wrap_angle)
from .icp import VerifiedDetection
from .scene import CLASSES

TRACK_LOG_HEADER = "frame,id,class,x,y,yaw,p_exist,s_c"

# State layout: [x, y, z, yaw, sx, sy, sz, vx, vy, vz]
_NX = 10
_NZ = 7  # measured: position, yaw, scale


@dataclass
class TrackerConfig:
    giou_min: float = -0.5
    m_max: int = 5                  # consecutive misses before removal
    duplicate_giou: float = 0.7     # same-class spawn suppression
    valid_range: float = 8.0
    occlusion_fraction: float = 2.0 / 3.0
    # Process noise rates (per second) and measurement standard deviations.
    q_pos: float = 1e-4
    q_yaw: float = 1e-4
    q_scale: float = 1e-6
    q_vel: float = 1e-3
    r_pos: float = 0.03
    r_yaw: float = 0.05
    r_scale: float = 0.005
    p0_pos: float = 0.1
    p0_yaw: float = 0.2
    p0_scale: float = 0.05
    p0_vel: float = 0.5


@dataclass
class ObjectTrack:
    """One tracked object: Kalman state plus fused semantics and existence."""

    track_id: int
    state: np.ndarray            # (10,)
    cov: np.ndarray              # (10, 10)
    class_hist: np.ndarray       # running sum of per-frame class scores
    n_frames: int                # k, frames fused into class_hist
    p_exist_sum: float
    p_exist_count: int
    misses: int
    cad_key: str
    frame_of_birth: int

    @property
    def class_dist(self) -> np.ndarray:
        return self.class_hist / self.n_frames

    @property
    def label(self) -> str:
        return CLASSES[int(np.argmax(self.class_dist))]

    @property
    def confidence(self) -> float:
        return float(self.class_dist.max())

    @property
    def p_exist(self) -> float:
        return self.p_exist_sum / self.p_exist_count

    @property
    def box(self) -> OrientedBox3:
        return OrientedBox3(self.state[:3], np.maximum(self.state[4:7], 1e-3),
                            self.state[3])

    def log_row(self, frame: int) -> str:
        return (f"{frame},{self.track_id},{self.label},"
                f"{self.state[0]:.4f},{self.state[1]:.4f},{self.state[3]:.4f},"
                f"{self.p_exist:.4f},{self.confidence:.4f}")

    def copy(self) -> "ObjectTrack":
        return ObjectTrack(self.track_id, self.state.copy(), self.cov.copy(),
                           self.class_hist.copy(), self.n_frames,
                           self.p_exist_sum, self.p_exist_count, self.misses,
                           self.cad_key, self.frame_of_birth)


def predict(track: ObjectTrack, dt: float, cfg: TrackerConfig) -> None:
    """Constant-velocity prediction in place; yaw and scale random-walk."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    f = np.eye(_NX)
    f[0, 7] = f[1, 8] = f[2, 9] = dt
    q = np.diag([cfg.q_pos] * 3 + [cfg.q_yaw] + [cfg.q_scale] * 3
                + [cfg.q_vel] * 3) * dt
    track.state = f @ track.state
    track.state[3] = wrap_angle(track.state[3])
    track.cov = f @ track.cov @ f.T + q


def update(track: ObjectTrack, measurement: np.ndarray, p_exist_frame: float,
           class_scores: np.ndarray, cfg: TrackerConfig) -> None:
    """Kalman measurement update plus semantic / existence fusion.

    The class distribution is the running mean of the per-frame score
    vectors; existence probability is the running mean of per-frame values.
    The yaw innovation is wrapped to the nearest representative.
    """
    h = np.zeros((_NZ, _NX))
    h[:_NZ, :_NZ] = np.eye(_NZ)
    r = np.diag([cfg.r_pos ** 2] * 3 + [cfg.r_yaw ** 2]
                + [cfg.r_scale ** 2] * 3)
    innov = measurement - h @ track.state
    innov[3] = wrap_angle(innov[3])
    s = h @ track.cov @ h.T + r
    k = track.cov @ h.T @ np.linalg.inv(s)
    track.state = track.state + k @ innov
    track.state[3] = wrap_angle(track.state[3])
    track.cov = (np.eye(_NX) - k @ h) @ track.cov
    track.cov = (track.cov + track.cov.T) / 2.0

    track.class_hist = track.class_hist + class_scores
    track.n_frames += 1
    track.p_exist_sum += p_exist_frame
    track.p_exist_count += 1
    track.misses = 0


def associate(track_boxes: list[OrientedBox3], det_boxes: list[OrientedBox3],
              giou_min: float):
    """Optimal GIoU assignment (Hungarian), thresholded at giou_min.

    Returns (matches, unmatched_tracks, unmatched_dets) with matches a list
    of (track_index, det_index, giou).
    """
    if not track_boxes or not det_boxes:
        return [], list(range(len(track_boxes))), list(range(len(det_boxes)))
    giou = np.array([[box_giou3d(tb, db) for db in det_boxes]
                     for tb in track_boxes])
    rows, cols = linear_sum_assignment(-giou)
    matches = []
    matched_t, matched_d = set(), set()
    for r_i, c_i in zip(rows, cols):
        if giou[r_i, c_i] >= giou_min:
            matches.append((int(r_i), int(c_i), float(giou[r_i, c_i])))
            matched_t.add(int(r_i))
            matched_d.add(int(c_i))
    unmatched_t = [i for i in range(len(track_boxes)) if i not in matched_t]
    unmatched_d = [j for j in range(len(det_boxes)) if j not in matched_d]
    return matches, unmatched_t, unmatched_d


def occlusion_check(track: ObjectTrack, other_tracks: list[ObjectTrack],
                    sensor_pose: Pose3,
                    fraction: float = 2.0 / 3.0) -> bool:
    """Ray-sample the track's box from the sensor; occluded when enough rays
    hit another track's AABB strictly before reaching the target."""
    if not other_tracks:
        return False
    origin = sensor_pose.translation
    box = track.box
    targets = np.vstack([box.center[None, :], box.corners()])
    aabbs = [o.box.aabb() for o in other_tracks]
    blocked = 0
    for q in targets:
        to_q = q - origin
        dist = float(np.linalg.norm(to_q))
        if dist < 1e-9:
            continue
        d = to_q / dist
        for lo_hi in aabbs:
            t = ray_aabb_hit(origin, d, lo_hi[0], lo_hi[1])
            if t is not None and t < dist - 1e-6:
                blocked += 1
                break
    return blocked >= math.ceil(fraction * len(targets))


class Tracker:
    """Single-writer track map keyed by integer id; one step per keyframe."""

    def __init__(self, cfg: TrackerConfig | None = None):
        self.cfg = cfg or TrackerConfig()
        self.tracks: dict[int, ObjectTrack] = {}
        self._next_id = 0

    def snapshot(self) -> list[ObjectTrack]:
        """Immutable-by-copy view for the costmap/planning side."""
        return [t.copy() for t in self.tracks.values()]

    def _spawn(self, det: VerifiedDetection, box_w: OrientedBox3,
               frame: int) -> ObjectTrack:
        cfg = self.cfg
        state = np.zeros(_NX)
        state[:3] = box_w.center
        state[3] = box_w.yaw
        state[4:7] = box_w.size
        cov = np.diag([cfg.p0_pos ** 2] * 3 + [cfg.p0_yaw ** 2]
                      + [cfg.p0_scale ** 2] * 3 + [cfg.p0_vel ** 2] * 3)
        track = ObjectTrack(
            track_id=self._next_id, state=state, cov=cov,
            class_hist=np.array(det.detection.class_scores, dtype=float),
            n_frames=1, p_exist_sum=det.p_exist, p_exist_count=1,
            misses=0, cad_key=det.model_key, frame_of_birth=frame)
        self._next_id += 1
        self.tracks[track.track_id] = track
        return track

    def step(self, vdets: list[VerifiedDetection], sensor_pose: Pose3,
             frame: int, dt: float) -> dict:
        """Predict, associate, update, spawn, penalize, and prune.

        New tracks are born in the world frame from the sensor pose at this
        frame. Unmatched tracks in sensor range take a zero existence sample
        unless occluded by another tracked object; tracks die after m_max
        consecutive misses or when mean existence drops below 0.5.
        """
        cfg = self.cfg
        for track in self.tracks.values():
            predict(track, dt, cfg)

        yaw_s = math.atan2(sensor_pose.rotation[1, 0], sensor_pose.rotation[0, 0])
        det_boxes_w = []
        for det in vdets:
            c_w = sensor_pose.apply(det.box.center)
            det_boxes_w.append(OrientedBox3(c_w, det.box.size,
                                            det.box.yaw + yaw_s))

        ids = list(self.tracks.keys())
        origin = sensor_pose.translation
        in_range = [tid for tid in ids
                    if np.linalg.norm(self.tracks[tid].state[:3] - origin)
                    <= cfg.valid_range]
        track_boxes = [self.tracks[tid].box for tid in in_range]

        matches, unmatched_t, unmatched_d = associate(
            track_boxes, det_boxes_w, cfg.giou_min)

        events = {"matched": [], "spawned": [], "removed": [], "penalized": []}
        for t_i, d_i, _ in matches:
            track = self.tracks[in_range[t_i]]
            det = vdets[d_i]
            box_w = det_boxes_w[d_i]
            yaw_meas = track.state[3] + wrap_angle(box_w.yaw - track.state[3])
            z = np.concatenate([box_w.center, [yaw_meas], box_w.size])
            update(track, z, det.p_exist, det.detection.class_scores, cfg)
            events["matched"].append(track.track_id)

        for d_i in unmatched_d:
            box_w = det_boxes_w[d_i]
            dup = any(
                t.label == vdets[d_i].label
                and box_giou3d(t.box, box_w) > cfg.duplicate_giou
                for t in self.tracks.values())
            if dup:
                continue
            track = self._spawn(vdets[d_i], box_w, frame)
            events["spawned"].append(track.track_id)

        for t_i in unmatched_t:
            track = self.tracks[in_range[t_i]]
            others = [t for t in self.tracks.values()
                      if t.track_id != track.track_id]
            if occlusion_check(track, others, sensor_pose,
                               cfg.occlusion_fraction):
                continue
            track.p_exist_sum += 0.0
            track.p_exist_count += 1
            track.misses += 1
            events["penalized"].append(track.track_id)

        for tid in list(self.tracks.keys()):
            track = self.tracks[tid]
            if track.misses > cfg.m_max or track.p_exist < 0.5:
                del self.tracks[tid]
                events["removed"].append(tid)
        return events
