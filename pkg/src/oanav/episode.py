"""End-to-end episode runner and experiment batches.

An episode loops at the sensor rate: scan -> accumulate -> filter -> detect
-> verify -> track -> costmap -> plan -> drive. Four planner variants are
compared: two semantics-free baselines (conservative and opportunistic),
the affordance planner on ground-truth perception, and the full pipeline.
Risk time is always accounted against the ground-truth affordance regions
so every variant is judged identically.
"""

from __future__ import annotations

import dataclasses
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import costmap as cm
from . import detect as det
from . import icp as icp_mod
from . import lidar as ld
from . import planner as pl
from .config import EpisodeConfig
from .geometry import Pose3, YawPose, rot_z
from .scene import ModelDb, Scene, build_raycast_geometry
from .tracking import Tracker


@dataclass(frozen=True)
class PlannerVariant:
    name: str
    inflation_mult: float
    use_object_layers: bool
    perception: str  # none | oracle-exact | full-pipeline


VARIANTS = {
    "Con": PlannerVariant("Con", 3.0, False, "none"),
    "Oppo": PlannerVariant("Oppo", 1.0, False, "none"),
    "GT-Perc": PlannerVariant("GT-Perc", 1.0, True, "oracle-exact"),
    "Ours": PlannerVariant("Ours", 1.0, True, "full-pipeline"),
}

METRICS_HEADER = ("scene,variant,seed,success,t_g,t_r,d_g,"
                  "waypoints_reached,n_waypoints,collided,timed_out")
TRAJECTORY_HEADER = "t,x,y,yaw,v,w,in_risk"


@dataclass
class EpisodeMetrics:
    scene: str
    variant: str
    seed: int
    success: bool
    t_g: float
    t_r: float
    d_g: float
    waypoints_reached: int
    n_waypoints: int
    waypoint_times: list[float] = field(default_factory=list)
    collided: bool = False
    timed_out: bool = False

    def csv_row(self) -> str:
        return (f"{self.scene},{self.variant},{self.seed},"
                f"{int(self.success)},{self.t_g:.2f},{self.t_r:.2f},"
                f"{self.d_g:.3f},{self.waypoints_reached},{self.n_waypoints},"
                f"{int(self.collided)},{int(self.timed_out)}")


class _FullPerception:
    """Scan/detect/verify/track pipeline state for the 'Ours' variant."""

    def __init__(self, scene: Scene, models: ModelDb, cfg: EpisodeConfig,
                 seed: int):
        self.scene = scene
        self.models = models
        self.cfg = cfg
        self.geometry = build_raycast_geometry(scene, models)
        self.rng_lidar = np.random.default_rng([seed, 11])
        self.rng_detect = np.random.default_rng([seed, 13])
        self.rng_ground = np.random.default_rng([seed, 17])
        self.window: deque[ld.Keyframe] = deque(maxlen=cfg.accumulation_window)
        self.ground_plane = None
        self.tracker = Tracker(cfg.tracker)
        self.detection_rows: list[str] = []
        self.track_rows: list[str] = []

    def scan_frame(self, tick: int, sensor_pose: Pose3) -> None:
        cloud = ld.scan(self.scene, sensor_pose, self.cfg.lidar,
                        self.rng_lidar, geometry=self.geometry)
        self.window.append(ld.Keyframe(sensor_pose, cloud, tick))

    def keyframe(self, tick: int, sensor_pose: Pose3):
        """Run detection/verification/tracking; returns world-frame obstacle
        points from the filtered accumulated cloud."""
        cfg = self.cfg
        acc = ld.accumulate(list(self.window))
        if self.ground_plane is None:
            self.ground_plane = ld.detect_ground(
                acc, inlier_dist=cfg.ground_inlier_dist, rng=self.rng_ground)
        filtered = ld.filter_cloud(acc, self.ground_plane,
                                   cfg.ceiling_height, cfg.ground_inlier_dist)
        detections = det.detect_oracle(
            self.scene, sensor_pose, filtered, cfg.detector_noise,
            self.rng_detect, self.models, cfg.det_min_points,
            cfg.det_max_range)
        vdets = []
        for d in detections:
            self.detection_rows.append(d.log_row(tick))
            v = icp_mod.verify(d, filtered, self.models, cfg.icp)
            if v is not None:
                vdets.append(v)
        self.tracker.step(vdets, sensor_pose, tick,
                          cfg.keyframe_every * cfg.dt)
        for track in self.tracker.tracks.values():
            self.track_rows.append(track.log_row(tick))
        return sensor_pose.apply(filtered.points)[:, :2]


def _sensor_pose(pose: YawPose, height: float) -> Pose3:
    return Pose3(rot_z(pose.yaw), np.array([pose.x, pose.y, height]))


def _build_merged(background, layers, robot_radius, mult, soft_shell):
    merged = cm.merge(background, layers)
    r_eff = robot_radius * mult
    return cm.inflate(merged, r_eff, r_eff + soft_shell)


def run_episode(scene: Scene, variant: PlannerVariant, cfg: EpisodeConfig,
                seed: int, scene_name: str = "scene",
                out_dir: Path | None = None,
                models: ModelDb | None = None) -> EpisodeMetrics:
    """Simulate one navigation episode; deterministic given (seed, config).

    Success means every waypoint is reached within its timeout and without
    touching ground-truth geometry; risk time accrues whenever the robot
    center sits inside any ground-truth affordance region.
    """
    models = models or ModelDb()
    for obj in scene.objects:
        models.get(obj.cls, obj.model_seed)
    specs = cfg.affordance_specs
    risk_at = cm.make_risk_checker(scene, models, specs)

    gt_grid = cm.background_map(scene, cfg.resolution, include_objects=True,
                                models=models)
    gt_dist = ndimage.distance_transform_edt(gt_grid.cost < cm.LETHAL,
                                             sampling=cfg.resolution)

    walls_only = cm.background_map(scene, cfg.resolution,
                                   include_objects=False, models=models)
    static_layers: list[cm.Grid2] = []
    if variant.perception == "oracle-exact":
        # Ground-truth detections feed the affordance layers directly.
        for obj in scene.objects:
            box = scene.object_box(obj, models)
            static_layers.append(cm.object_layer(
                box, specs[obj.cls], walls_only, cfg.affordance_margin))

    perception = None
    obstacle_grid = None
    if variant.perception == "full-pipeline":
        perception = _FullPerception(scene, models, cfg, seed)
        obstacle_grid = walls_only.copy()
        merged = _build_merged(obstacle_grid, [], cfg.robot.radius,
                               variant.inflation_mult, cfg.soft_shell)
    elif variant.perception == "oracle-exact":
        merged = _build_merged(gt_grid, static_layers, cfg.robot.radius,
                               variant.inflation_mult, cfg.soft_shell)
    else:
        merged = _build_merged(gt_grid, [], cfg.robot.radius,
                               variant.inflation_mult, cfg.soft_shell)

    pose = scene.robot_start
    v = w = 0.0
    plan = None
    plan_age = math.inf
    map_changed = False
    wp_index = 0
    wp_clock = 0.0
    t = 0.0
    t_r = 0.0
    d_g = 0.0
    waypoint_times: list[float] = []
    collided = False
    timed_out = False
    success = False
    static_map = variant.perception != "full-pipeline"
    trajectory_rows: list[str] = []
    max_ticks = int(len(scene.waypoints) * cfg.waypoint_timeout / cfg.dt) + 1

    for tick in range(max_ticks):
        sensor_pose = _sensor_pose(pose, cfg.sensor_height)
        if perception is not None:
            perception.scan_frame(tick, sensor_pose)
            if (tick + 1) % cfg.keyframe_every == 0:
                obstacle_xy = perception.keyframe(tick, sensor_pose)
                cm.mark_points(obstacle_grid, obstacle_xy)
                layers = []
                for track in perception.tracker.snapshot():
                    spec = specs[track.label]
                    layers.append(cm.object_layer(track.box, spec,
                                                  obstacle_grid,
                                                  cfg.affordance_margin))
                merged = _build_merged(obstacle_grid, layers,
                                       cfg.robot.radius,
                                       variant.inflation_mult, cfg.soft_shell)
                map_changed = True

        goal = scene.waypoints[wp_index]
        if plan is None or map_changed or plan_age >= cfg.replan_period:
            start_xy = pl.nearest_free_cell(merged, (pose.x, pose.y))
            plan_new = None
            if start_xy is not None:
                try:
                    plan_new = pl.astar(merged, start_xy, tuple(goal),
                                        cfg.astar_cost_weight)
                except ValueError:
                    plan_new = None
            plan = plan_new
            plan_age = 0.0
            map_changed = False
            if plan is None and static_map:
                # The map never changes for this variant; no route will ever
                # appear. Record the failure and stop.
                timed_out = True
                break

        if plan is not None:
            cmd = pl.dwa_step(pose, v, w, plan, merged, cfg.robot,
                              cfg.dt, cfg.dwa)
            v, w = cmd.v, cmd.w
        else:
            v = max(0.0, v - cfg.robot.accel_v * cfg.dt)
            w = cfg.robot.w_max / 2.0

        new_pose = pl.simulate_drive(pose, v, w, cfg.dt)
        d_g += math.hypot(new_pose.x - pose.x, new_pose.y - pose.y)
        pose = new_pose
        t = (tick + 1) * cfg.dt
        plan_age += cfg.dt
        wp_clock += cfg.dt

        in_risk = risk_at(pose.x, pose.y)
        if in_risk:
            t_r += cfg.dt
        trajectory_rows.append(
            f"{t:.1f},{pose.x:.4f},{pose.y:.4f},{pose.yaw:.4f},"
            f"{v:.3f},{w:.3f},{int(in_risk)}")

        cell = gt_grid.world_to_cell(pose.x, pose.y)
        if cell is None or gt_dist[cell] < cfg.robot.radius:
            collided = True
            break

        if math.hypot(pose.x - goal[0], pose.y - goal[1]) <= cfg.dwa.goal_tolerance:
            waypoint_times.append(t)
            wp_index += 1
            wp_clock = 0.0
            plan = None
            if wp_index >= len(scene.waypoints):
                success = True
                break
        if wp_clock >= cfg.waypoint_timeout:
            timed_out = True
            break
    else:
        timed_out = True

    metrics = EpisodeMetrics(
        scene=scene_name, variant=variant.name, seed=seed,
        success=success and not collided, t_g=t, t_r=t_r, d_g=d_g,
        waypoints_reached=wp_index, n_waypoints=len(scene.waypoints),
        waypoint_times=waypoint_times, collided=collided,
        timed_out=timed_out)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "trajectory.csv").write_text(
            TRAJECTORY_HEADER + "\n" + "\n".join(trajectory_rows) + "\n")
        (out_dir / "metrics.csv").write_text(
            METRICS_HEADER + "\n" + metrics.csv_row() + "\n")
        cm.write_pgm(out_dir / "costmap_final.pgm", merged)
        if perception is not None:
            (out_dir / "detections.csv").write_text(
                det.DETECTION_LOG_HEADER + "\n"
                + "\n".join(perception.detection_rows) + "\n")
            (out_dir / "tracks.csv").write_text(
                "frame,id,class,x,y,yaw,p_exist,s_c\n"
                + "\n".join(perception.track_rows) + "\n")
    return metrics


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------

@dataclass
class VariantSummary:
    variant: str
    n_success: int
    n_total: int
    t_g_sum: float
    t_r_sum: float
    d_g_sum: float

    @property
    def t_g_mean(self) -> float:
        return self.t_g_sum / self.n_success if self.n_success else math.nan

    @property
    def t_r_mean(self) -> float:
        return self.t_r_sum / self.n_success if self.n_success else math.nan

    @property
    def d_g_mean(self) -> float:
        return self.d_g_sum / self.n_success if self.n_success else math.nan


SUMMARY_HEADER = ("variant,success,total,t_g_sum,t_g_mean,t_r_sum,t_r_mean,"
                  "d_g_sum,d_g_mean")


def summarize(metrics: list[EpisodeMetrics]) -> list[VariantSummary]:
    """Per-variant sums and means over the successful runs only."""
    order = []
    by_variant: dict[str, list[EpisodeMetrics]] = {}
    for m in metrics:
        if m.variant not in by_variant:
            order.append(m.variant)
            by_variant[m.variant] = []
        by_variant[m.variant].append(m)
    out = []
    for name in order:
        runs = by_variant[name]
        good = [m for m in runs if m.success]
        out.append(VariantSummary(
            variant=name, n_success=len(good), n_total=len(runs),
            t_g_sum=sum(m.t_g for m in good),
            t_r_sum=sum(m.t_r for m in good),
            d_g_sum=sum(m.d_g for m in good)))
    return out


def summary_rows(summaries: list[VariantSummary]) -> list[str]:
    rows = []
    for s in summaries:
        rows.append(f"{s.variant},{s.n_success},{s.n_total},"
                    f"{s.t_g_sum:.2f},{s.t_g_mean:.2f},"
                    f"{s.t_r_sum:.2f},{s.t_r_mean:.2f},"
                    f"{s.d_g_sum:.3f},{s.d_g_mean:.3f}")
    return rows


def _run_one(args):
    scene_path, variant_name, cfg_dict, seed, out_root = args
    scene = Scene.load(scene_path)
    cfg = EpisodeConfig.from_dict(cfg_dict)
    variant = VARIANTS[variant_name]
    name = Path(scene_path).stem
    out_dir = None
    if out_root is not None:
        out_dir = Path(out_root) / f"{name}_{variant_name}"
    return run_episode(scene, variant, cfg, seed, scene_name=name,
                       out_dir=out_dir)


def run_batch(scene_paths: list, variant_names: list[str],
              cfg: EpisodeConfig, out_dir, master_seed: int = 0,
              jobs: int = 1, keep_logs: bool = False,
              progress=None) -> list[EpisodeMetrics]:
    """Run every (scene, variant) pair and write metrics/summary artifacts.

    Episode seeds derive from (master_seed, scene index); results are
    ordered deterministically regardless of parallelism.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / "resolved_config.json")
    tasks = []
    for i, scene_path in enumerate(scene_paths):
        for vname in variant_names:
            tasks.append((str(scene_path), vname, cfg.to_dict(),
                          master_seed * 100003 + i,
                          str(out_dir) if keep_logs else None))

    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = []
        for k, task in enumerate(tasks):
            results.append(_run_one(task))
            if progress is not None:
                progress(k + 1, len(tasks), results[-1])

    lines = [METRICS_HEADER] + [m.csv_row() for m in results]
    (out_dir / "metrics.csv").write_text("\n".join(lines) + "\n")
    summaries = summarize(results)
    (out_dir / "summary.csv").write_text(
        "\n".join([SUMMARY_HEADER] + summary_rows(summaries)) + "\n")
    _plot_summary(summaries, out_dir / "summary.svg")
    return results


def _plot_summary(summaries: list[VariantSummary], path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "oanav"

    names = [s.variant for s in summaries]
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.2))
    for ax, attr, title in ((axes[0], "t_g_mean", "goal time mean [s]"),
                            (axes[1], "t_r_mean", "risk time mean [s]"),
                            (axes[2], "d_g_mean", "distance mean [m]")):
        vals = [getattr(s, attr) for s in summaries]
        ax.bar(names, vals, color="#4878a8")
        ax.set_title(title, fontsize=10)
        ax.tick_params(labelsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
