"""Global and local planning: A* over the merged costmap and a dynamic-window
local planner for a differential-drive robot."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .costmap import INSCRIBED, Grid2
from .geometry import YawPose, wrap_angle


@dataclass(frozen=True)
class RobotSpec:
    radius: float = 0.25
    v_max: float = 0.75
    w_max: float = 1.5
    accel_v: float = 1.0     # m/s^2
    accel_w: float = 3.0     # rad/s^2

    def __post_init__(self):
        if min(self.radius, self.v_max, self.w_max,
               self.accel_v, self.accel_w) <= 0:
            raise ValueError("robot spec values must be positive")


@dataclass(frozen=True)
class DwaConfig:
    horizon: float = 2.0
    rollout_dt: float = 0.1
    n_v: int = 11
    n_w: int = 21
    w_heading: float = 1.0
    w_clearance: float = 0.5
    w_velocity: float = 0.3
    w_path_cost: float = 0.02
    lookahead: float = 0.8
    goal_tolerance: float = 0.25
    clearance_floor: int = 240   # soft cost below this never penalizes
    rotate_threshold: float = 1.2  # bearing error that triggers turn-in-place


@dataclass(frozen=True)
class PlanResult:
    path: np.ndarray     # (L, 2) world waypoints at cell centers
    cost: float


def astar(grid: Grid2, start_xy, goal_xy,
          cost_weight: float = 0.01) -> PlanResult | None:
    """8-connected A* from start to goal (world coordinates).

    Minimizes sum(step_length + cost_weight * cell_cost) with an octile
    heuristic; returns None when the goal is unreachable. Raises ValueError
    if either endpoint is out of the grid or on a blocked (>= inscribed)
    cell.
    """
    start = grid.world_to_cell(*start_xy)
    goal = grid.world_to_cell(*goal_xy)
    if start is None or goal is None:
        raise ValueError("start/goal outside the grid")
    if grid.cost[start] >= INSCRIBED or grid.cost[goal] >= INSCRIBED:
        raise ValueError("start/goal on a blocked cell")
    hit = _kernels.astar(grid.cost, start, goal, grid.resolution,
                         cost_weight, INSCRIBED)
    if hit is None:
        return None
    cells, total = hit
    xy = np.stack([grid.origin[0] + (cells[:, 1] + 0.5) * grid.resolution,
                   grid.origin[1] + (cells[:, 0] + 0.5) * grid.resolution],
                  axis=1)
    # Land the path on the exact goal point (at most half a cell away) so
    # followers converge on the same spot the caller asked for.
    xy[-1] = goal_xy
    return PlanResult(xy, float(total))


def nearest_free_cell(grid: Grid2, xy, max_radius: float = 0.6):
    """Closest non-blocked cell center to a world point, or None."""
    cell = grid.world_to_cell(*xy)
    if cell is not None and grid.cost[cell] < INSCRIBED:
        return xy
    r_cells = int(math.ceil(max_radius / grid.resolution))
    if cell is None:
        return None
    best = None
    for dr in range(-r_cells, r_cells + 1):
        for dc in range(-r_cells, r_cells + 1):
            r, c = cell[0] + dr, cell[1] + dc
            if not (0 <= r < grid.height and 0 <= c < grid.width):
                continue
            if grid.cost[r, c] >= INSCRIBED:
                continue
            d2 = dr * dr + dc * dc
            if best is None or d2 < best[0]:
                best = (d2, r, c)
    if best is None:
        return None
    return (grid.origin[0] + (best[2] + 0.5) * grid.resolution,
            grid.origin[1] + (best[1] + 0.5) * grid.resolution)


def simulate_drive(pose: YawPose, v: float, w: float, dt: float) -> YawPose:
    """Forward-Euler unicycle step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return YawPose(pose.x + v * math.cos(pose.yaw) * dt,
                   pose.y + v * math.sin(pose.yaw) * dt,
                   pose.z,
                   pose.yaw + w * dt)


@dataclass(frozen=True)
class DwaCommand:
    v: float
    w: float
    goal_reached: bool = False
    recovery: bool = False


def _carrot(path: np.ndarray, xy: np.ndarray, lookahead: float) -> np.ndarray:
    """Point on the path roughly `lookahead` ahead of the closest vertex."""
    d2 = ((path - xy) ** 2).sum(axis=1)
    i = int(np.argmin(d2))
    acc = 0.0
    while i + 1 < len(path):
        acc += float(np.linalg.norm(path[i + 1] - path[i]))
        i += 1
        if acc >= lookahead:
            break
    return path[i]


def dwa_step(pose: YawPose, v: float, w: float, plan: PlanResult,
             grid: Grid2, spec: RobotSpec, dt: float,
             cfg: DwaConfig = DwaConfig()) -> DwaCommand:
    """Sample the dynamic window, roll candidates out, and pick the best.

    Rollouts that hit a blocked cell before the robot could brake to a stop
    are discarded; scoring trades off heading to a lookahead point on the
    global path, clearance, forward speed, and accumulated soft cell cost.
    If nothing is admissible the command brakes and rotates toward the path.
    """
    goal = plan.path[-1]
    dist_goal = math.hypot(goal[0] - pose.x, goal[1] - pose.y)
    if dist_goal <= cfg.goal_tolerance:
        return DwaCommand(0.0, 0.0, goal_reached=True)

    carrot = _carrot(plan.path, np.array([pose.x, pose.y]), cfg.lookahead)
    bearing = math.atan2(carrot[1] - pose.y, carrot[0] - pose.x)
    bearing_err = wrap_angle(bearing - pose.yaw)
    if abs(bearing_err) > cfg.rotate_threshold:
        # Way off the path direction: brake and turn in place first.
        w_target = math.copysign(spec.w_max, bearing_err)
        w_cmd = float(np.clip(w_target, w - spec.accel_w * dt,
                              w + spec.accel_w * dt))
        return DwaCommand(max(0.0, v - spec.accel_v * dt), w_cmd)

    v_lo = max(0.0, v - spec.accel_v * dt)
    v_hi = min(spec.v_max, v + spec.accel_v * dt)
    w_lo = max(-spec.w_max, w - spec.accel_w * dt)
    w_hi = min(spec.w_max, w + spec.accel_w * dt)
    vs = np.linspace(v_lo, v_hi, cfg.n_v)
    ws = np.linspace(w_lo, w_hi, cfg.n_w)
    vv, ww = np.meshgrid(vs, ws, indexing="ij")
    vv = vv.ravel()
    ww = ww.ravel()
    n = len(vv)
    steps = max(1, int(round(cfg.horizon / cfg.rollout_dt)))

    x = np.full(n, pose.x)
    y = np.full(n, pose.y)
    th = np.full(n, pose.yaw)
    first_block = np.full(n, np.inf)
    max_cost = np.zeros(n)
    sum_cost = np.zeros(n)
    for k in range(steps):
        x = x + vv * np.cos(th) * cfg.rollout_dt
        y = y + vv * np.sin(th) * cfg.rollout_dt
        th = th + ww * cfg.rollout_dt
        cols = np.floor((x - grid.origin[0]) / grid.resolution).astype(int)
        rows = np.floor((y - grid.origin[1]) / grid.resolution).astype(int)
        inside = ((rows >= 0) & (rows < grid.height)
                  & (cols >= 0) & (cols < grid.width))
        cost_k = np.full(n, 255.0)
        cost_k[inside] = grid.cost[rows[inside], cols[inside]]
        blocked = cost_k >= INSCRIBED
        newly = blocked & ~np.isfinite(first_block)
        first_block[newly] = (k + 1) * cfg.rollout_dt
        soft = np.where(blocked, 0.0, cost_k)
        max_cost = np.maximum(max_cost, soft)
        sum_cost += soft

    stop_time = vv / spec.accel_v + 2.0 * cfg.rollout_dt
    admissible = first_block > stop_time
    if not admissible.any():
        to_carrot = math.atan2(carrot[1] - pose.y, carrot[0] - pose.x)
        err = wrap_angle(to_carrot - pose.yaw)
        return DwaCommand(max(0.0, v - spec.accel_v * dt),
                          math.copysign(spec.w_max / 2.0, err if err != 0 else 1.0),
                          recovery=True)

    heading = np.arctan2(carrot[1] - y, carrot[0] - x)
    err = np.abs(np.mod(heading - th + np.pi, 2 * np.pi) - np.pi)
    heading_score = (np.pi - err) / np.pi
    # Clearance reacts to nearly-blocked cells only; mild soft cost (the
    # affordance rims A* already weighed) must not freeze the robot.
    floor = float(cfg.clearance_floor)
    clearance = 1.0 - np.clip(max_cost - floor, 0.0, None) / (252.0 - floor)
    # Reward tracking a goal-aware target speed: full speed far out, braking
    # on final approach so the robot does not orbit the goal.
    v_des = min(spec.v_max, dist_goal)
    velocity = 1.0 - np.abs(vv - v_des) / spec.v_max
    mean_cost = sum_cost / (steps * 252.0)
    score = (cfg.w_heading * heading_score + cfg.w_clearance * clearance
             + cfg.w_velocity * velocity - cfg.w_path_cost * mean_cost)
    score[~admissible] = -np.inf
    best = int(np.argmax(score))
    return DwaCommand(float(vv[best]), float(ww[best]))
